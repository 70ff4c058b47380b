//! Config-driven commands behind the command-line tool. Every command reads
//! its inputs from named paths, writes to named paths, and records the
//! configuration it ran with next to (or inside) its outputs.

mod commands;
mod config;

pub use commands::{
    ablate_prefix, augment, caption_manifest, evaluate, generate, llm_client, prepare, probe, read_captions, score_captions,
    similarity_scorer, synth_data, train,
    AblationRow, AblationTable, AugmentSummary, PrepareSplit, ProbeOutputs, TrainOutputs, TrainedModel,
    DEFAULT_PREFIX_GRID,
};
pub use config::{
    AugmentConfig, DataConfig, MetricsConfig, ModelConfig, ModelKind, ProbeConfig, RunConfig, SynthConfig, SCORERS_ENV,
};
