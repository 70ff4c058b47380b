//! Speaking-style captioning with prefix-conditioned text decoders.
//!
//! A speech encoder (trainable layer weighting plus a BLSTM/attention
//! aggregator, or a projection of a fixed utterance vector) produces a style
//! embedding. A transformer mapping network turns it into prefix embeddings
//! for a frozen autoregressive decoder, which generates the caption.

pub mod analysis;
pub mod augment;
pub mod dataset;
mod error;
pub mod frontend;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod text;
pub mod transport;
pub mod workflow;

pub use error::{Error, Result};

pub use dataset::{DatasetRecord, Factor, Manifest, StyleFactors};
pub use frontend::{FeatureSequence, FixedVector, LayerWeights, LayeredFeatureSequence, SpeechInput};
pub use metrics::MetricReport;
pub use model::{CaptionRecord, PrefixCaptioner, PrefixEmbeddings, StyleEmbedding};
