//! Command-line entry point for the speaking-style captioning workflow.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use speechstyle::model::{DecodeOptions, Strategy};
use speechstyle::workflow::{self, PrepareSplit, RunConfig, SynthConfig, DEFAULT_PREFIX_GRID};

#[derive(Parser)]
#[command(name = "speechstyle", version, about = "Speaking-style captioning toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long, short)]
    config: PathBuf,
    /// Override a config key, e.g. `--set model.mapper.prefix_length=10`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        RunConfig::load(&self.config, &self.overrides).with_context(|| format!("loading {}", self.config.display()))
    }
}

#[derive(Args)]
struct DecodeArgs {
    /// greedy, beam or sample.
    #[arg(long, default_value = "greedy")]
    strategy: String,
    #[arg(long, default_value_t = 3)]
    beam_width: usize,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long, default_value_t = 0)]
    sample_seed: u64,
    #[arg(long, default_value_t = 64)]
    max_len: usize,
}

impl DecodeArgs {
    fn options(&self) -> Result<DecodeOptions> {
        let strategy = match self.strategy.as_str() {
            "greedy" => Strategy::Greedy,
            "beam" => Strategy::Beam { width: self.beam_width },
            "sample" => Strategy::Sample {
                temperature: self.temperature,
                seed: self.sample_seed,
            },
            other => bail!("unknown decoding strategy `{other}`"),
        };
        Ok(DecodeOptions {
            strategy,
            max_len: self.max_len,
            ..DecodeOptions::default()
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with train/dev/test manifests.
    SynthData {
        /// TOML file with a `[corpus]` table and an optional `split`.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert a caption table into speaker-disjoint manifests.
    Prepare {
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "\t")]
        delimiter: String,
        /// Train, dev and test shares.
        #[arg(long, num_args = 3, value_delimiter = ',', default_values_t = [0.8, 0.1, 0.1])]
        fractions: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Speaker list files for train, dev and test; overrides fractions.
        #[arg(long, num_args = 3, value_delimiter = ',')]
        speaker_lists: Option<Vec<PathBuf>>,
    },
    /// Add LLM rephrasings of every caption that pass the similarity gate.
    Augment {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Optional run configuration supplying the `[augment]` table.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// `cmd:<program> [args]` or an HTTP URL.
        #[arg(long)]
        client: Option<String>,
        /// `exact`, `token-f1`, `cmd:...` or an HTTP URL.
        #[arg(long)]
        scorer: Option<String>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Train a model; checkpoints are written after every epoch.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, required_unless_present = "print_config")]
        out: Option<PathBuf>,
        /// Continue from the checkpoint in `--out`.
        #[arg(long)]
        resume: bool,
        /// Print the resolved configuration as JSON and exit.
        #[arg(long)]
        print_config: bool,
    },
    /// Caption every record of a manifest.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        decode: DecodeArgs,
    },
    /// Score generated captions against the manifest references.
    Evaluate {
        #[arg(long)]
        captions: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Extra scorer, `NAME=endpoint`; also read from the environment.
        #[arg(long = "scorer", value_name = "NAME=ENDPOINT")]
        scorers: Vec<String>,
    },
    /// Linear probes on style embeddings, binned caption quality.
    Probe {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Metric report supplying per-sample METEOR-lite.
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        decode: DecodeArgs,
    },
    /// Train and evaluate one model per prefix length.
    AblatePrefix {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_PREFIX_GRID)]
        lengths: Vec<usize>,
    },
}

fn delimiter_byte(s: &str) -> Result<u8> {
    let s = match s {
        "\\t" | "tab" => "\t",
        other => other,
    };
    match s.as_bytes() {
        [b] => Ok(*b),
        _ => bail!("delimiter must be a single byte, got `{s}`"),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthData { spec, out } => {
            let cfg = SynthConfig::load(&spec).with_context(|| format!("loading {}", spec.display()))?;
            let paths = workflow::synth_data(&cfg, &out)?;
            for p in paths {
                println!("{}", p.display());
            }
        }
        Command::Prepare {
            table,
            out,
            delimiter,
            fractions,
            seed,
            speaker_lists,
        } => {
            let split = match speaker_lists {
                Some(l) => PrepareSplit::SpeakerLists {
                    lists: [l[0].clone(), l[1].clone(), l[2].clone()],
                },
                None => PrepareSplit::Fractions {
                    fractions: (fractions[0], fractions[1], fractions[2]),
                    seed,
                },
            };
            for p in workflow::prepare(&table, delimiter_byte(&delimiter)?, &split, &out)? {
                println!("{}", p.display());
            }
        }
        Command::Augment {
            manifest,
            out,
            config,
            overrides,
            client,
            scorer,
            threshold,
        } => {
            let mut cfg = match config {
                Some(p) => RunConfig::load(&p, &overrides)?.augment,
                None => RunConfig::from_toml_str("", &overrides)?.augment,
            };
            if let Some(t) = threshold {
                cfg.options.threshold = t;
            }
            cfg.client = client.or(cfg.client);
            cfg.scorer = scorer.or(cfg.scorer);
            let client_spec = cfg.client.clone().context("no LLM client given (--client or augment.client)")?;
            let scorer_spec = cfg.scorer.clone().unwrap_or_else(|| "token-f1".into());
            let llm = workflow::llm_client(&client_spec)?;
            let sim = workflow::similarity_scorer(&scorer_spec)?;
            // A killed run resumes from the journal next to `--out`.
            let summary = workflow::augment(&manifest, &out, &cfg, llm.as_ref(), sim.as_ref(), None)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Train {
            config,
            out,
            resume,
            print_config,
        } => {
            let cfg = config.load()?;
            if print_config {
                println!("{}", serde_json::to_string_pretty(&cfg.to_json())?);
                return Ok(());
            }
            let out = out.context("--out is required")?;
            let o = workflow::train(&cfg, &out, resume)?;
            println!("{}", o.checkpoint.display());
        }
        Command::Generate {
            checkpoint,
            manifest,
            out,
            decode,
        } => {
            let n = workflow::generate(&checkpoint, &manifest, &decode.options()?, &out)?;
            info!("{n} captions written to {}", out.display());
        }
        Command::Evaluate {
            captions,
            manifest,
            out,
            scorers,
        } => {
            let mut registered = RunConfig::default().external_scorers()?;
            for s in scorers {
                let (k, v) = s.split_once('=').with_context(|| format!("`{s}` is not NAME=ENDPOINT"))?;
                registered.insert(k.to_string(), v.to_string());
            }
            let report = workflow::evaluate(&captions, &manifest, &registered, &out)?;
            println!("{}", serde_json::to_string_pretty(&report.corpus_scores)?);
        }
        Command::Probe {
            checkpoint,
            manifest,
            out,
            seed,
            report,
            decode,
        } => {
            let o = workflow::probe(&checkpoint, &manifest, seed, report.as_deref(), &decode.options()?, &out)?;
            println!("{}", serde_json::to_string_pretty(&o.result.per_factor_accuracy)?);
        }
        Command::AblatePrefix { config, out, lengths } => {
            let cfg = config.load()?;
            let table = workflow::ablate_prefix(&cfg, &lengths, &out)?;
            let failed = table.rows.iter().filter(|r| r.status != "ok").count();
            println!("{}", out.join("ablation.csv").display());
            if failed > 0 {
                eprintln!("{failed} of {} runs failed", table.rows.len());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
