use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::config::{AugmentConfig, ModelKind, RunConfig, SynthConfig};
use crate::analysis::{bin_by_correctness, extract_embeddings, train_probe, CorrectnessBins, ProbeResult};
use crate::augment::{
    augment_corpus, journal_path_for, ExactMatchScorer, LlmClient, SimilarityScorer, TokenF1Scorer, TransportClient,
    TransportSimilarity,
};
use crate::dataset::{
    generate_synthetic, load_manifest, load_promptspeech_table, save_manifest, split_by_speaker_lists,
    split_manifest, write_synthetic, Manifest,
};
use crate::frontend::load_features;
use crate::metrics::{evaluate_corpus, EvalPair, ExternalScorer, MetricReport, TransportScorer, METEOR};
use crate::model::{
    build_examples, load_checkpoint, parse_dtype, pretrain_decoder, train_from, BaselineModel, CaptionRecord,
    DecodeOptions, Example, PrefixCaptioner, TrainConfig, TrainState, Trainable, Vocabulary, BASELINE_KIND,
    CAPTIONER_KIND,
};
use crate::transport::JsonTransport;
use crate::{Error, Result};

pub const DEFAULT_PREFIX_GRID: [usize; 6] = [1, 2, 5, 10, 40, 60];

const CHECKPOINT: &str = "model.safetensors";
const TRAIN_LOG: &str = "train_log.json";

fn ensure_dir(dir: &Path) -> Result<()> {
    if !dir.as_os_str().is_empty() {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    ensure_dir(path.parent().unwrap_or(Path::new("")))?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// `<path>.meta.json`, holding the configuration behind a JSONL artifact.
fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Rewrites relative speech references so they still resolve once the
/// manifest is saved into `out_dir`.
fn relocate(mut m: Manifest, out_dir: &Path) -> Result<Manifest> {
    let from = std::path::absolute(&m.base_dir)?;
    let to = std::path::absolute(out_dir)?;
    if from != to {
        for r in &mut m.records {
            if Path::new(&r.speech_ref).is_relative() {
                r.speech_ref = from.join(&r.speech_ref).to_string_lossy().into_owned();
            }
        }
    }
    Ok(m.with_base_dir(out_dir))
}

fn save_splits(parts: [&Manifest; 3], out_dir: &Path) -> Result<[PathBuf; 3]> {
    let names = ["train.jsonl", "dev.jsonl", "test.jsonl"];
    let mut out = names.map(|n| out_dir.join(n));
    for ((m, name), path) in parts.iter().zip(names).zip(out.iter_mut()) {
        save_manifest(m, path)?;
        info!("{name}: {} records, {} speakers", m.len(), m.speakers().len());
    }
    Ok(out)
}

/// Generates a synthetic corpus into `out_dir`: feature files, the full
/// manifest, speaker-disjoint train/dev/test manifests and `synth.json`.
pub fn synth_data(cfg: &SynthConfig, out_dir: &Path) -> Result<[PathBuf; 3]> {
    let corpus = generate_synthetic(&cfg.corpus)?;
    ensure_dir(out_dir)?;
    write_synthetic(&corpus, out_dir, "all.jsonl")?;
    let m = corpus.manifest.with_base_dir(out_dir);
    let (train, dev, test) = split_manifest(&m, cfg.split, cfg.corpus.seed)?;
    write_json(&out_dir.join("synth.json"), cfg)?;
    save_splits([&train, &dev, &test], out_dir)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PrepareSplit {
    /// Seeded speaker-disjoint split by record shares.
    Fractions { fractions: (f64, f64, f64), seed: u64 },
    /// Files listing one speaker id per line for train, dev and test.
    SpeakerLists { lists: [PathBuf; 3] },
}

fn read_speaker_list(path: &Path) -> Result<HashSet<String>> {
    Ok(fs::read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

/// Converts a caption table into train/dev/test manifests in `out_dir`.
pub fn prepare(table: &Path, delimiter: u8, split: &PrepareSplit, out_dir: &Path) -> Result<[PathBuf; 3]> {
    let m = relocate(load_promptspeech_table(table, delimiter)?, out_dir)?;
    let (train, dev, test) = match split {
        PrepareSplit::Fractions { fractions, seed } => split_manifest(&m, *fractions, *seed)?,
        PrepareSplit::SpeakerLists { lists } => {
            let sets = [
                read_speaker_list(&lists[0])?,
                read_speaker_list(&lists[1])?,
                read_speaker_list(&lists[2])?,
            ];
            split_by_speaker_lists(&m, [&sets[0], &sets[1], &sets[2]])?
        }
    };
    ensure_dir(out_dir)?;
    write_json(
        &out_dir.join("prepare.json"),
        &json!({"table": table, "delimiter": (delimiter as char).to_string(), "split": split}),
    )?;
    save_splits([&train, &dev, &test], out_dir)
}

/// `cmd:...` or a URL.
pub fn llm_client(spec: &str) -> Result<Box<dyn LlmClient>> {
    Ok(Box::new(TransportClient::new(JsonTransport::parse(spec)?)))
}

/// `exact`, `token-f1`, `cmd:...` or a URL.
pub fn similarity_scorer(spec: &str) -> Result<Box<dyn SimilarityScorer>> {
    Ok(match spec {
        "exact" => Box::new(ExactMatchScorer),
        "token-f1" => Box::new(TokenF1Scorer),
        other => Box::new(TransportSimilarity::new(JsonTransport::parse(other)?)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentSummary {
    pub records: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub failed: Vec<String>,
    pub replayed: usize,
    pub journal: PathBuf,
}

/// Augments the manifest at `input` and writes the result to `output`. The
/// journal next to `output` makes an interrupted run resumable.
pub fn augment(
    input: &Path,
    output: &Path,
    cfg: &AugmentConfig,
    client: &dyn LlmClient,
    scorer: &dyn SimilarityScorer,
    cancel: Option<Arc<AtomicBool>>,
) -> Result<AugmentSummary> {
    let m = load_manifest(input)?;
    let journal = journal_path_for(output);
    ensure_dir(output.parent().unwrap_or(Path::new("")))?;
    let outcome = augment_corpus(&m, client, scorer, &cfg.options, Some(&journal), cancel)?;
    let out_dir = output.parent().unwrap_or(Path::new("."));
    let augmented = relocate(outcome.manifest, out_dir)?;
    save_manifest(&augmented, output)?;
    let summary = AugmentSummary {
        records: augmented.len(),
        accepted: outcome.accepted,
        rejected: outcome.rejected,
        failed: outcome.failed,
        replayed: outcome.replayed,
        journal,
    };
    write_json(
        &sidecar(output),
        &json!({"input": input, "augment": cfg, "summary": summary}),
    )?;
    Ok(summary)
}

/// A checkpoint of either model family.
pub enum TrainedModel {
    Prefix(PrefixCaptioner),
    Baseline(BaselineModel),
}

impl TrainedModel {
    /// Loads a checkpoint and returns the model, its training state and the
    /// stored run configuration (null when absent).
    pub fn load(path: &Path) -> Result<(Self, Option<TrainState>, Value)> {
        let ckpt = load_checkpoint(path)?;
        let model = match ckpt.kind.as_str() {
            CAPTIONER_KIND => TrainedModel::Prefix(PrefixCaptioner::from_checkpoint(&ckpt)?),
            BASELINE_KIND => TrainedModel::Baseline(BaselineModel::from_checkpoint(&ckpt)?),
            other => return Err(Error::Checkpoint(format!("unknown model kind `{other}`"))),
        };
        let run = ckpt.config.get("run").cloned().unwrap_or(Value::Null);
        Ok((model, ckpt.state, run))
    }

    pub fn vocab(&self) -> &Vocabulary {
        match self {
            TrainedModel::Prefix(m) => m.vocab(),
            TrainedModel::Baseline(m) => m.vocab(),
        }
    }

    pub fn caption(&self, input: &crate::SpeechInput, opts: &DecodeOptions) -> Result<CaptionRecord> {
        match self {
            TrainedModel::Prefix(m) => m.caption(input, opts),
            TrainedModel::Baseline(m) => m.baseline_decode(input, opts),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutputs {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub state: TrainState,
}

fn run_json(cfg: &RunConfig) -> Value {
    json!({"config": cfg.to_json(), "digest": cfg.digest()})
}

fn fit<M: Trainable>(
    model: &M,
    train_set: &[Example],
    dev_set: &[Example],
    cfg: &TrainConfig,
    state: TrainState,
    save: impl Fn(&M, &TrainState) -> Result<()>,
) -> Result<TrainState> {
    train_from(model, train_set, dev_set, cfg, state, |s| save(model, s))
}

fn fresh_state<M: Trainable>(model: &M, cfg: &TrainConfig) -> Result<TrainState> {
    Ok(TrainState {
        frozen_digests: model.frozen_digests()?,
        seed: cfg.seed,
        ..Default::default()
    })
}

/// Trains the configured model into `out_dir`, saving `model.safetensors`
/// and `train_log.json` after every epoch. With `resume`, an existing
/// checkpoint in `out_dir` is continued from its last completed epoch.
pub fn train(cfg: &RunConfig, out_dir: &Path, resume: bool) -> Result<TrainOutputs> {
    cfg.validate()?;
    let train_path = cfg.require("train")?;
    let dev_path = match cfg.data.dev {
        Some(_) => Some(cfg.require("dev")?),
        None => None,
    };
    let train_m = load_manifest(train_path)?;
    let dev_m = dev_path.map(load_manifest).transpose()?;
    let dtype = parse_dtype(&cfg.model.dtype)?;
    ensure_dir(out_dir)?;
    let ckpt_path = out_dir.join(CHECKPOINT);
    let log_path = out_dir.join(TRAIN_LOG);
    let run = run_json(cfg);

    let previous = if resume && ckpt_path.exists() {
        let (model, state, stored) = TrainedModel::load(&ckpt_path)?;
        let state = state.ok_or_else(|| Error::Checkpoint("checkpoint has no training state".into()))?;
        if stored.get("digest") != run.get("digest") {
            warn!("resuming with a configuration that differs from the checkpoint's");
        }
        info!("resuming after epoch {}", state.epoch);
        Some((model, state))
    } else {
        None
    };

    let write_log = |state: &TrainState| write_json(&log_path, &json!({"run": run, "state": state}));
    let vocab = match &previous {
        Some((m, _)) => m.vocab().clone(),
        None => Vocabulary::build(train_m.records.iter().map(|r| r.caption.as_str())),
    };
    let train_ex = build_examples(&train_m, &vocab)?;
    let dev_ex = match &dev_m {
        Some(m) => build_examples(m, &vocab)?,
        None => Vec::new(),
    };

    let state = match (cfg.model.kind, previous) {
        (ModelKind::Prefix, prev) => {
            let (model, state) = match prev {
                Some((TrainedModel::Prefix(m), s)) => (m, s),
                Some(_) => return Err(Error::Checkpoint("checkpoint holds a baseline model".into())),
                None => {
                    let model = PrefixCaptioner::new(&cfg.model.captioner(), vocab, dtype, cfg.seed)?;
                    let dcfg = &cfg.model.decoder;
                    if dcfg.pretrain_epochs > 0 {
                        let targets: Vec<Vec<u32>> = train_ex.iter().map(|e| e.tokens.clone()).collect();
                        let lm = TrainConfig {
                            epochs: Some(dcfg.pretrain_epochs),
                            lr: dcfg.pretrain_lr,
                            max_steps: None,
                            ..cfg.train.clone()
                        };
                        let s = pretrain_decoder(model.decoder(), &targets, &lm)?;
                        info!("decoder pretraining loss {:.4}", s.train_losses.last().copied().unwrap_or(f64::NAN));
                    }
                    let state = fresh_state(&model, &cfg.train)?;
                    (model, state)
                }
            };
            fit(&model, &train_ex, &dev_ex, &cfg.train, state, |m, s| {
                m.save(&ckpt_path, Some(s), Some(&run))?;
                write_log(s)
            })?
        }
        (ModelKind::Baseline, prev) => {
            let (model, state) = match prev {
                Some((TrainedModel::Baseline(m), s)) => (m, s),
                Some(_) => return Err(Error::Checkpoint("checkpoint holds a prefix model".into())),
                None => {
                    let model = BaselineModel::new(
                        &cfg.model.baseline,
                        vocab,
                        cfg.model.input_dim,
                        cfg.model.input_layers,
                        dtype,
                        cfg.seed,
                    )?;
                    let state = fresh_state(&model, &cfg.train)?;
                    (model, state)
                }
            };
            fit(&model, &train_ex, &dev_ex, &cfg.train, state, |m, s| {
                m.save(&ckpt_path, Some(s), Some(&run))?;
                write_log(s)
            })?
        }
    };
    write_log(&state)?;
    Ok(TrainOutputs {
        checkpoint: ckpt_path,
        log: log_path,
        state,
    })
}

/// `(id, caption)` for every record, in manifest order.
pub fn caption_manifest(model: &TrainedModel, m: &Manifest, opts: &DecodeOptions) -> Result<Vec<(String, String)>> {
    m.records
        .iter()
        .map(|r| {
            let input = load_features(r, &m.base_dir)?;
            Ok((r.id.clone(), model.caption(&input, opts)?.text))
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct CaptionLine {
    id: String,
    caption: String,
}

/// Writes one `{"id", "caption"}` line per record of `manifest` and a
/// `.meta.json` sidecar with the checkpoint's run configuration and the
/// decoding options.
pub fn generate(checkpoint: &Path, manifest: &Path, opts: &DecodeOptions, out: &Path) -> Result<usize> {
    let (model, _, run) = TrainedModel::load(checkpoint)?;
    let m = load_manifest(manifest)?;
    let captions = caption_manifest(&model, &m, opts)?;
    ensure_dir(out.parent().unwrap_or(Path::new("")))?;
    let mut w = std::io::BufWriter::new(fs::File::create(out)?);
    for (id, caption) in &captions {
        serde_json::to_writer(&mut w, &CaptionLine {
            id: id.clone(),
            caption: caption.clone(),
        })?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    write_json(
        &sidecar(out),
        &json!({"checkpoint": checkpoint, "manifest": manifest, "decode": opts, "run": run}),
    )?;
    Ok(captions.len())
}

pub fn read_captions(path: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(fs::File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let c: CaptionLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push((c.id, c.caption));
    }
    Ok(out)
}

/// Scores captions against every manifest caption that shares the sample's
/// speech reference.
pub fn score_captions(
    captions: &[(String, String)],
    m: &Manifest,
    scorers: &BTreeMap<String, String>,
) -> Result<MetricReport> {
    let mut by_speech: HashMap<&str, Vec<&str>> = HashMap::new();
    for r in &m.records {
        by_speech.entry(r.speech_ref.as_str()).or_default().push(r.caption.as_str());
    }
    let speech: HashMap<&str, &str> = m.records.iter().map(|r| (r.id.as_str(), r.speech_ref.as_str())).collect();
    let pairs = captions
        .iter()
        .map(|(id, c)| {
            let s = speech
                .get(id.as_str())
                .ok_or_else(|| Error::Misaligned(format!("caption for unknown record `{id}`")))?;
            EvalPair::from_text(id.clone(), c, &by_speech[s])
        })
        .collect::<Result<Vec<_>>>()?;
    let external = scorers
        .iter()
        .map(|(name, spec)| Ok(TransportScorer::new(name.clone(), JsonTransport::parse(spec)?)))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&dyn ExternalScorer> = external.iter().map(|s| s as &dyn ExternalScorer).collect();
    evaluate_corpus(&pairs, &refs)
}

pub fn evaluate(
    captions: &Path,
    manifest: &Path,
    scorers: &BTreeMap<String, String>,
    out: &Path,
) -> Result<MetricReport> {
    let report = score_captions(&read_captions(captions)?, &load_manifest(manifest)?, scorers)?;
    write_json(out, &report)?;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct ProbeOutputs {
    pub result: ProbeResult,
    pub bins: CorrectnessBins,
    pub dir: PathBuf,
}

/// Probes the style embeddings of a prefix checkpoint on `manifest` and
/// bins the held-out samples by correctly predicted factors. Per-sample
/// METEOR-lite comes from `report` when given, otherwise the held-out
/// samples are captioned with `opts` and scored.
pub fn probe(
    checkpoint: &Path,
    manifest: &Path,
    seed: u64,
    report: Option<&Path>,
    opts: &DecodeOptions,
    out_dir: &Path,
) -> Result<ProbeOutputs> {
    let (model, _, run) = TrainedModel::load(checkpoint)?;
    let TrainedModel::Prefix(captioner) = &model else {
        return Err(Error::Precondition("probing needs a prefix model's style embeddings".into()));
    };
    let m = load_manifest(manifest)?;
    let set = extract_embeddings(captioner, &m)?;
    let result = train_probe(&set, seed)?;
    let metric = match report {
        Some(p) => {
            let r: MetricReport = serde_json::from_str(&fs::read_to_string(p)?)?;
            r.column(METEOR)
        }
        None => {
            let held: HashSet<&str> = result.predictions.iter().map(|p| p.sample_id.as_str()).collect();
            let mut sub = m.clone();
            sub.records.retain(|r| held.contains(r.id.as_str()));
            let captions = caption_manifest(&model, &sub, opts)?;
            score_captions(&captions, &m, &BTreeMap::new())?.column(METEOR)
        }
    };
    let bins = bin_by_correctness(&result.predictions, &metric)?;
    ensure_dir(out_dir)?;
    let meta = json!({"checkpoint": checkpoint, "manifest": manifest, "seed": seed, "run": run});
    write_json(&out_dir.join("probe.json"), &json!({"meta": meta, "result": result}))?;
    write_json(&out_dir.join("bins.json"), &json!({"meta": meta, "metric": METEOR, "bins": bins}))?;
    bins.write_csv(&out_dir.join("bins.csv"))?;
    Ok(ProbeOutputs {
        result,
        bins,
        dir: out_dir.to_path_buf(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub prefix_length: usize,
    pub config_digest: String,
    pub config: Value,
    /// `ok` or `failed`.
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub scores: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub lengths: Vec<usize>,
    pub eval_split: String,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let metrics: Vec<&String> = self
            .rows
            .iter()
            .flat_map(|r| r.scores.keys())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["prefix_length".to_string(), "status".to_string()];
        header.extend(metrics.iter().map(|m| m.to_string()));
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.prefix_length.to_string(), r.status.clone()];
            rec.extend(metrics.iter().map(|m| r.scores.get(*m).map_or(String::new(), |v| format!("{v:.6}"))));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Trains and evaluates one prefix model per length. A failed run is
/// recorded in its row and the remaining lengths still run.
pub fn ablate_prefix(cfg: &RunConfig, lengths: &[usize], out_dir: &Path) -> Result<AblationTable> {
    if lengths.is_empty() || lengths.contains(&0) {
        return Err(Error::Config(format!("prefix lengths {lengths:?} must be non-empty and all >= 1")));
    }
    if cfg.model.kind != ModelKind::Prefix {
        return Err(Error::Config("the prefix ablation needs model.kind = prefix".into()));
    }
    let split = if cfg.data.test.is_some() { "test" } else { "dev" };
    let eval_path = cfg.require(split)?.to_path_buf();
    cfg.require("train")?;
    let scorers = cfg.external_scorers()?;
    let eval_m = load_manifest(&eval_path)?;
    ensure_dir(out_dir)?;

    let mut rows = Vec::with_capacity(lengths.len());
    for &k in lengths {
        let mut run = cfg.clone();
        run.model.mapper.prefix_length = k;
        let mut row = AblationRow {
            prefix_length: k,
            config_digest: run.digest(),
            config: run.to_json(),
            status: "ok".into(),
            error: None,
            scores: BTreeMap::new(),
        };
        let result = (|| -> Result<BTreeMap<String, f64>> {
            let out = train(&run, &out_dir.join(format!("k{k}")), false)?;
            let (model, _, _) = TrainedModel::load(&out.checkpoint)?;
            let captions = caption_manifest(&model, &eval_m, &run.decode)?;
            let report = score_captions(&captions, &eval_m, &scorers)?;
            write_json(&out_dir.join(format!("k{k}")).join("report.json"), &report)?;
            Ok(report.corpus_scores)
        })();
        match result {
            Ok(scores) => row.scores = scores,
            Err(e) => {
                warn!("prefix length {k} failed: {e}");
                row.status = "failed".into();
                row.error = Some(e.to_string());
            }
        }
        info!("prefix length {k}: {}", row.status);
        rows.push(row);
    }
    let table = AblationTable {
        lengths: lengths.to_vec(),
        eval_split: split.into(),
        rows,
    };
    write_json(&out_dir.join("ablation.json"), &table)?;
    table.write_csv(&out_dir.join("ablation.csv"))?;
    Ok(table)
}
