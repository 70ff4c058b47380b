use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::AugmentOptions;
use crate::dataset::SyntheticSpec;
use crate::model::{
    AggregatorConfig, BaselineConfig, CaptionerConfig, DecodeOptions, DecoderConfig, FrontendKind, MapperConfig,
    TrainConfig,
};
use crate::{Error, Result};

/// Environment variable listing external scorers as `NAME=endpoint` pairs
/// separated by commas, e.g. `BS=http://localhost:8080/bertscore`.
pub const SCORERS_ENV: &str = "SPEECHSTYLE_SCORERS";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Speech encoder, mapping network and frozen prefix-conditioned decoder.
    Prefix,
    /// Transformer encoder-decoder trained end to end.
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub frontend: FrontendKind,
    pub input_dim: usize,
    pub input_layers: usize,
    /// `f32` or `f64`.
    pub dtype: String,
    pub aggregator: AggregatorConfig,
    pub mapper: MapperConfig,
    pub decoder: DecoderConfig,
    pub baseline: BaselineConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Prefix,
            frontend: FrontendKind::Mel,
            input_dim: 80,
            input_layers: 1,
            dtype: "f32".into(),
            aggregator: AggregatorConfig::default(),
            mapper: MapperConfig::default(),
            decoder: DecoderConfig::default(),
            baseline: BaselineConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn captioner(&self) -> CaptionerConfig {
        CaptionerConfig {
            frontend: self.frontend,
            input_dim: self.input_dim,
            input_layers: self.input_layers,
            aggregator: self.aggregator.clone(),
            mapper: self.mapper.clone(),
            decoder: self.decoder.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub options: AugmentOptions,
    /// `cmd:<program> [args]` or an `http(s)://` URL.
    pub client: Option<String>,
    /// Similarity scorer: `exact`, `token-f1`, `cmd:...` or a URL.
    pub scorer: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    /// Column name to scorer endpoint.
    pub external: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub seed: u64,
}

/// Everything a run needs, read from one TOML document.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub decode: DecodeOptions,
    pub augment: AugmentConfig,
    pub metrics: MetricsConfig,
    pub probe: ProbeConfig,
}

fn parse_value(raw: &str) -> toml::Value {
    // Anything that is not a TOML literal is taken as a bare string.
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts = key.split('.').peekable();
    let mut cur = table;
    while let Some(part) = parts.next() {
        if part.is_empty() {
            return Err(Error::Config(format!("bad override key `{key}`")));
        }
        if parts.peek().is_none() {
            cur.insert(part.to_string(), value);
            return Ok(());
        }
        let next = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
        cur = next
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{part}` in `{key}` is not a table")))?;
    }
    Ok(())
}

impl RunConfig {
    /// Parses TOML text and applies `key.path=value` overrides before
    /// validation; unknown keys are rejected either way.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            set_path(&mut table, k.trim(), parse_value(v.trim()))?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file; relative data paths are taken relative to it.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text, overrides)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.data.train, &mut cfg.data.dev, &mut cfg.data.test].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        match self.model.kind {
            ModelKind::Prefix => self.model.captioner().validate()?,
            ModelKind::Baseline => {
                self.model.baseline.validate()?;
                if self.model.frontend == FrontendKind::Fixed {
                    return Err(Error::Config("the baseline needs frame sequences".into()));
                }
            }
        }
        crate::model::parse_dtype(&self.model.dtype)?;
        if self.decode.max_len == 0 {
            return Err(Error::Config("decode.max_len must be positive".into()));
        }
        let t = self.augment.options.threshold;
        if !(-1.0..=1.0).contains(&t) {
            return Err(Error::Config(format!("augment threshold {t} outside [-1, 1]")));
        }
        Ok(())
    }

    /// Path of a data split, which must be configured and exist.
    pub fn require(&self, split: &str) -> Result<&Path> {
        let p = match split {
            "train" => &self.data.train,
            "dev" => &self.data.dev,
            "test" => &self.data.test,
            other => return Err(Error::Config(format!("unknown split `{other}`"))),
        };
        let p = p
            .as_deref()
            .ok_or_else(|| Error::Config(format!("data.{split} is not set")))?;
        if !p.exists() {
            return Err(Error::Config(format!("data.{split}: {} does not exist", p.display())));
        }
        Ok(p)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        crate::nn::hex(&Sha256::digest(self.to_json().to_string().as_bytes()))
    }

    /// External scorers from the config plus the environment variable;
    /// the environment wins on name clashes.
    pub fn external_scorers(&self) -> Result<BTreeMap<String, String>> {
        let mut out = self.metrics.external.clone();
        if let Ok(v) = std::env::var(SCORERS_ENV) {
            for item in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                let (k, e) = item
                    .split_once('=')
                    .ok_or_else(|| Error::Config(format!("{SCORERS_ENV}: `{item}` is not NAME=endpoint")))?;
                out.insert(k.trim().to_string(), e.trim().to_string());
            }
        }
        Ok(out)
    }
}

/// Synthetic corpus generation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub corpus: SyntheticSpec,
    /// Train, dev and test shares; speakers never cross splits.
    pub split: (f64, f64, f64),
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            corpus: SyntheticSpec::default(),
            split: (0.8, 0.1, 0.1),
        }
    }
}

impl SynthConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.corpus.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_reported_setup() {
        let c = RunConfig::from_toml_str("", &[]).unwrap();
        assert_eq!(c.model.mapper.prefix_length, 40);
        assert_eq!(c.model.mapper.dropout, 0.2);
        assert_eq!(c.train.batch_size, 16);
        assert_eq!(c.train.effective_epochs(), 20);
        assert_eq!((c.model.frontend, c.model.input_dim), (FrontendKind::Mel, 80));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml_str("sed = 1", &[]).is_err());
        assert!(RunConfig::from_toml_str("[model.mapper]\nprefix_lenght = 3", &[]).is_err());
        assert!(RunConfig::from_toml_str("", &["model.mapper.nope=1".into()]).is_err());
    }

    #[test]
    fn overrides_apply_and_change_the_digest() {
        let base = RunConfig::from_toml_str("seed = 3", &[]).unwrap();
        let c = RunConfig::from_toml_str(
            "seed = 3",
            &["model.mapper.prefix_length=5".into(), "data.train=x/train.jsonl".into(), "train.epochs=2".into()],
        )
        .unwrap();
        assert_eq!(c.model.mapper.prefix_length, 5);
        assert_eq!(c.data.train.as_deref(), Some(Path::new("x/train.jsonl")));
        assert_eq!(c.train.epochs, Some(2));
        assert_ne!(base.digest(), c.digest());
        assert_eq!(base.digest(), RunConfig::from_toml_str("seed = 3", &[]).unwrap().digest());
    }

    #[test]
    fn invalid_values_fail_validation() {
        assert!(RunConfig::from_toml_str("[model.mapper]\ndropout = 1.5", &[]).is_err());
        assert!(RunConfig::from_toml_str("[train]\nbatch_size = 0", &[]).is_err());
        let c = RunConfig::default();
        assert!(c.require("train").is_err());
    }
}
