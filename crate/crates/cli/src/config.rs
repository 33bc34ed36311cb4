//! Run configuration: a TOML file whose keys every command-line flag can
//! override. The fully resolved config is embedded in each artifact.

use std::path::{Path, PathBuf};

use clap::Args;
use lobforge::{
    backtest::StrategyConfig,
    embedding::{EmbedConfig, FeatureSet, VolumeScaling},
    models::{ArchKind, Model},
    sampling::{Aggregation, Anchor, Representation, SampleSet, SampleSpec, TargetKind, DEFAULT_TRAIN_SAMPLES},
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error("invalid value for {key}: {reason}")]
    Invalid { key: &'static str, reason: String },
}

fn invalid(key: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key, reason: reason.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    /// Min-max within each snapshot side.
    Domain,
    /// Min-max over the training part of the tape.
    Global,
    /// Z-score over the training part of the tape.
    Zscore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSection {
    /// `Nw` (sliding window of N snapshots) or `Ns` (N-second buckets).
    pub aggregation: String,
    /// Frames per sample for interval aggregation; `Nw` sets it to N.
    pub frames: usize,
    pub horizon_ms: i64,
    pub target: TargetKind,
    pub anchor: Anchor,
    pub repr: Representation,
    pub features: u8,
    pub scaling: Scaling,
    pub quantize_255: bool,
    /// Leading share of samples (by time) used for training.
    pub train_fraction: f64,
    pub max_train_samples: usize,
}

impl Default for SampleSection {
    fn default() -> Self {
        SampleSection {
            aggregation: "30w".into(),
            frames: 30,
            horizon_ms: 1_000,
            target: TargetKind::Delta,
            anchor: Anchor::Last,
            repr: Representation::Stacked,
            features: 4,
            scaling: Scaling::Domain,
            quantize_255: true,
            train_fraction: 0.8,
            max_train_samples: DEFAULT_TRAIN_SAMPLES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub arch: String,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection { arch: "SimpleCNN".into(), epochs: 50, batch_size: 32, lr: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub symbol: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub from_ms: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub to_ms: Option<i64>,
    /// Worker threads; 0 uses every core. Outputs do not depend on it.
    pub threads: usize,
    pub sample: SampleSection,
    pub train: TrainSection,
    pub strategy: StrategyConfig,
}

/// Flags shared by every subcommand; each overrides its config key.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML run config, or an artifact (provenance JSON, sample set,
    /// checkpoint) whose embedded config is reused.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub symbol: Option<String>,
    #[arg(long, global = true)]
    pub from_ms: Option<i64>,
    #[arg(long, global = true)]
    pub to_ms: Option<i64>,
    /// `Nw` for a sliding window of N snapshots, `Ns` for N-second buckets.
    #[arg(long, global = true)]
    pub aggregation: Option<String>,
    #[arg(long, global = true)]
    pub horizon_ms: Option<i64>,
    #[arg(long, global = true, value_parser = ["delta", "returns"])]
    pub target: Option<String>,
    #[arg(long, global = true, value_parser = ["stacked", "merged"])]
    pub repr: Option<String>,
    #[arg(long, global = true)]
    pub features: Option<u8>,
    #[arg(long, global = true, value_enum)]
    pub scaling: Option<Scaling>,
    #[arg(long, global = true)]
    pub arch: Option<String>,
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

impl RunConfig {
    /// Reads the config file (if any) and applies the flags on top.
    pub fn resolve(o: &Overrides) -> Result<RunConfig, ConfigError> {
        let mut cfg = match &o.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = o.seed {
            cfg.seed = v;
        }
        if let Some(v) = &o.symbol {
            cfg.symbol = Some(v.clone());
        }
        if let Some(v) = o.from_ms {
            cfg.from_ms = Some(v);
        }
        if let Some(v) = o.to_ms {
            cfg.to_ms = Some(v);
        }
        if let Some(v) = &o.aggregation {
            cfg.sample.aggregation = v.clone();
        }
        if let Some(v) = o.horizon_ms {
            cfg.sample.horizon_ms = v;
        }
        if let Some(v) = &o.target {
            cfg.sample.target = if v == "returns" { TargetKind::Returns } else { TargetKind::Delta };
        }
        if let Some(v) = &o.repr {
            cfg.sample.repr = if v == "merged" { Representation::Merged } else { Representation::Stacked };
        }
        if let Some(v) = o.features {
            cfg.sample.features = v;
        }
        if let Some(v) = o.scaling {
            cfg.sample.scaling = v;
        }
        if let Some(v) = &o.arch {
            cfg.train.arch = v.clone();
        }
        if let Some(v) = o.threads {
            cfg.threads = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a TOML config, or the `config` embedded in a provenance JSON,
    /// sample set or checkpoint.
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let bytes = std::fs::read(path).map_err(|source| ConfigError::Read { path: path.to_owned(), source })?;
        let parse_err = |reason: String| ConfigError::Parse { path: path.to_owned(), reason };
        let embedded = |prov: Option<serde_json::Value>| {
            prov.and_then(|p| p.get("config").cloned())
                .ok_or_else(|| parse_err("artifact carries no embedded config".into()))
        };
        let value = match bytes.get(..4) {
            Some(b"LOBS") => embedded(SampleSet::read_from(&bytes[..]).map_err(|e| parse_err(e.to_string()))?.provenance)?,
            Some(b"LOBM") => embedded(Model::from_bytes(&bytes).map_err(|e| parse_err(e.to_string()))?.provenance)?,
            _ if path.extension().is_some_and(|e| e == "json") => {
                let v: serde_json::Value = serde_json::from_slice(&bytes).map_err(|e| parse_err(e.to_string()))?;
                v.get("config").cloned().unwrap_or(v)
            }
            _ => {
                let text = String::from_utf8(bytes).map_err(|e| parse_err(e.to_string()))?;
                return toml::from_str(&text).map_err(|e| parse_err(e.to_string()));
            }
        };
        serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.aggregation()?;
        self.feature_set()?;
        self.arch()?;
        let s = &self.sample;
        if !(s.train_fraction > 0.0 && s.train_fraction < 1.0) {
            return Err(invalid("sample.train_fraction", format!("{} is not in (0, 1)", s.train_fraction)));
        }
        if s.max_train_samples == 0 {
            return Err(invalid("sample.max_train_samples", "must be at least 1"));
        }
        if self.train.epochs == 0 || self.train.batch_size == 0 {
            return Err(invalid("train", "epochs and batch_size must be at least 1"));
        }
        if !(self.train.lr > 0.0) {
            return Err(invalid("train.lr", format!("{} must be positive", self.train.lr)));
        }
        if let (Some(a), Some(b)) = (self.from_ms, self.to_ms) {
            if a > b {
                return Err(invalid("from_ms", format!("{a} is after to_ms {b}")));
            }
        }
        self.strategy.validate().map_err(|e| invalid("strategy", e.to_string()))
    }

    /// Aggregation and frame count from the `Nw|Ns` string.
    pub fn aggregation(&self) -> Result<(Aggregation, usize), ConfigError> {
        let a = self.sample.aggregation.trim();
        let bad = || invalid("aggregation", format!("`{a}` is not of the form Nw or Ns (e.g. 30w, 1s)"));
        let (num, unit) = a.split_at(a.len().saturating_sub(1));
        let n: i64 = num.parse().map_err(|_| bad())?;
        if n <= 0 {
            return Err(bad());
        }
        match unit {
            "w" => Ok((Aggregation::Window, n as usize)),
            "s" => {
                if self.sample.frames == 0 {
                    return Err(invalid("sample.frames", "must be at least 1"));
                }
                Ok((Aggregation::Interval { ms: n * 1_000 }, self.sample.frames))
            }
            _ => Err(bad()),
        }
    }

    pub fn feature_set(&self) -> Result<FeatureSet, ConfigError> {
        match self.sample.features {
            4 => Ok(FeatureSet::F4),
            8 => Ok(FeatureSet::F8),
            n => Err(invalid("features", format!("{n} (expected 4 or 8)"))),
        }
    }

    pub fn arch(&self) -> Result<ArchKind, ConfigError> {
        ArchKind::parse(&self.train.arch).ok_or_else(|| {
            let known: Vec<&str> = ArchKind::ALL.iter().map(|k| k.name()).collect();
            invalid("arch", format!("unknown `{}` (one of {})", self.train.arch, known.join(", ")))
        })
    }

    /// Sample spec without global statistics; callers fit them on data.
    pub fn sample_spec(&self) -> Result<SampleSpec, ConfigError> {
        let (aggregation, frame_count) = self.aggregation()?;
        let volume_scaling = match self.sample.scaling {
            Scaling::Domain => VolumeScaling::MinmaxDomain,
            Scaling::Global => VolumeScaling::MinmaxGlobal,
            Scaling::Zscore => VolumeScaling::Zscore,
        };
        Ok(SampleSpec {
            aggregation,
            frame_count,
            horizon_ms: self.sample.horizon_ms,
            target_kind: self.sample.target,
            anchor: self.sample.anchor,
            representation: self.sample.repr,
            embed: EmbedConfig {
                volume_scaling,
                feature_set: self.feature_set()?,
                quantize_255: self.sample.quantize_255,
                global_stats: None,
            },
        })
    }
}
