//! Experiment configuration: `key = value` lines, `#` starts a comment.
//!
//! | key | value |
//! |---|---|
//! | `task` | `classification`, `segmentation` or `superpixel` |
//! | `classes` | class count (default: inferred from the dataset) |
//! | `heads` | attention heads of the encoder blocks |
//! | `widths` | comma-separated per-head channel counts |
//! | `width_divisor` | divides every width and the hidden width |
//! | `hidden` | hidden linear width (classification) |
//! | `fractions` | comma-separated pooling fraction per pooling layer |
//! | `pool_fraction` | one pooling fraction for every layer |
//! | `node_fraction` | `true` to pool a fraction of nodes instead of edges |
//! | `config` | dual-graph configuration `A`, `B` or `C` |
//! | `pool_agg` | `sum` or `mean` |
//! | `self_loops` | `true` to add dual self-loops |
//! | `attention_init` | `zeros` or `glorot` |
//! | `lr`, `epochs`, `batch`, `seed` | optimisation settings |
//! | `augment` | vertex-slid copies per training mesh |

use std::str::FromStr;

use thiserror::Error;

use crate::conv::AttentionInit;
use crate::graph::DualConfig;
use crate::models::{ArchitectureSpec, ModelError, Task};
use crate::pooling::Aggregation;
use crate::train::TrainConfig;

pub const CONFIG_KEYS: &[&str] = &[
    "task",
    "classes",
    "heads",
    "widths",
    "width_divisor",
    "hidden",
    "fractions",
    "pool_fraction",
    "node_fraction",
    "config",
    "pool_agg",
    "self_loops",
    "attention_init",
    "lr",
    "epochs",
    "batch",
    "seed",
    "augment",
];

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("unknown configuration key `{key}`{}", line.map(|l| format!(" on line {l}")).unwrap_or_default())]
    UnknownKey { key: String, line: Option<usize> },
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    Value { key: String, value: String, reason: String },
    #[error("line {0}: expected `key = value`")]
    Syntax(usize),
    #[error("{0}")]
    Model(String),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentConfig {
    pub task: Option<Task>,
    pub classes: Option<usize>,
    pub heads: Option<usize>,
    pub widths: Option<Vec<usize>>,
    pub width_divisor: Option<usize>,
    pub hidden: Option<usize>,
    pub fractions: Option<Vec<f64>>,
    pub pool_fraction: Option<f64>,
    pub node_fraction: Option<bool>,
    pub config: Option<DualConfig>,
    pub aggregation: Option<Aggregation>,
    pub self_loops: Option<bool>,
    pub attention_init: Option<AttentionInit>,
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub batch: Option<usize>,
    pub seed: Option<u64>,
    pub augment: Option<usize>,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse().map_err(|e: T::Err| ConfigError::Value {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.split(',').map(|v| parse(key, v)).collect()
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut out = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax(i + 1))?;
            out.set(key.trim(), value.trim()).map_err(|e| match e {
                ConfigError::UnknownKey { key, .. } => ConfigError::UnknownKey { key, line: Some(i + 1) },
                other => other,
            })?;
        }
        Ok(out)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "task" => self.task = Some(parse(key, value)?),
            "classes" => self.classes = Some(parse(key, value)?),
            "heads" => self.heads = Some(parse(key, value)?),
            "widths" => self.widths = Some(list(key, value)?),
            "width_divisor" => self.width_divisor = Some(parse(key, value)?),
            "hidden" => self.hidden = Some(parse(key, value)?),
            "fractions" => self.fractions = Some(list(key, value)?),
            "pool_fraction" => self.pool_fraction = Some(parse(key, value)?),
            "node_fraction" => self.node_fraction = Some(parse(key, value)?),
            "config" => self.config = Some(parse(key, value)?),
            "pool_agg" => self.aggregation = Some(parse(key, value)?),
            "self_loops" => self.self_loops = Some(parse(key, value)?),
            "attention_init" => self.attention_init = Some(parse(key, value)?),
            "lr" => self.lr = Some(parse(key, value)?),
            "epochs" => self.epochs = Some(parse(key, value)?),
            "batch" => self.batch = Some(parse(key, value)?),
            "seed" => self.seed = Some(parse(key, value)?),
            "augment" => self.augment = Some(parse(key, value)?),
            _ => return Err(ConfigError::UnknownKey { key: key.into(), line: None }),
        }
        Ok(())
    }

    pub fn task(&self) -> Task {
        self.task.unwrap_or(Task::Classification)
    }

    /// Architecture for `classes` classes (the configured count wins).
    pub fn architecture(&self, classes: usize) -> Result<ArchitectureSpec, ConfigError> {
        let classes = self.classes.unwrap_or(classes);
        let heads = self.heads.unwrap_or(3);
        let mut spec = match self.task() {
            Task::Classification => ArchitectureSpec::classification(classes, heads),
            Task::Segmentation => ArchitectureSpec::segmentation(classes, heads),
            Task::Superpixel => ArchitectureSpec::superpixel(classes, heads, 32, 0.1),
        };
        if let Some(w) = &self.widths {
            spec.widths = w.clone();
        }
        if let Some(h) = self.hidden {
            spec.hidden = h;
        }
        if let Some(d) = self.width_divisor {
            if d == 0 {
                return Err(ConfigError::Value { key: "width_divisor".into(), value: "0".into(), reason: "must be positive".into() });
            }
            spec = spec.scaled_down(d);
        }
        if let Some(f) = &self.fractions {
            spec.fractions = f.clone();
        }
        if let Some(f) = self.pool_fraction {
            spec.fractions = vec![f; spec.fractions.len()];
        }
        spec.node_fraction = self.node_fraction.unwrap_or(spec.node_fraction);
        spec.config = self.config.unwrap_or(spec.config);
        spec.aggregation = self.aggregation.unwrap_or(spec.aggregation);
        spec.self_loops = self.self_loops.unwrap_or(spec.self_loops);
        spec.attention_init = self.attention_init.unwrap_or(spec.attention_init);
        spec.validate().map_err(|e: ModelError| ConfigError::Model(e.to_string()))?;
        Ok(spec)
    }

    pub fn train_config(&self) -> Result<TrainConfig, ConfigError> {
        let base = match self.task() {
            Task::Classification => TrainConfig::classification(),
            _ => TrainConfig::segmentation(),
        };
        let cfg = TrainConfig {
            lr: self.lr.unwrap_or(base.lr),
            epochs: self.epochs.unwrap_or(base.epochs),
            batch: self.batch.unwrap_or(base.batch),
            seed: self.seed.unwrap_or(base.seed),
            augment: self.augment.unwrap_or(base.augment),
        };
        cfg.validate().map_err(|e| ConfigError::Model(e.to_string()))?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_keys() {
        let text = "task = segmentation # U-Net\nheads=2\nwidth_divisor = 8\npool_agg = mean\nconfig = B\nlr = 5e-4\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        let arch = cfg.architecture(4).unwrap();
        assert_eq!(arch.task, Task::Segmentation);
        assert_eq!(arch.widths, vec![4, 8, 16, 32]);
        assert_eq!(arch.aggregation, Aggregation::Mean);
        assert_eq!(arch.config, DualConfig::B);
        assert_eq!(cfg.train_config().unwrap().lr, 5e-4);
        assert_eq!(cfg.train_config().unwrap().batch, 16);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = ExperimentConfig::parse("heads = 1\nlearning_rate = 1\n").unwrap_err();
        assert_eq!(err, ConfigError::UnknownKey { key: "learning_rate".into(), line: Some(2) });
        assert!(err.to_string().contains("learning_rate"));
        for key in CONFIG_KEYS {
            let e = ExperimentConfig::default().set(key, "@");
            assert!(matches!(e, Err(ConfigError::Value { .. })), "{key}");
        }
    }

    #[test]
    fn pool_fraction_applies_to_every_layer() {
        let cfg = ExperimentConfig::parse("pool_fraction = 0.25").unwrap();
        assert_eq!(cfg.architecture(2).unwrap().fractions, vec![0.25, 0.25]);
        let bad = ExperimentConfig::parse("pool_fraction = 1.5").unwrap();
        assert!(bad.architecture(2).is_err());
    }
}
