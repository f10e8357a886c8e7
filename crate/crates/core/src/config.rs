//! Run configuration, stored as TOML. A bare file gives the default settings.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::cluster_ranker::L2sConfig;
use crate::error::{CorefError, Result};
use crate::features::FeatureConfig;
use crate::mention_ranker::{CostWeights, DropoutRates, RankerTrainConfig};
use crate::nn::{ModelShape, OptimizerConfig};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Word vectors in text format. Without it every token gets a fixed
    /// pseudo-random vector derived from the seed.
    pub embeddings: Option<PathBuf>,
    pub ranker_checkpoint: Option<PathBuf>,
    pub cluster_checkpoint: Option<PathBuf>,
    /// Destination for JSON-lines training logs; stdout when unset.
    pub log: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSizes {
    pub hidden1: usize,
    pub hidden2: usize,
    pub output: usize,
}

impl Default for ModelSizes {
    fn default() -> Self {
        ModelSizes {
            hidden1: 1000,
            hidden2: 500,
            output: 500,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schedule {
    pub all_pairs_epochs: usize,
    pub top_pairs_epochs: usize,
    pub ranking_epochs: usize,
    pub l2s_epochs: usize,
    pub batch_documents: usize,
    pub minibatch_states: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            all_pairs_epochs: 150,
            top_pairs_epochs: 50,
            ranking_epochs: 100,
            l2s_epochs: 20,
            batch_documents: 1,
            minibatch_states: 32,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Dropout {
    pub embedding: f64,
    pub hidden: f64,
    pub cluster_input: f64,
}

impl Default for Dropout {
    fn default() -> Self {
        Dropout {
            embedding: 0.5,
            hidden: 0.5,
            cluster_input: 0.5,
        }
    }
}

/// Either a fixed link-score threshold or `"auto"`, which picks the largest
/// threshold that keeps every gold cluster reachable on the dev set.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum PruningThreshold {
    #[default]
    Auto,
    Value(f64),
}

impl Serialize for PruningThreshold {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            PruningThreshold::Auto => s.serialize_str("auto"),
            PruningThreshold::Value(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for PruningThreshold {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = PruningThreshold;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("\"auto\" or a number")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Self::Value, E> {
                if v.is_nan() {
                    return Err(E::custom("pruning threshold is NaN"));
                }
                Ok(PruningThreshold::Value(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Self::Value, E> {
                Ok(PruningThreshold::Value(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Self::Value, E> {
                Ok(PruningThreshold::Value(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Self::Value, E> {
                v.parse().map_err(E::custom)
            }
        }
        d.deserialize_any(V)
    }
}

impl std::str::FromStr for PruningThreshold {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "auto" => Ok(PruningThreshold::Auto),
            "none" | "-inf" => Ok(PruningThreshold::Value(f64::NEG_INFINITY)),
            t => match t.parse::<f64>() {
                Ok(v) if !v.is_nan() => Ok(PruningThreshold::Value(v)),
                _ => Err(format!("expected \"auto\", \"none\" or a number, got {s:?}")),
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterFlags {
    pub easy_first: bool,
    pub l2s: bool,
    pub pretrained_init: bool,
    pub pruning_threshold: PruningThreshold,
    pub regret_normalization: bool,
}

impl Default for ClusterFlags {
    fn default() -> Self {
        ClusterFlags {
            easy_first: true,
            l2s: true,
            pretrained_init: true,
            pruning_threshold: PruningThreshold::Auto,
            regret_normalization: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuneSettings {
    /// Maximum number of penalty settings to train.
    pub budget: usize,
    /// Each trial trains for this fraction of the configured epochs.
    pub epoch_fraction: f64,
}

impl Default for TuneSettings {
    fn default() -> Self {
        TuneSettings {
            budget: 20,
            epoch_fraction: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub features: FeatureConfig,
    pub costs: CostWeights,
    pub optimizer: OptimizerConfig,
    pub model: ModelSizes,
    pub schedule: Schedule,
    pub dropout: Dropout,
    pub cluster: ClusterFlags,
    pub tune: TuneSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            paths: Paths::default(),
            features: FeatureConfig::default(),
            costs: CostWeights::english(),
            optimizer: OptimizerConfig::default(),
            model: ModelSizes::default(),
            schedule: Schedule::default(),
            dropout: Dropout::default(),
            cluster: ClusterFlags::default(),
            tune: TuneSettings::default(),
        }
    }
}

fn check_rate(field: &str, v: f64) -> Result<()> {
    if (0.0..1.0).contains(&v) {
        Ok(())
    } else {
        Err(CorefError::validation(field, format!("{v} is not in [0, 1)")))
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CorefError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CorefError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        self.costs.validate()?;
        check_rate("dropout.embedding", self.dropout.embedding)?;
        check_rate("dropout.hidden", self.dropout.hidden)?;
        check_rate("dropout.cluster_input", self.dropout.cluster_input)?;
        let m = &self.model;
        if m.hidden1 == 0 || m.hidden2 == 0 || m.output == 0 {
            return Err(CorefError::validation("model", "layer sizes must be positive"));
        }
        if self.schedule.batch_documents == 0 || self.schedule.minibatch_states == 0 {
            return Err(CorefError::validation("schedule", "batch sizes must be positive"));
        }
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0 && (0.0..1.0).contains(&o.rho) && o.epsilon > 0.0 && o.l2 >= 0.0) {
            return Err(CorefError::validation("optimizer", "learning_rate and epsilon must be positive, rho in [0, 1), l2 non-negative"));
        }
        if !(self.tune.epoch_fraction > 0.0 && self.tune.epoch_fraction <= 1.0) || self.tune.budget == 0 {
            return Err(CorefError::validation("tune", "epoch_fraction must be in (0, 1] and budget positive"));
        }
        Ok(())
    }

    pub fn model_shape(&self, pair_input: usize, anaphoricity_input: usize) -> ModelShape {
        ModelShape {
            pair_input,
            anaphoricity_input,
            hidden1: self.model.hidden1,
            hidden2: self.model.hidden2,
            output: self.model.output,
        }
    }

    pub fn ranker_train_config(&self) -> RankerTrainConfig {
        RankerTrainConfig {
            all_pairs_epochs: self.schedule.all_pairs_epochs,
            top_pairs_epochs: self.schedule.top_pairs_epochs,
            ranking_epochs: self.schedule.ranking_epochs,
            cost_weights: self.costs,
            optimizer: self.optimizer,
            dropout: DropoutRates {
                embedding: self.dropout.embedding,
                hidden: self.dropout.hidden,
            },
            batch_documents: self.schedule.batch_documents,
            seed: self.seed,
        }
    }

    pub fn l2s_config(&self) -> L2sConfig {
        L2sConfig {
            epochs: self.schedule.l2s_epochs,
            optimizer: self.optimizer,
            input_dropout: self.dropout.cluster_input,
            minibatch_states: self.schedule.minibatch_states,
            learning_to_search: self.cluster.l2s,
            regret_normalization: self.cluster.regret_normalization,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RunConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.schedule.all_pairs_epochs, 150);
        assert_eq!(cfg.schedule.top_pairs_epochs, 50);
        assert_eq!(cfg.cluster.pruning_threshold, PruningThreshold::Auto);
    }

    #[test]
    fn thresholds_parse() {
        let cfg = RunConfig::from_toml_str("[cluster]\npruning_threshold = -1.5\n").unwrap();
        assert_eq!(cfg.cluster.pruning_threshold, PruningThreshold::Value(-1.5));
        let cfg = RunConfig::from_toml_str("[cluster]\npruning_threshold = -inf\n").unwrap();
        assert_eq!(cfg.cluster.pruning_threshold, PruningThreshold::Value(f64::NEG_INFINITY));
        let cfg = RunConfig::from_toml_str("[cluster]\npruning_threshold = 2\n").unwrap();
        assert_eq!(cfg.cluster.pruning_threshold, PruningThreshold::Value(2.0));
        assert!(RunConfig::from_toml_str("[cluster]\npruning_threshold = \"often\"\n").is_err());
        assert_eq!("none".parse::<PruningThreshold>(), Ok(PruningThreshold::Value(f64::NEG_INFINITY)));
    }

    #[test]
    fn round_trip_and_rejections() {
        let mut cfg = RunConfig::default();
        cfg.seed = 7;
        cfg.paths.train = Some("a/train.jsonl".into());
        cfg.cluster.pruning_threshold = PruningThreshold::Value(f64::NEG_INFINITY);
        cfg.costs.false_new = 0.3;
        let back = RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
        assert!(RunConfig::from_toml_str("bogus = 1\n").is_err());
        assert!(RunConfig::from_toml_str("[dropout]\nhidden = 1.0\n").is_err());
        assert!(RunConfig::from_toml_str("[model]\nhidden1 = 0\n").is_err());
    }
}
