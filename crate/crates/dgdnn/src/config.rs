//! Run configuration: defaults, overlaid by a TOML or JSON file, overlaid by
//! command-line flags. The merged result is written next to every output.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use dgdnn_core::dataset::DataConfig;
use dgdnn_core::graph::{EdgeFeatures, EntropyEstimatorConfig, GraphConfig};
use dgdnn_core::market::{DateRange, Split, SplitSpec};
use dgdnn_core::model::ModelConfig;
use dgdnn_core::training::{PenaltyMode, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{read_to_string, CliError, Result};
use crate::ingest::DEFAULT_DROP_THRESHOLD;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureDump {
    #[default]
    None,
    Csv,
    Bin,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub lookback: usize,
    pub drop_threshold: f64,
    pub features: FeatureDump,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            lookback: 19,
            drop_threshold: DEFAULT_DROP_THRESHOLD,
            features: FeatureDump::None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphSection {
    pub bins: usize,
    pub edge_features: EdgeFeatures,
    pub self_loops: bool,
    /// Matrix CSV used instead of per-day entropy graphs.
    pub static_graph: Option<PathBuf>,
}

impl Default for GraphSection {
    fn default() -> Self {
        Self {
            bins: EntropyEstimatorConfig::default().bins,
            edge_features: EdgeFeatures::default(),
            self_loops: false,
            static_graph: None,
        }
    }
}

impl GraphSection {
    pub fn graph_config(&self) -> GraphConfig {
        GraphConfig {
            entropy: EntropyEstimatorConfig { bins: self.bins },
            edge_features: self.edge_features,
            self_loops: self.self_loops,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub alpha: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: Option<usize>,
    pub patience: usize,
    pub penalty_mode: PenaltyMode,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            alpha: t.alpha,
            learning_rate: t.learning_rate,
            weight_decay: t.weight_decay,
            epochs: t.epochs,
            batch_size: t.batch_size,
            patience: t.patience,
            penalty_mode: t.penalty_mode,
        }
    }
}

/// Explicit date ranges for all three splits, or fractions of the target
/// days when no ranges are given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub train: Option<DateRange>,
    pub validation: Option<DateRange>,
    pub test: Option<DateRange>,
    pub validation_fraction: f64,
    pub test_fraction: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            train: None,
            validation: None,
            test: None,
            validation_fraction: 0.15,
            test_fraction: 0.15,
        }
    }
}

impl SplitSection {
    pub fn resolve(&self, calendar: &[NaiveDate], lookback: usize) -> Result<SplitSpec> {
        match (self.train, self.validation, self.test) {
            (Some(train), Some(validation), Some(test)) => {
                let spec = SplitSpec {
                    train,
                    validation,
                    test,
                };
                spec.validate()?;
                Ok(spec)
            }
            (None, None, None) => {
                let f = |x: f64| (0.0..1.0).contains(&x);
                if !f(self.validation_fraction)
                    || !f(self.test_fraction)
                    || self.validation_fraction + self.test_fraction >= 1.0
                {
                    return Err(CliError::Config(
                        "split fractions must be in [0, 1) and sum below 1".into(),
                    ));
                }
                let targets = calendar.len().saturating_sub(lookback.max(1));
                let val = (targets as f64 * self.validation_fraction).round() as usize;
                let test = (targets as f64 * self.test_fraction).round() as usize;
                let train = targets.saturating_sub(val + test);
                Ok(SplitSpec::from_day_counts(
                    calendar,
                    lookback,
                    train,
                    val.max(1),
                    test.max(1),
                )?)
            }
            _ => Err(CliError::Config(
                "give all of train, validation and test ranges or none".into(),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub split: Split,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self { split: Split::Test }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Dataset directory used when `--data` is not given.
    pub dataset: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub data: DataSection,
    pub graph: GraphSection,
    pub model: ModelConfig,
    pub training: TrainingSection,
    pub split: SplitSection,
    pub evaluation: EvaluationSection,
}

impl RunConfig {
    /// Parses TOML, or JSON when the extension is `.json`.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        let is_json = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let parsed = if is_json {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::from_file)
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            alpha: t.alpha,
            learning_rate: t.learning_rate,
            weight_decay: t.weight_decay,
            epochs: t.epochs,
            batch_size: t.batch_size,
            seed: self.seed,
            patience: t.patience,
            penalty_mode: t.penalty_mode,
        }
    }

    pub fn data_config(&self) -> DataConfig {
        DataConfig {
            lookback: self.data.lookback,
        }
    }

    /// Model settings with θ matching the penalty mode.
    pub fn model_config(&self) -> ModelConfig {
        let mut m = self.model.clone();
        m.theta = self.training.penalty_mode.theta();
        m
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        self.train_config().validate()?;
        self.graph.graph_config().entropy.validate()?;
        if self.data.lookback == 0 {
            return Err(CliError::Config("lookback must be >= 1".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// 16-hex digest of the merged configuration, ignoring file locations.
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.output = None;
        c.dataset = None;
        c.graph.static_graph = None;
        format!("{:016x}", dgdnn_core::fnv1a64(c.to_json().as_bytes()))
    }
}
