//! Per-day samples `(X_t, A_t, C_{t+1})` grouped by split.

use alloc::vec::Vec;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_adjacency, static_adjacency, GraphConfig};
use crate::market::{make_labels, make_window, MarketHistory, Split, SplitSpec};
use crate::numerics::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub day: usize,
    /// Date of the target day `t + 1`.
    pub target_date: NaiveDate,
    pub features: Tensor,
    pub adjacency: Tensor,
    pub labels: Vec<u8>,
}

/// Where the per-day adjacency comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum GraphSource {
    Entropy(GraphConfig),
    /// One matrix reused for every day.
    Static(Tensor),
}

impl Default for GraphSource {
    fn default() -> Self {
        GraphSource::Entropy(GraphConfig::default())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub lookback: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { lookback: 19 }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TemporalDataset {
    pub train: Vec<Sample>,
    pub validation: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl TemporalDataset {
    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }
}

/// Builds one sample for day `t` (target `t + 1`).
pub fn build_sample(
    history: &MarketHistory,
    t: usize,
    lookback: usize,
    graph: &GraphSource,
) -> Result<Sample> {
    let window = make_window(history, t, lookback)?;
    let labels = make_labels(history, t)?.labels;
    let adjacency = match graph {
        GraphSource::Entropy(cfg) => build_adjacency(&window, cfg)?.matrix,
        GraphSource::Static(m) => m.clone(),
    };
    Ok(Sample {
        day: t,
        target_date: history.universe().calendar[t + 1],
        features: window.features,
        adjacency,
        labels,
    })
}

/// Every day with a full lookback window and a next-day label, assigned to
/// a split by its target date. Days outside all three ranges are skipped.
pub fn build_samples(
    history: &MarketHistory,
    cfg: &DataConfig,
    graph: &GraphSource,
    splits: &SplitSpec,
) -> Result<TemporalDataset> {
    splits.validate()?;
    if cfg.lookback == 0 {
        return Err(Error::validation("data config", "lookback must be >= 1"));
    }
    if let GraphSource::Static(m) = graph {
        static_adjacency(m.clone(), history.n_tickers())?;
    }
    let days = history.n_days();
    let mut out = TemporalDataset::default();
    if days < cfg.lookback + 1 {
        return Err(Error::range(
            "dataset",
            alloc::format!(
                "{days} days cannot hold a lookback of {} plus a label day",
                cfg.lookback
            ),
        ));
    }
    for t in cfg.lookback - 1..days - 1 {
        let target = history.universe().calendar[t + 1];
        let Some(split) = splits.classify(target) else {
            continue;
        };
        let sample = build_sample(history, t, cfg.lookback, graph)?;
        match split {
            Split::Train => out.train.push(sample),
            Split::Validation => out.validation.push(sample),
            Split::Test => out.test.push(sample),
        }
    }
    Ok(out)
}
