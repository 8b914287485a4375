//! Classification metrics. Class 1 ("up") is the positive class.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::market::Split;
use crate::model::{forward, predict, ModelParams};
use crate::numerics::math;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    #[serde(rename = "tp")]
    pub true_pos: u64,
    #[serde(rename = "fp")]
    pub false_pos: u64,
    #[serde(rename = "tn")]
    pub true_neg: u64,
    #[serde(rename = "fn")]
    pub false_neg: u64,
}

impl Confusion {
    pub fn from_counts(true_pos: u64, false_pos: u64, true_neg: u64, false_neg: u64) -> Self {
        Self {
            true_pos,
            false_pos,
            true_neg,
            false_neg,
        }
    }

    pub fn count(predictions: &[u8], labels: &[u8]) -> Result<Self> {
        if predictions.len() != labels.len() {
            return Err(Error::validation(
                "metrics",
                alloc::format!(
                    "{} predictions for {} labels",
                    predictions.len(),
                    labels.len()
                ),
            ));
        }
        let mut c = Self::default();
        for (&p, &y) in predictions.iter().zip(labels) {
            match (p, y) {
                (1, 1) => c.true_pos += 1,
                (1, 0) => c.false_pos += 1,
                (0, 0) => c.true_neg += 1,
                (0, 1) => c.false_neg += 1,
                _ => {
                    return Err(Error::validation(
                        "metrics",
                        "predictions and labels must be 0 or 1",
                    ))
                }
            }
        }
        Ok(c)
    }

    pub fn merge(&mut self, other: &Self) {
        self.true_pos += other.true_pos;
        self.false_pos += other.false_pos;
        self.true_neg += other.true_neg;
        self.false_neg += other.false_neg;
    }

    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.true_neg + self.false_neg
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.true_pos + self.true_neg, self.total())
    }

    /// 0 when any of the four marginals is 0.
    pub fn mcc(&self) -> f64 {
        let (tp, fp, tn, fn_) = (
            self.true_pos as f64,
            self.false_pos as f64,
            self.true_neg as f64,
            self.false_neg as f64,
        );
        let factors = [tp + fp, tp + fn_, tn + fp, tn + fn_];
        if factors.contains(&0.0) {
            return 0.0;
        }
        let den = math::sqrt(factors.iter().product());
        ((tp * tn - fp * fn_) / den).clamp(-1.0, 1.0)
    }

    /// F1 of the up class; 0 when there are no positives at all.
    pub fn f1(&self) -> f64 {
        ratio(
            2 * self.true_pos,
            2 * self.true_pos + self.false_pos + self.false_neg,
        )
    }

    /// Mean of the per-class F1 scores.
    pub fn macro_f1(&self) -> f64 {
        let down = ratio(
            2 * self.true_neg,
            2 * self.true_neg + self.false_pos + self.false_neg,
        );
        0.5 * (self.f1() + down)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DayMetrics {
    pub date: NaiveDate,
    pub acc: f64,
    pub mcc: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub split: String,
    #[serde(flatten)]
    pub confusion: Confusion,
    pub total: u64,
    pub acc: f64,
    pub mcc: f64,
    pub f1: f64,
    pub macro_f1: f64,
    pub per_day: Vec<DayMetrics>,
    pub fingerprint: String,
}

impl EvalReport {
    pub fn from_confusion(
        split: &str,
        confusion: Confusion,
        per_day: Vec<DayMetrics>,
        fingerprint: &str,
    ) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            split: split.to_string(),
            confusion,
            total: confusion.total(),
            acc: confusion.accuracy(),
            mcc: confusion.mcc(),
            f1: confusion.f1(),
            macro_f1: confusion.macro_f1(),
            per_day,
            fingerprint: fingerprint.to_string(),
        }
    }
}

/// Metrics over one flat prediction / label sequence.
pub fn metrics(predictions: &[u8], labels: &[u8]) -> Result<EvalReport> {
    if predictions.is_empty() {
        return Err(Error::validation("metrics", "no predictions"));
    }
    let c = Confusion::count(predictions, labels)?;
    Ok(EvalReport::from_confusion("", c, Vec::new(), ""))
}

/// Predicted classes for every sample, in sample order.
pub fn predict_samples(params: &ModelParams, samples: &[Sample]) -> Result<Vec<Vec<u8>>> {
    samples
        .iter()
        .map(|s| forward(&s.features, &s.adjacency, params).map(|l| predict(&l)))
        .collect()
}

/// Runs the model over `samples` and aggregates node-day predictions.
pub fn evaluate(
    params: &ModelParams,
    samples: &[Sample],
    split: Split,
    fingerprint: &str,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::validation(
            "evaluate",
            alloc::format!("{} split has no days", split.name()),
        ));
    }
    let mut total = Confusion::default();
    let mut per_day = Vec::with_capacity(samples.len());
    for (s, pred) in samples.iter().zip(predict_samples(params, samples)?) {
        let c = Confusion::count(&pred, &s.labels)?;
        total.merge(&c);
        per_day.push(DayMetrics {
            date: s.target_date,
            acc: c.accuracy(),
            mcc: c.mcc(),
            f1: c.f1(),
        });
    }
    Ok(EvalReport::from_confusion(
        split.name(),
        total,
        per_day,
        fingerprint,
    ))
}
