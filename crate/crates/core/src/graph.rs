//! Per-day stock graphs from signal energy and histogram entropy.
//!
//! For node feature vectors `x_i`, `x_j` the directed edge weight is
//!
//! ```text
//! A[i][j] = E(x_i) / E(x_j) · (exp(S(x_i) + S(x_j) − S(x_i, x_j)) − 1)
//! ```
//!
//! where `E` is the sum of squares and `S` the plug-in Shannon entropy of the
//! binned values. The exponent is the empirical mutual information, so the
//! bracket is symmetric and only the energy ratio carries direction.
//!
//! Values are discretized by equal-width bins over each vector's own
//! `[min, max]`; the joint histogram reuses each vector's marginal bins, which
//! makes `S(x, x) = S(x)` and `S(const, y) = S(y)` hold exactly.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::IndicatorWindow;
use crate::numerics::{math, Tensor};

/// Exponents above this are clamped before `exp` to stay finite.
pub const MAX_EXPONENT: f64 = 700.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntropyEstimatorConfig {
    pub bins: usize,
}

impl Default for EntropyEstimatorConfig {
    fn default() -> Self {
        Self { bins: 64 }
    }
}

impl EntropyEstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bins < 2 {
            return Err(Error::validation("bins", format!("{} < 2", self.bins)));
        }
        Ok(())
    }
}

/// Which window representation feeds edge generation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeFeatures {
    #[default]
    Raw,
    Normalized,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphConfig {
    pub entropy: EntropyEstimatorConfig,
    pub edge_features: EdgeFeatures,
    /// Diagonal of `A_t` set to 1 instead of 0.
    pub self_loops: bool,
}

/// Weighted directed adjacency for one day.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicAdjacency {
    pub day: usize,
    pub matrix: Tensor,
    pub self_loops: bool,
}

pub fn signal_energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Equal-width bin index of every entry; a constant vector is all bin 0.
fn bin_indices(x: &[f64], bins: usize) -> Vec<usize> {
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if span.is_nan() || span <= 0.0 {
        return alloc::vec![0; x.len()];
    }
    x.iter()
        .map(|&v| {
            let b = math::floor((v - lo) / span * bins as f64) as usize;
            b.min(bins - 1)
        })
        .collect()
}

/// `−Σ p ln p` over sorted symbol codes.
fn entropy_of_sorted(codes: &[usize]) -> f64 {
    let n = codes.len() as f64;
    let mut s = 0.0;
    let mut i = 0;
    while i < codes.len() {
        let mut j = i + 1;
        while j < codes.len() && codes[j] == codes[i] {
            j += 1;
        }
        let p = (j - i) as f64 / n;
        s -= p * math::ln(p);
        i = j;
    }
    s
}

/// Shannon entropy (nats) of the binned values of `x`. Empty input is 0.
pub fn entropy(x: &[f64], cfg: &EntropyEstimatorConfig) -> f64 {
    let mut codes = bin_indices(x, cfg.bins);
    codes.sort_unstable();
    entropy_of_sorted(&codes)
}

/// Joint entropy (nats) of `(bin(x[n]), bin(y[n]))` pairs.
pub fn joint_entropy(x: &[f64], y: &[f64], cfg: &EntropyEstimatorConfig) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Dimension {
            op: "joint_entropy",
            left: [1, x.len()],
            right: [1, y.len()],
        });
    }
    let bx = bin_indices(x, cfg.bins);
    let by = bin_indices(y, cfg.bins);
    Ok(joint_from_bins(&bx, &by, cfg.bins))
}

fn joint_from_bins(bx: &[usize], by: &[usize], bins: usize) -> f64 {
    let mut codes: Vec<usize> = bx.iter().zip(by).map(|(a, b)| a * bins + b).collect();
    codes.sort_unstable();
    entropy_of_sorted(&codes)
}

struct NodeSummary {
    energy: f64,
    entropy: f64,
    bins: Vec<usize>,
}

/// Edge weights for the rows of `features` (one node per row).
pub fn adjacency_from_features(features: &Tensor, cfg: &GraphConfig) -> Result<Tensor> {
    cfg.entropy.validate()?;
    let n = features.rows();
    if n < 2 {
        return Err(Error::validation(
            "graph",
            format!("need N >= 2 nodes, got {n}"),
        ));
    }
    let bins = cfg.entropy.bins;
    let nodes: Vec<NodeSummary> = (0..n)
        .map(|i| {
            let row = features.row(i);
            let b = bin_indices(row, bins);
            let mut sorted = b.clone();
            sorted.sort_unstable();
            NodeSummary {
                energy: signal_energy(row),
                entropy: entropy_of_sorted(&sorted),
                bins: b,
            }
        })
        .collect();

    let mut a = Tensor::zeros(n, n);
    let mut clamped = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            let joint = joint_from_bins(&nodes[i].bins, &nodes[j].bins, bins);
            // Plug-in mutual information is non-negative; rounding can leave
            // a -1e-16 residue.
            let mut exponent = (nodes[i].entropy + nodes[j].entropy - joint).max(0.0);
            if exponent > MAX_EXPONENT {
                exponent = MAX_EXPONENT;
                clamped += 1;
            }
            let connectivity = math::exp(exponent) - 1.0;
            let (ei, ej) = (nodes[i].energy, nodes[j].energy);
            if ei > 0.0 && ej > 0.0 {
                a.set(i, j, ei / ej * connectivity);
                a.set(j, i, ej / ei * connectivity);
            }
        }
        if cfg.self_loops {
            a.set(i, i, 1.0);
        }
    }
    if clamped > 0 {
        log::warn!("entropy exponent clamped at {MAX_EXPONENT} for {clamped} node pairs");
    }
    Ok(a)
}

/// Builds `A_t` from a lookback window, using raw or normalized features as
/// configured.
pub fn build_adjacency(window: &IndicatorWindow, cfg: &GraphConfig) -> Result<DynamicAdjacency> {
    let features = match cfg.edge_features {
        EdgeFeatures::Raw => &window.raw,
        EdgeFeatures::Normalized => &window.features,
    };
    Ok(DynamicAdjacency {
        day: window.day,
        matrix: adjacency_from_features(features, cfg)?,
        self_loops: cfg.self_loops,
    })
}

/// Validates a time-invariant adjacency for an `n`-node universe.
pub fn static_adjacency(matrix: Tensor, n: usize) -> Result<Tensor> {
    if matrix.shape() != [n, n] {
        return Err(Error::Dimension {
            op: "static_adjacency",
            left: matrix.shape(),
            right: [n, n],
        });
    }
    if !matrix.is_finite() || matrix.data().iter().any(|&v| v < 0.0) {
        return Err(Error::validation(
            "static adjacency",
            "entries must be finite and >= 0",
        ));
    }
    Ok(matrix)
}

/// Uniform `[0, 1)` off-diagonal weights with a zero diagonal; the random
/// graph used by the no-entropy-graph ablation.
pub fn random_adjacency(n: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = Tensor::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                a.set(i, j, rng.random::<f64>());
            }
        }
    }
    a
}
