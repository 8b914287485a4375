//! Objective, AdamW and the training loop.
//!
//! The objective for a batch of `B` days is
//!
//! ```text
//! J = (1/B) Σ_t CE_t − α Σ_l r_l + Σ_l (Σ_k θ_{l,k} − 1)²
//! ```
//!
//! where the last term only exists when θ is trained unconstrained.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{build_samples, DataConfig, GraphSource, Sample};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, predict_samples, Confusion, EvalReport};
use crate::graph::GraphConfig;
use crate::market::{MarketHistory, Split, SplitSpec};
use crate::model::{
    diffusion_terms, forward_on_tape, radius_on_tape, DiffusionStack, ModelConfig, ModelParams,
    Propagation, ThetaParam,
};
use crate::numerics::{math, Tape, Tensor, Var};

/// How the θ-sums-to-one constraint is enforced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltyMode {
    /// θ is a softmax, the constraint holds exactly and the penalty is 0.
    #[default]
    SoftmaxExact,
    /// θ is unconstrained and `(Σθ − 1)²` is added per layer.
    SquaredPenalty,
}

impl PenaltyMode {
    pub fn theta(self) -> ThetaParam {
        match self {
            PenaltyMode::SoftmaxExact => ThetaParam::Softmax,
            PenaltyMode::SquaredPenalty => ThetaParam::Raw,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub alpha: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Days per optimizer step; `None` uses every training day.
    #[serde(default)]
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub patience: usize,
    #[serde(default)]
    pub penalty_mode: PenaltyMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 2.9e-3,
            learning_rate: 2e-4,
            weight_decay: 1.5e-5,
            epochs: 1200,
            batch_size: None,
            seed: 0,
            patience: 100,
            penalty_mode: PenaltyMode::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |d: &str| Err(Error::validation("train config", d));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be finite and >= 0");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be >= 0");
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size == Some(0) {
            return bad("batch_size must be >= 1");
        }
        if self.patience == 0 {
            return bad("patience must be >= 1");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub cross_entropy: f64,
    pub radius_sum: f64,
    pub penalty: f64,
    pub objective: f64,
}

impl LossComponents {
    pub fn combine(cross_entropy: f64, radius_sum: f64, penalty: f64, alpha: f64) -> Self {
        Self {
            cross_entropy,
            radius_sum,
            penalty,
            objective: cross_entropy - alpha * radius_sum + penalty,
        }
    }
}

/// Mean negative log-likelihood of `labels` under row-softmaxed `logits`.
pub fn cross_entropy(logits: &Tensor, labels: &[u8]) -> Result<f64> {
    if logits.rows() != labels.len() {
        return Err(Error::validation(
            "cross entropy",
            format!("{} logit rows for {} labels", logits.rows(), labels.len()),
        ));
    }
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let row = logits.row(r);
        if usize::from(y) >= row.len() || y > 1 {
            return Err(Error::validation(
                "labels",
                format!("label {y} outside {{0, 1}}"),
            ));
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + math::ln(row.iter().map(|&v| math::exp(v - max)).sum());
        total += lse - row[usize::from(y)];
    }
    Ok(total / labels.len() as f64)
}

/// Loss of a single day's logits, with the radius and penalty terms taken
/// from the realized diffusion (`None` for one-hop models).
pub fn loss(
    logits: &Tensor,
    labels: &[u8],
    stack: Option<&DiffusionStack>,
    alpha: f64,
    mode: PenaltyMode,
) -> Result<LossComponents> {
    let ce = cross_entropy(logits, labels)?;
    let (radius, penalty) = match stack {
        None => (0.0, 0.0),
        Some(s) => {
            let radius = (0..s.layers.len()).map(|l| s.radius(l)).sum();
            let penalty = match mode {
                PenaltyMode::SoftmaxExact => 0.0,
                PenaltyMode::SquaredPenalty => s
                    .layers
                    .iter()
                    .map(|l| {
                        let d = l.theta.iter().sum::<f64>() - 1.0;
                        d * d
                    })
                    .sum(),
            };
            (radius, penalty)
        }
    };
    Ok(LossComponents::combine(ce, radius, penalty, alpha))
}

/// The objective for a batch of days on one tape. The diffusion matrices
/// are realized once and shared by every day.
pub struct BatchObjective {
    pub tape: Tape,
    pub vars: Vec<Var>,
    pub objective: Var,
    pub components: LossComponents,
}

pub fn batch_objective(
    params: &ModelParams,
    samples: &[&Sample],
    alpha: f64,
    mode: PenaltyMode,
) -> Result<BatchObjective> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let (objective, components) =
        objective_on_tape(&mut tape, params, &vars, samples, alpha, mode)?;
    Ok(BatchObjective {
        tape,
        vars,
        objective,
        components,
    })
}

/// Records the batch objective on `tape` with `vars` standing in for the
/// parameter tensors of `params`.
pub fn objective_on_tape(
    tape: &mut Tape,
    params: &ModelParams,
    vars: &[Var],
    samples: &[&Sample],
    alpha: f64,
    mode: PenaltyMode,
) -> Result<(Var, LossComponents)> {
    if samples.is_empty() {
        return Err(Error::validation("batch", "no days"));
    }
    let terms = diffusion_terms(tape, params, vars)?;
    let mut ce_total: Option<Var> = None;
    for s in samples {
        let logits = forward_on_tape(tape, params, vars, &terms, &s.features, &s.adjacency)?;
        let ce = tape.cross_entropy(logits, &s.labels)?;
        ce_total = Some(match ce_total {
            Some(acc) => tape.add(acc, ce)?,
            None => ce,
        });
    }
    let ce = tape.scale(
        ce_total.expect("non-empty batch"),
        1.0 / samples.len() as f64,
    );
    let mut objective = ce;
    let mut radius_sum = 0.0;
    let mut penalty = 0.0;
    for term in &terms {
        if let Some(r) = radius_on_tape(tape, params, term)? {
            radius_sum += tape.value(r).item()?;
            let weighted = tape.scale(r, -alpha);
            objective = tape.add(objective, weighted)?;
        }
        if let (PenaltyMode::SquaredPenalty, Some(theta)) = (mode, term.theta) {
            let total = tape.sum(theta);
            let gap = tape.add_scalar(total, -1.0);
            let sq = tape.mul(gap, gap)?;
            penalty += tape.value(sq).item()?;
            objective = tape.add(objective, sq)?;
        }
    }
    let components = LossComponents {
        cross_entropy: tape.value(ce).item()?,
        radius_sum,
        penalty,
        objective: tape.value(objective).item()?,
    };
    Ok((objective, components))
}

/// Adam with decoupled weight decay and bias correction.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamW {
    pub fn new(shapes: &[[usize; 2]], learning_rate: f64, weight_decay: f64) -> Self {
        let zeros = || shapes.iter().map(|&[r, c]| Tensor::zeros(r, c)).collect();
        Self {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) {
        self.step = self.step.saturating_add(1);
        let c1 = 1.0 - libm::pow(self.beta1, f64::from(self.step));
        let c2 = 1.0 - libm::pow(self.beta2, f64::from(self.step));
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            for (((w, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let update = (*m / c1) / (math::sqrt(*v / c2) + self.eps);
                *w -= self.learning_rate * (update + self.weight_decay * *w);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_ce: f64,
    pub radius_sum: f64,
    pub penalty: f64,
    pub objective: f64,
    pub val_acc: f64,
    pub val_mcc: f64,
    pub val_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum StopReason {
    Completed,
    EarlyStopped,
    NonFinite { epoch: usize, detail: String },
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Snapshot with the highest validation MCC (earliest on ties).
    pub best: ModelParams,
    pub best_epoch: usize,
    pub best_val_mcc: f64,
    /// Parameters after the last completed epoch.
    pub last: ModelParams,
    pub history: Vec<EpochLog>,
    pub stop: StopReason,
}

fn selection_metrics(params: &ModelParams, samples: &[Sample]) -> Result<Confusion> {
    let mut c = Confusion::default();
    for (s, pred) in samples.iter().zip(predict_samples(params, samples)?) {
        c.merge(&Confusion::count(&pred, &s.labels)?);
    }
    Ok(c)
}

/// Trains a freshly initialized model. Validation MCC picks the returned
/// snapshot; with no validation days the training days are used instead.
pub fn train(
    train_samples: &[Sample],
    validation_samples: &[Sample],
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let first = train_samples
        .first()
        .ok_or_else(|| Error::validation("train", "no training days"))?;
    let mut model = model.clone();
    model.theta = cfg.penalty_mode.theta();
    let n = first.features.rows();
    let in_dim = first.features.cols();
    let params = ModelParams::init(model, n, in_dim, cfg.seed)?;
    train_from(params, train_samples, validation_samples, cfg)
}

/// Continues training from `params`.
pub fn train_from(
    mut params: ModelParams,
    train_samples: &[Sample],
    validation_samples: &[Sample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_samples.is_empty() {
        return Err(Error::validation("train", "no training days"));
    }
    if params.config.theta != cfg.penalty_mode.theta() {
        return Err(Error::validation(
            "train",
            "penalty mode does not match the model's θ parameterization",
        ));
    }
    let selection = if validation_samples.is_empty() {
        train_samples
    } else {
        validation_samples
    };
    let mut opt = AdamW::new(&params.layout.shapes, cfg.learning_rate, cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_ba7c_4e55_0001);
    let mut order: Vec<usize> = (0..train_samples.len()).collect();
    let batch = cfg
        .batch_size
        .unwrap_or(train_samples.len())
        .min(train_samples.len());

    let mut history = Vec::new();
    let mut best = params.clone();
    let mut best_epoch = 0;
    let mut best_mcc = f64::NEG_INFINITY;
    let mut stop = StopReason::Completed;

    'epochs: for epoch in 1..=cfg.epochs {
        if batch < train_samples.len() {
            order.shuffle(&mut rng);
        }
        let last_good = params.clone();
        let mut sums = LossComponents::default();
        let mut days = 0usize;
        for chunk in order.chunks(batch) {
            let days_in: Vec<&Sample> = chunk.iter().map(|&i| &train_samples[i]).collect();
            let step =
                batch_objective(&params, &days_in, cfg.alpha, cfg.penalty_mode).and_then(|b| {
                    let value = b.components.objective;
                    if !value.is_finite() {
                        return Err(Error::NonFinite {
                            context: format!("objective {value}"),
                        });
                    }
                    let grads = b.tape.backward(b.objective)?;
                    Ok((b.components, grads.params(&b.vars, &params.layout.shapes)))
                });
            let (components, grads) = match step {
                Ok(v) => v,
                Err(Error::NonFinite { context }) => {
                    params = last_good;
                    stop = StopReason::NonFinite {
                        epoch,
                        detail: context,
                    };
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            if grads.iter().any(|g| !g.is_finite()) {
                params = last_good;
                stop = StopReason::NonFinite {
                    epoch,
                    detail: "gradient".into(),
                };
                break 'epochs;
            }
            let w = chunk.len() as f64;
            sums.cross_entropy += w * components.cross_entropy;
            sums.radius_sum += w * components.radius_sum;
            sums.penalty += w * components.penalty;
            sums.objective += w * components.objective;
            days += chunk.len();
            opt.step(&mut params.tensors, &grads);
        }
        if params.tensors.iter().any(|t| !t.is_finite()) {
            params = last_good;
            stop = StopReason::NonFinite {
                epoch,
                detail: "parameters after update".into(),
            };
            break;
        }
        let d = days as f64;
        let c = match selection_metrics(&params, selection) {
            Ok(c) => c,
            Err(Error::NonFinite { context }) => {
                params = last_good;
                stop = StopReason::NonFinite {
                    epoch,
                    detail: context,
                };
                break;
            }
            Err(e) => return Err(e),
        };
        let log = EpochLog {
            epoch,
            train_ce: sums.cross_entropy / d,
            radius_sum: sums.radius_sum / d,
            penalty: sums.penalty / d,
            objective: sums.objective / d,
            val_acc: c.accuracy(),
            val_mcc: c.mcc(),
            val_f1: c.f1(),
        };
        log::debug!(
            "epoch {epoch}: ce {:.6} val mcc {:.4}",
            log.train_ce,
            log.val_mcc
        );
        if log.val_mcc > best_mcc {
            best_mcc = log.val_mcc;
            best_epoch = epoch;
            best = params.clone();
        }
        history.push(log);
        if epoch - best_epoch >= cfg.patience {
            stop = StopReason::EarlyStopped;
            break;
        }
    }
    if best_epoch == 0 {
        best_mcc = 0.0;
    }
    Ok(TrainOutcome {
        best,
        best_epoch,
        best_val_mcc: best_mcc,
        last: params,
        history,
        stop,
    })
}

/// Component removals for comparison against the full model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationMode {
    Full,
    /// A fixed static adjacency replaces the per-day entropy graph.
    NoEntropyGraph,
    /// One step, propagation frozen to the row-normalized adjacency.
    NoDiffusion,
    /// Attention stream removed: `H'_l = H_l`.
    Coupled,
}

impl AblationMode {
    pub const ALL: [AblationMode; 4] = [
        AblationMode::Full,
        AblationMode::NoEntropyGraph,
        AblationMode::NoDiffusion,
        AblationMode::Coupled,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationMode::Full => "full",
            AblationMode::NoEntropyGraph => "no-entropy-graph",
            AblationMode::NoDiffusion => "no-diffusion",
            AblationMode::Coupled => "coupled",
        }
    }
}

impl core::str::FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::validation("ablation mode", format!("unknown mode `{s}`")))
    }
}

/// Model and graph configuration for `mode`.
pub fn ablation_setup(
    mode: AblationMode,
    model: &ModelConfig,
    graph: &GraphConfig,
    static_graph: Option<&Tensor>,
) -> Result<(ModelConfig, GraphSource)> {
    let mut model = model.clone();
    let mut source = GraphSource::Entropy(*graph);
    match mode {
        AblationMode::Full => {}
        AblationMode::NoEntropyGraph => {
            let m = static_graph.ok_or_else(|| {
                Error::validation("ablation", "no-entropy-graph needs a static adjacency")
            })?;
            source = GraphSource::Static(m.clone());
        }
        AblationMode::NoDiffusion => {
            model.propagation = Propagation::OneHop;
            model.diffusion_steps = 1;
        }
        AblationMode::Coupled => model.decoupled = false,
    }
    Ok((model, source))
}

#[derive(Clone, Debug)]
pub struct AblationRun {
    pub mode: AblationMode,
    pub outcome: TrainOutcome,
    pub report: EvalReport,
}

/// Builds the dataset for `mode`, trains, and reports test metrics of the
/// best snapshot.
#[allow(clippy::too_many_arguments)]
pub fn ablate(
    history: &MarketHistory,
    data: &DataConfig,
    splits: &SplitSpec,
    graph: &GraphConfig,
    model: &ModelConfig,
    cfg: &TrainConfig,
    mode: AblationMode,
    static_graph: Option<&Tensor>,
    fingerprint: &str,
) -> Result<AblationRun> {
    let (model, source) = ablation_setup(mode, model, graph, static_graph)?;
    let ds = build_samples(history, data, &source, splits)?;
    let outcome = train(&ds.train, &ds.validation, &model, cfg)?;
    let report = evaluate(&outcome.best, &ds.test, Split::Test, fingerprint)?;
    Ok(AblationRun {
        mode,
        outcome,
        report,
    })
}
