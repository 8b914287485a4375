//! The decoupled graph-diffusion network.
//!
//! Each of the `L` layers runs two branches side by side:
//!
//! ```text
//! H_l  = σ((Q_l ⊙ A_t) · H_{l-1} · W⁰_l)
//! H'_l = σ(ζ(H_l ∥ H'_{l-1}) · W¹_l + b¹_l)
//! ```
//!
//! `Q_l = Σ_k θ_{l,k} T_{l,k}` is the learned diffusion matrix: θ is a softmax
//! over `K` logits and every `T_{l,k}` is a column-wise softmax over `N × N`
//! logits, so `Q_l` is column-stochastic by construction. `ζ` is multi-head
//! scaled dot-product self-attention across nodes. Row `i` of `Q_l ⊙ A_t`
//! weights what node `i` reads from each other node.
//!
//! `H_0 = H'_0` is a linear projection of the window features to the
//! embedding width, and a three-layer MLP on `H'_{L-1}` produces two class
//! logits per node.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{math, Axis, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu { slope: f64 },
    Identity,
}

impl Default for Activation {
    fn default() -> Self {
        Activation::LeakyRelu { slope: 0.01 }
    }
}

/// How the diffusion branch builds its propagation matrix.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Propagation {
    /// Learned `Q_l ⊙ A_t`.
    #[default]
    Diffusion,
    /// One diffusion step with the transition frozen to the row-normalized
    /// `A_t`, used directly as the propagation matrix: a plain one-hop graph
    /// convolution. Has no diffusion parameters.
    OneHop,
}

/// Parameterization of the diffusion weights θ.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaParam {
    /// θ = softmax(logits): sums to one exactly.
    #[default]
    Softmax,
    /// θ used as-is; the objective adds `(Σθ − 1)²` per layer.
    Raw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub layers: usize,
    pub diffusion_steps: usize,
    pub heads: usize,
    pub embed_dim: usize,
    pub activation: Activation,
    pub propagation: Propagation,
    pub theta: ThetaParam,
    /// `false` collapses the attention stream: `H'_l = H_l`.
    pub decoupled: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 8,
            diffusion_steps: 9,
            heads: 3,
            embed_dim: 128,
            activation: Activation::default(),
            propagation: Propagation::default(),
            theta: ThetaParam::default(),
            decoupled: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |d: String| Err(Error::validation("model config", d));
        if self.layers == 0 {
            return bad("layers must be >= 1".into());
        }
        if self.diffusion_steps == 0 {
            return bad("diffusion_steps must be >= 1".into());
        }
        if self.embed_dim == 0 {
            return bad("embed_dim must be >= 1".into());
        }
        if self.decoupled && (self.heads == 0 || self.heads > self.embed_dim) {
            return bad(format!(
                "heads {} must be in 1..={}",
                self.heads, self.embed_dim
            ));
        }
        if let Activation::LeakyRelu { slope } = self.activation {
            if !slope.is_finite() {
                return bad("activation slope must be finite".into());
            }
        }
        Ok(())
    }

    /// Steps actually realized: the one-hop ablation has exactly one.
    pub fn effective_steps(&self) -> usize {
        match self.propagation {
            Propagation::Diffusion => self.diffusion_steps,
            Propagation::OneHop => 1,
        }
    }
}

/// Widths of the attention heads; they concatenate to `embed_dim`, the first
/// `embed_dim % heads` heads getting one extra column.
pub fn head_dims(embed_dim: usize, heads: usize) -> Vec<usize> {
    (0..heads)
        .map(|h| embed_dim / heads + usize::from(h < embed_dim % heads))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DenseSlots {
    pub weight: usize,
    pub bias: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HeadSlots {
    pub query: usize,
    pub key: usize,
    pub value: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionSlots {
    pub heads: Vec<HeadSlots>,
    pub out: DenseSlots,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSlots {
    pub theta: Option<usize>,
    pub transitions: Vec<usize>,
    pub diffusion_weight: usize,
    pub attention: Option<AttentionSlots>,
}

/// Where each trainable tensor lives in [`ModelParams::tensors`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    pub input: DenseSlots,
    pub layers: Vec<LayerSlots>,
    pub head: [DenseSlots; 3],
    pub names: Vec<String>,
    pub shapes: Vec<[usize; 2]>,
}

impl ParamLayout {
    pub fn new(cfg: &ModelConfig, n_nodes: usize, in_dim: usize) -> Self {
        let mut names = Vec::new();
        let mut shapes = Vec::new();
        let mut add = |name: String, shape: [usize; 2]| {
            names.push(name);
            shapes.push(shape);
            shapes.len() - 1
        };
        let e = cfg.embed_dim;
        let input = DenseSlots {
            weight: add("input.weight".into(), [in_dim, e]),
            bias: add("input.bias".into(), [1, e]),
        };
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let (theta, transitions) = match cfg.propagation {
                Propagation::Diffusion => {
                    let k = cfg.diffusion_steps;
                    let theta = add(format!("layer{l}.theta_logits"), [1, k]);
                    let ts = (0..k)
                        .map(|k| add(format!("layer{l}.transition_logits{k}"), [n_nodes, n_nodes]))
                        .collect();
                    (Some(theta), ts)
                }
                Propagation::OneHop => (None, Vec::new()),
            };
            let diffusion_weight = add(format!("layer{l}.diffusion_weight"), [e, e]);
            let attention = cfg.decoupled.then(|| {
                let heads = head_dims(e, cfg.heads)
                    .into_iter()
                    .enumerate()
                    .map(|(h, d)| HeadSlots {
                        query: add(format!("layer{l}.head{h}.query"), [2 * e, d]),
                        key: add(format!("layer{l}.head{h}.key"), [2 * e, d]),
                        value: add(format!("layer{l}.head{h}.value"), [2 * e, d]),
                    })
                    .collect();
                AttentionSlots {
                    heads,
                    out: DenseSlots {
                        weight: add(format!("layer{l}.attention_out.weight"), [e, e]),
                        bias: add(format!("layer{l}.attention_out.bias"), [1, e]),
                    },
                }
            });
            layers.push(LayerSlots {
                theta,
                transitions,
                diffusion_weight,
                attention,
            });
        }
        let mut dense = |name: &str, fan_in: usize, fan_out: usize| DenseSlots {
            weight: add(format!("{name}.weight"), [fan_in, fan_out]),
            bias: add(format!("{name}.bias"), [1, fan_out]),
        };
        let head = [
            dense("head0", e, e),
            dense("head1", e, e),
            dense("head2", e, 2),
        ];
        Self {
            input,
            layers,
            head,
            names,
            shapes,
        }
    }

    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }

    pub fn param_count(&self) -> usize {
        self.shapes.iter().map(|[r, c]| r * c).sum()
    }
}

/// All trainable tensors of one model, bound to a fixed universe size.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub n_nodes: usize,
    pub in_dim: usize,
    pub layout: ParamLayout,
    pub tensors: Vec<Tensor>,
}

impl ModelParams {
    /// Fan-in scaled uniform weights, zero biases, zero transition logits
    /// (uniform columns) and uniform θ.
    pub fn init(config: ModelConfig, n_nodes: usize, in_dim: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if n_nodes == 0 || in_dim == 0 {
            return Err(Error::validation(
                "model",
                "need at least one node and one feature",
            ));
        }
        let layout = ParamLayout::new(&config, n_nodes, in_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors: Vec<Tensor> = layout
            .shapes
            .iter()
            .map(|&[r, c]| Tensor::zeros(r, c))
            .collect();

        let mut uniform = |t: &mut Tensor| {
            let bound = 1.0 / math::sqrt(t.rows() as f64);
            for v in t.data_mut() {
                *v = rng.random_range(-bound..bound);
            }
        };
        uniform(&mut tensors[layout.input.weight]);
        for ls in &layout.layers {
            uniform(&mut tensors[ls.diffusion_weight]);
            if let Some(att) = &ls.attention {
                for h in &att.heads {
                    uniform(&mut tensors[h.query]);
                    uniform(&mut tensors[h.key]);
                    uniform(&mut tensors[h.value]);
                }
                uniform(&mut tensors[att.out.weight]);
            }
        }
        for d in &layout.head {
            uniform(&mut tensors[d.weight]);
        }
        if config.theta == ThetaParam::Raw {
            let k = config.diffusion_steps as f64;
            for ls in &layout.layers {
                if let Some(t) = ls.theta {
                    tensors[t] = Tensor::full(1, config.diffusion_steps, 1.0 / k);
                }
            }
        }
        Ok(Self {
            config,
            n_nodes,
            in_dim,
            layout,
            tensors,
        })
    }

    /// Rebuilds a model from stored tensors, checking every shape.
    pub fn from_tensors(
        config: ModelConfig,
        n_nodes: usize,
        in_dim: usize,
        tensors: Vec<Tensor>,
    ) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(&config, n_nodes, in_dim);
        if tensors.len() != layout.len() {
            return Err(Error::validation(
                "model",
                format!("{} tensors for a layout of {}", tensors.len(), layout.len()),
            ));
        }
        for (i, t) in tensors.iter().enumerate() {
            if t.shape() != layout.shapes[i] {
                return Err(Error::Dimension {
                    op: "from_tensors",
                    left: t.shape(),
                    right: layout.shapes[i],
                });
            }
        }
        Ok(Self {
            config,
            n_nodes,
            in_dim,
            layout,
            tensors,
        })
    }

    pub fn param_count(&self) -> usize {
        self.layout.param_count()
    }

    /// Places every tensor on `tape` as a parameter leaf, in layout order.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.param(t.clone())).collect()
    }

    /// Same model with node `i` playing the role of old node `perm[i]`:
    /// transition logits are permuted on both axes.
    pub fn permute_nodes(&self, perm: &[usize]) -> Self {
        let mut out = self.clone();
        for ls in &self.layout.layers {
            for &t in &ls.transitions {
                out.tensors[t] = self.tensors[t].permute_square(perm);
            }
        }
        out
    }
}

/// Realized θ and transition matrices of every layer.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionStack {
    pub layers: Vec<DiffusionLayer>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionLayer {
    pub theta: Vec<f64>,
    pub transitions: Vec<Tensor>,
}

impl DiffusionStack {
    /// `None` for the one-hop ablation, which has no learned diffusion.
    pub fn realize(params: &ModelParams) -> Option<Self> {
        if params.config.propagation == Propagation::OneHop {
            return None;
        }
        let layers = params
            .layout
            .layers
            .iter()
            .map(|ls| {
                let logits = &params.tensors[ls.theta.expect("diffusion layers carry theta")];
                let theta = match params.config.theta {
                    ThetaParam::Softmax => logits.softmax(Axis::Row).into_data(),
                    ThetaParam::Raw => logits.data().to_vec(),
                };
                let transitions = ls
                    .transitions
                    .iter()
                    .map(|&t| params.tensors[t].softmax(Axis::Col))
                    .collect();
                DiffusionLayer { theta, transitions }
            })
            .collect();
        Some(Self { layers })
    }

    /// `Q_l = Σ_k θ_{l,k} T_{l,k}`.
    pub fn diffusion_matrix(&self, l: usize) -> Tensor {
        let layer = &self.layers[l];
        let n = layer.transitions[0].rows();
        let mut q = Tensor::zeros(n, n);
        for (w, t) in layer.theta.iter().zip(&layer.transitions) {
            for (o, v) in q.data_mut().iter_mut().zip(t.data()) {
                *o += w * v;
            }
        }
        q
    }

    /// `r_l = Σ_k θ_{l,k} k / Σ_k θ_{l,k}`.
    pub fn radius(&self, l: usize) -> f64 {
        let theta = &self.layers[l].theta;
        let num: f64 = theta.iter().enumerate().map(|(k, w)| w * k as f64).sum();
        let den: f64 = theta.iter().sum();
        num / den
    }
}

/// `Q_l` for layer `l`.
pub fn realize_diffusion(params: &ModelParams, l: usize) -> Result<Tensor> {
    check_layer(params, l)?;
    let stack = DiffusionStack::realize(params).ok_or_else(|| {
        Error::validation(
            "model",
            "one-hop propagation has no learned diffusion matrix",
        )
    })?;
    Ok(stack.diffusion_matrix(l))
}

/// Neighborhood radius of layer `l`; 0 for the one-hop ablation.
pub fn neighborhood_radius(params: &ModelParams, l: usize) -> Result<f64> {
    check_layer(params, l)?;
    Ok(DiffusionStack::realize(params).map_or(0.0, |s| s.radius(l)))
}

fn check_layer(params: &ModelParams, l: usize) -> Result<()> {
    if l >= params.config.layers {
        return Err(Error::range(
            "layer",
            format!("{l} >= {}", params.config.layers),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Tape forward pass

/// Per-layer diffusion quantities that do not depend on the day, so one tape
/// can share them across a whole batch.
#[derive(Clone, Debug)]
pub struct LayerTerms {
    /// Realized θ (`1 × K`), `None` for one-hop.
    pub theta: Option<Var>,
    /// `Q_l`, `None` for one-hop.
    pub diffusion: Option<Var>,
}

pub fn diffusion_terms(
    tape: &mut Tape,
    params: &ModelParams,
    vars: &[Var],
) -> Result<Vec<LayerTerms>> {
    params
        .layout
        .layers
        .iter()
        .map(|ls| {
            let Some(theta_slot) = ls.theta else {
                return Ok(LayerTerms {
                    theta: None,
                    diffusion: None,
                });
            };
            let theta = match params.config.theta {
                ThetaParam::Softmax => tape.softmax(vars[theta_slot], Axis::Row),
                ThetaParam::Raw => vars[theta_slot],
            };
            let ts: Vec<Var> = ls
                .transitions
                .iter()
                .map(|&t| tape.softmax(vars[t], Axis::Col))
                .collect();
            let q = tape.weighted_sum(theta, &ts)?;
            Ok(LayerTerms {
                theta: Some(theta),
                diffusion: Some(q),
            })
        })
        .collect()
}

/// Radius `r_l` of one layer on the tape (`1 × 1`), `None` for one-hop.
pub fn radius_on_tape(
    tape: &mut Tape,
    params: &ModelParams,
    terms: &LayerTerms,
) -> Result<Option<Var>> {
    let Some(theta) = terms.theta else {
        return Ok(None);
    };
    let k = params.config.diffusion_steps;
    let steps: Vec<f64> = (0..k).map(|i| i as f64).collect();
    let steps = tape.constant(Tensor::from_vec(k, 1, steps)?);
    let weighted = tape.matmul(theta, steps)?;
    Ok(Some(match params.config.theta {
        ThetaParam::Softmax => weighted,
        ThetaParam::Raw => {
            let total = tape.sum(theta);
            tape.div(weighted, total)?
        }
    }))
}

fn activate(tape: &mut Tape, x: Var, act: Activation) -> Var {
    match act {
        Activation::LeakyRelu { slope } => tape.leaky_relu(x, slope),
        Activation::Identity => x,
    }
}

fn dense(tape: &mut Tape, x: Var, vars: &[Var], d: DenseSlots) -> Result<Var> {
    let y = tape.matmul(x, vars[d.weight])?;
    tape.add_row(y, vars[d.bias])
}

/// Multi-head scaled dot-product self-attention across the rows of `z`.
pub fn attention(tape: &mut Tape, z: Var, vars: &[Var], slots: &AttentionSlots) -> Result<Var> {
    let mut outs = Vec::with_capacity(slots.heads.len());
    for h in &slots.heads {
        let q = tape.matmul(z, vars[h.query])?;
        let k = tape.matmul(z, vars[h.key])?;
        let v = tape.matmul(z, vars[h.value])?;
        let width = tape.value(q).cols() as f64;
        let kt = tape.transpose(k);
        let scores = tape.matmul(q, kt)?;
        let scores = tape.scale(scores, 1.0 / math::sqrt(width));
        let weights = tape.softmax(scores, Axis::Row);
        outs.push(tape.matmul(weights, v)?);
    }
    tape.concat_cols(&outs)
}

/// One layer. `propagation` is the `N × N` matrix of the diffusion branch
/// (`Q_l ⊙ A_t`, or the row-normalized `A_t` for one-hop).
pub fn layer_forward(
    tape: &mut Tape,
    params: &ModelParams,
    vars: &[Var],
    l: usize,
    propagation: Var,
    h_prev: Var,
    h_dec_prev: Var,
) -> Result<(Var, Var)> {
    let ls = &params.layout.layers[l];
    let act = params.config.activation;
    let spread = tape.matmul(propagation, h_prev)?;
    let mixed = tape.matmul(spread, vars[ls.diffusion_weight])?;
    let h = activate(tape, mixed, act);
    let h_dec = match &ls.attention {
        Some(att) => {
            let z = tape.concat_cols(&[h, h_dec_prev])?;
            let attended = attention(tape, z, vars, att)?;
            let out = dense(tape, attended, vars, att.out)?;
            activate(tape, out, act)
        }
        None => h,
    };
    Ok((h, h_dec))
}

/// Logits (`N × 2`) for one day.
pub fn forward_on_tape(
    tape: &mut Tape,
    params: &ModelParams,
    vars: &[Var],
    terms: &[LayerTerms],
    features: &Tensor,
    adjacency: &Tensor,
) -> Result<Var> {
    let n = params.n_nodes;
    if features.shape() != [n, params.in_dim] {
        return Err(Error::Dimension {
            op: "forward features",
            left: features.shape(),
            right: [n, params.in_dim],
        });
    }
    if adjacency.shape() != [n, n] {
        return Err(Error::Dimension {
            op: "forward adjacency",
            left: adjacency.shape(),
            right: [n, n],
        });
    }
    let x = tape.constant(features.clone());
    let a = match params.config.propagation {
        Propagation::Diffusion => tape.constant(adjacency.clone()),
        Propagation::OneHop => tape.constant(adjacency.row_normalized()),
    };

    let h0 = dense(tape, x, vars, params.layout.input)?;
    let (mut h, mut h_dec) = (h0, h0);
    for (l, term) in terms.iter().enumerate() {
        let propagation = match term.diffusion {
            Some(q) => tape.mul(q, a)?,
            None => a,
        };
        (h, h_dec) = layer_forward(tape, params, vars, l, propagation, h, h_dec)?;
        if !tape.value(h).is_finite() || !tape.value(h_dec).is_finite() {
            return Err(Error::NonFinite {
                context: format!("layer {l} activations"),
            });
        }
    }

    let act = params.config.activation;
    let [d0, d1, d2] = params.layout.head;
    let z = dense(tape, h_dec, vars, d0)?;
    let z = activate(tape, z, act);
    let z = dense(tape, z, vars, d1)?;
    let z = activate(tape, z, act);
    let logits = dense(tape, z, vars, d2)?;
    if !tape.value(logits).is_finite() {
        return Err(Error::NonFinite {
            context: "classifier head".into(),
        });
    }
    Ok(logits)
}

/// Logits for one day without keeping the tape around.
pub fn forward(features: &Tensor, adjacency: &Tensor, params: &ModelParams) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let terms = diffusion_terms(&mut tape, params, &vars)?;
    let logits = forward_on_tape(&mut tape, params, &vars, &terms, features, adjacency)?;
    Ok(tape.value(logits).clone())
}

/// Argmax of each logits row; exact ties go to class 0.
pub fn predict(logits: &Tensor) -> Vec<u8> {
    (0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = c;
                }
            }
            best as u8
        })
        .collect()
}
