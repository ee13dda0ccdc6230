//! Feed-forward ReLU networks with box-bounded weights and clipped scalar
//! output, trained by projected mini-batch gradient descent.
//!
//! The class is parameterized by hidden depth L, width p, weight bound tau
//! and an output interval. Reward networks clip to [0, 1]; Q networks clip
//! to [-H, H]. The sparsity budget is reported (count of nonzero parameters
//! after training), not enforced.
//!
//! Parameters live in one flat vector, layer by layer, each layer's weight
//! matrix row-major followed by its bias, so gradients and finite-difference
//! probes index the same flat layout.

use crate::preference::nll_term_gradient;
use crate::{preference, Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Architecture and constraint set of one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub input_dim: usize,
    /// Number of hidden layers. Zero means a plain affine map.
    pub hidden_layers: usize,
    pub width: usize,
    /// Every weight and bias is clamped into [-tau, tau] at projection time.
    pub tau: f64,
    pub out_lo: f64,
    pub out_hi: f64,
    /// Initial weights are uniform in +-(init_scale / sqrt(fan_in)).
    pub init_scale: f64,
}

impl NetConfig {
    /// Reward-network defaults: outputs in [0, 1].
    pub fn reward_default(input_dim: usize) -> Self {
        NetConfig {
            input_dim,
            hidden_layers: 1,
            width: 16,
            tau: 8.0,
            out_lo: 0.0,
            out_hi: 1.0,
            init_scale: 0.5,
        }
    }

    /// Q-network defaults: outputs in [-H, H].
    pub fn q_default(input_dim: usize, horizon: usize) -> Self {
        NetConfig {
            input_dim,
            hidden_layers: 1,
            width: 16,
            tau: 8.0,
            out_lo: -(horizon as f64),
            out_hi: horizon as f64,
            init_scale: 0.5,
        }
    }

    /// Sizing that tracks the rate-optimal prescription for n samples on a
    /// d-dimensional latent domain with smoothness alpha: depth grows
    /// logarithmically in n and width polynomially with exponent
    /// d / (2 alpha + d), both clamped to desk-scale ranges.
    pub fn rate_scaled(
        input_dim: usize,
        n_samples: usize,
        intrinsic_dim: usize,
        alpha: f64,
        tau: f64,
        out_lo: f64,
        out_hi: f64,
    ) -> Self {
        let n = (n_samples.max(2)) as f64;
        let d = intrinsic_dim.max(1) as f64;
        let depth = (0.25 * n.ln()).ceil().clamp(1.0, 3.0) as usize;
        let width = (2.0 * n.powf(d / (2.0 * alpha + d)))
            .round()
            .clamp(8.0, 64.0) as usize;
        NetConfig {
            input_dim,
            hidden_layers: depth,
            width,
            tau,
            out_lo,
            out_hi,
            init_scale: 0.5,
        }
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden_layers + 2);
        w.push(self.input_dim);
        for _ in 0..self.hidden_layers {
            w.push(self.width);
        }
        w.push(1);
        w
    }
}

/// Gradient-descent schedule. Training is deterministic given `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Project onto the weight box every this many gradient steps (and
    /// always after the last step).
    pub projection_cadence: usize,
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0
            || self.batch_size == 0
            || self.epochs == 0
            || self.projection_cadence == 0
        {
            return Err(Error::Dimension {
                context: "optimizer config",
                detail: format!("{self:?}: rates and counts must be positive"),
            });
        }
        Ok(())
    }
}

/// A constrained ReLU network. Architecture is fixed at construction;
/// parameters change only through training and projection.
#[derive(Debug, Clone, PartialEq)]
pub struct ReluNetwork {
    widths: Vec<usize>,
    /// Per layer: weight matrix row-major, then bias.
    params: Vec<f64>,
    /// (weight_offset, bias_offset) per affine layer.
    offsets: Vec<(usize, usize)>,
    tau: f64,
    out_lo: f64,
    out_hi: f64,
}

/// Versioned checkpoint: layer widths plus row-major parameters per layer.
#[derive(Debug, Serialize, Deserialize)]
struct NetCheckpoint {
    version: u32,
    widths: Vec<usize>,
    tau: f64,
    out_lo: f64,
    out_hi: f64,
    layers: Vec<LayerCheckpoint>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerCheckpoint {
    weights: Vec<f64>,
    bias: Vec<f64>,
}

const CHECKPOINT_VERSION: u32 = 1;

fn layer_offsets(widths: &[usize]) -> (Vec<(usize, usize)>, usize) {
    let mut offsets = Vec::with_capacity(widths.len() - 1);
    let mut at = 0;
    for l in 0..widths.len() - 1 {
        let w = at;
        let b = at + widths[l + 1] * widths[l];
        offsets.push((w, b));
        at = b + widths[l + 1];
    }
    (offsets, at)
}

impl ReluNetwork {
    /// Fresh network with seeded uniform initialization, already inside the
    /// weight box.
    pub fn new(config: &NetConfig, seed: u64) -> Self {
        let widths = config.widths();
        let (offsets, total) = layer_offsets(&widths);
        let mut params = vec![0.0; total];
        let mut rng = crate::seeding::rng_for(seed, "net-init");
        for l in 0..widths.len() - 1 {
            let scale = (config.init_scale / (widths[l] as f64).sqrt()).min(config.tau);
            let (w0, b0) = offsets[l];
            for i in 0..widths[l + 1] * widths[l] {
                params[w0 + i] = (rng.random::<f64>() * 2.0 - 1.0) * scale;
            }
            // Biases drawn at the same scale as weights so ReLU kinks start
            // spread across the input range instead of stacked at zero.
            for i in 0..widths[l + 1] {
                params[b0 + i] = (rng.random::<f64>() * 2.0 - 1.0) * scale;
            }
        }
        // Center the output bias at the midpoint of the clip interval. Raw
        // outputs then start strictly inside it; at the boundary the clip
        // gradient vanishes and a net starting there never trains.
        let (_, b_last) = offsets[widths.len() - 2];
        let mid = 0.5 * (config.out_lo + config.out_hi);
        params[b_last] = mid.clamp(-config.tau, config.tau);
        ReluNetwork {
            widths,
            params,
            offsets,
            tau: config.tau,
            out_lo: config.out_lo,
            out_hi: config.out_hi,
        }
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn output_bounds(&self) -> (f64, f64) {
        (self.out_lo, self.out_hi)
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn param(&self, i: usize) -> f64 {
        self.params[i]
    }

    pub fn set_param(&mut self, i: usize, v: f64) {
        self.params[i] = v;
    }

    /// Count of parameters that are exactly nonzero; the realized sparsity
    /// report.
    pub fn nonzero_params(&self) -> usize {
        self.params.iter().filter(|p| **p != 0.0).count()
    }

    /// Pre-clip output and per-layer post-activation values. acts[0] is the
    /// input; acts[l] for l >= 1 holds the post-ReLU activations (raw affine
    /// output at the last layer).
    fn forward_trace(&self, x: &[f64], acts: &mut Vec<Vec<f64>>) -> f64 {
        let n_layers = self.widths.len() - 1;
        acts.clear();
        acts.push(x.to_vec());
        for l in 0..n_layers {
            let (rows, cols) = (self.widths[l + 1], self.widths[l]);
            let mut out = vec![0.0; rows];
            let (w0, b0) = self.offsets[l];
            let prev = &acts[l];
            for r in 0..rows {
                let mut z = self.params[b0 + r];
                let base = w0 + r * cols;
                for c in 0..cols {
                    z += self.params[base + c] * prev[c];
                }
                out[r] = if l + 1 < n_layers { z.max(0.0) } else { z };
            }
            acts.push(out);
        }
        acts[n_layers][0]
    }

    /// Clipped scalar output.
    pub fn forward(&self, x: &[f64]) -> f64 {
        assert_eq!(
            x.len(),
            self.widths[0],
            "input dimension {} does not match network input {}",
            x.len(),
            self.widths[0]
        );
        let mut acts = Vec::new();
        let raw = self.forward_trace(x, &mut acts);
        raw.clamp(self.out_lo, self.out_hi)
    }

    /// Clamp every parameter into [-tau, tau]. Idempotent.
    pub fn project(&mut self) {
        for p in &mut self.params {
            *p = p.clamp(-self.tau, self.tau);
        }
    }

    pub fn within_weight_box(&self) -> bool {
        self.params.iter().all(|p| p.abs() <= self.tau)
    }

    /// Accumulates d(loss)/d(params) into `grad` for one input, given the
    /// derivative of the loss in the clipped output. Returns nothing when the
    /// raw output sits outside the clip interval: there the clip has zero
    /// gradient.
    fn backprop_into(&self, acts: &[Vec<f64>], raw_out: f64, dloss_dout: f64, grad: &mut [f64]) {
        if raw_out < self.out_lo || raw_out > self.out_hi {
            return;
        }
        let n_layers = self.widths.len() - 1;
        let mut delta = vec![dloss_dout];
        for l in (0..n_layers).rev() {
            let (rows, cols) = (self.widths[l + 1], self.widths[l]);
            let (w0, b0) = self.offsets[l];
            let prev = &acts[l];
            let mut delta_prev = vec![0.0; cols];
            for r in 0..rows {
                let d = delta[r];
                if d == 0.0 {
                    continue;
                }
                grad[b0 + r] += d;
                let base = w0 + r * cols;
                for c in 0..cols {
                    grad[base + c] += d * prev[c];
                    delta_prev[c] += d * self.params[base + c];
                }
            }
            if l > 0 {
                // ReLU subgradient: zero at and below the kink.
                for c in 0..cols {
                    if acts[l][c] <= 0.0 {
                        delta_prev[c] = 0.0;
                    }
                }
            }
            delta = delta_prev;
        }
    }

    pub fn to_checkpoint_json(&self) -> String {
        let mut layers = Vec::new();
        for l in 0..self.widths.len() - 1 {
            let (w0, b0) = self.offsets[l];
            layers.push(LayerCheckpoint {
                weights: self.params[w0..w0 + self.widths[l + 1] * self.widths[l]].to_vec(),
                bias: self.params[b0..b0 + self.widths[l + 1]].to_vec(),
            });
        }
        let ckpt = NetCheckpoint {
            version: CHECKPOINT_VERSION,
            widths: self.widths.clone(),
            tau: self.tau,
            out_lo: self.out_lo,
            out_hi: self.out_hi,
            layers,
        };
        serde_json::to_string(&ckpt).expect("checkpoint serialization")
    }

    pub fn from_checkpoint_json(s: &str) -> Result<Self> {
        let ckpt: NetCheckpoint = serde_json::from_str(s)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Format {
                context: "network checkpoint",
                detail: format!("version {} unsupported", ckpt.version),
            });
        }
        if ckpt.widths.len() < 2 || *ckpt.widths.last().unwrap() != 1 {
            return Err(Error::Format {
                context: "network checkpoint",
                detail: format!("widths {:?} must end in 1", ckpt.widths),
            });
        }
        let (offsets, total) = layer_offsets(&ckpt.widths);
        if ckpt.layers.len() != ckpt.widths.len() - 1 {
            return Err(Error::Format {
                context: "network checkpoint",
                detail: format!(
                    "{} layers for {} widths",
                    ckpt.layers.len(),
                    ckpt.widths.len()
                ),
            });
        }
        let mut params = vec![0.0; total];
        for (l, layer) in ckpt.layers.iter().enumerate() {
            let (rows, cols) = (ckpt.widths[l + 1], ckpt.widths[l]);
            if layer.weights.len() != rows * cols || layer.bias.len() != rows {
                return Err(Error::Format {
                    context: "network checkpoint",
                    detail: format!("layer {l} has wrong parameter counts"),
                });
            }
            let (w0, b0) = offsets[l];
            params[w0..w0 + rows * cols].copy_from_slice(&layer.weights);
            params[b0..b0 + rows].copy_from_slice(&layer.bias);
        }
        Ok(ReluNetwork {
            widths: ckpt.widths,
            params,
            offsets,
            tau: ckpt.tau,
            out_lo: ckpt.out_lo,
            out_hi: ckpt.out_hi,
        })
    }
}

/// One regression sample. `weight` is a multiplicity: a weighted item stands
/// for `weight` identical unweighted ones, so grouped data trains exactly as
/// the raw sample list would.
#[derive(Debug, Clone)]
pub struct RegressionItem {
    pub x: Vec<f64>,
    pub target: f64,
    pub weight: f64,
}

/// One choice sample: three candidate inputs (slot 2 is the anchor), the
/// chosen slot, and a multiplicity weight.
#[derive(Debug, Clone)]
pub struct ChoiceItem {
    pub xs: [Vec<f64>; 3],
    pub label: usize,
    pub weight: f64,
}

/// A training objective over a batch: weighted-mean squared error on
/// regression items, or weighted-mean choice negative log-likelihood.
#[derive(Debug, Clone, Copy)]
pub enum LossBatch<'a> {
    SquaredError(&'a [RegressionItem]),
    Choice(&'a [ChoiceItem]),
}

impl LossBatch<'_> {
    pub fn len(&self) -> usize {
        match self {
            LossBatch::SquaredError(items) => items.len(),
            LossBatch::Choice(items) => items.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn total_weight(&self) -> f64 {
        match self {
            LossBatch::SquaredError(items) => items.iter().map(|i| i.weight).sum(),
            LossBatch::Choice(items) => items.iter().map(|i| i.weight).sum(),
        }
    }
}

/// Weighted-mean loss of the batch at the current parameters.
pub fn loss_value(net: &ReluNetwork, batch: &LossBatch) -> f64 {
    let mut acts = Vec::new();
    let mut total = 0.0;
    match batch {
        LossBatch::SquaredError(items) => {
            for item in *items {
                let raw = net.forward_trace(&item.x, &mut acts);
                let out = raw.clamp(net.out_lo, net.out_hi);
                let r = out - item.target;
                total += item.weight * r * r;
            }
        }
        LossBatch::Choice(items) => {
            for item in *items {
                let mut rewards = [0.0; 3];
                for (i, x) in item.xs.iter().enumerate() {
                    let raw = net.forward_trace(x, &mut acts);
                    rewards[i] = raw.clamp(net.out_lo, net.out_hi);
                }
                total += item.weight * preference::nll_term(&rewards, item.label);
            }
        }
    }
    total / batch.total_weight()
}

/// Weighted-mean loss and its exact gradient in the flat parameter vector.
/// ReLU kinks and the output clip contribute subgradient zero on their flat
/// side.
pub fn loss_gradient(net: &ReluNetwork, batch: &LossBatch) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Empty {
            what: "gradient batch",
        });
    }
    let denom = batch.total_weight();
    let mut grad = vec![0.0; net.param_count()];
    let mut acts = Vec::new();
    let mut total = 0.0;
    match batch {
        LossBatch::SquaredError(items) => {
            for item in *items {
                let raw = net.forward_trace(&item.x, &mut acts);
                let out = raw.clamp(net.out_lo, net.out_hi);
                let r = out - item.target;
                total += item.weight * r * r;
                net.backprop_into(&acts, raw, 2.0 * r * item.weight / denom, &mut grad);
            }
        }
        LossBatch::Choice(items) => {
            for item in *items {
                let mut raws = [0.0; 3];
                let mut rewards = [0.0; 3];
                let mut traces: [Vec<Vec<f64>>; 3] = [Vec::new(), Vec::new(), Vec::new()];
                for i in 0..3 {
                    raws[i] = net.forward_trace(&item.xs[i], &mut traces[i]);
                    rewards[i] = raws[i].clamp(net.out_lo, net.out_hi);
                }
                total += item.weight * preference::nll_term(&rewards, item.label);
                let dr = nll_term_gradient(&rewards, item.label);
                for i in 0..3 {
                    net.backprop_into(&traces[i], raws[i], dr[i] * item.weight / denom, &mut grad);
                }
            }
        }
    }
    let loss = total / denom;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            context: "batch loss",
        });
    }
    Ok((loss, grad))
}

/// Projected mini-batch gradient descent. Shuffles once per epoch with a
/// generator seeded from `opt.seed`, projects every `projection_cadence`
/// steps and after the final step, and returns the iterate with the lowest
/// full-batch loss seen at any epoch boundary.
pub fn train(net: ReluNetwork, batch: &LossBatch, opt: &OptimizerConfig) -> Result<ReluNetwork> {
    opt.validate()?;
    if batch.is_empty() {
        return Err(Error::Empty {
            what: "training dataset",
        });
    }
    let n = batch.len();
    let mut current = net;
    current.project();
    let mut best = current.clone();
    let mut best_loss = loss_value(&current, batch);
    if !best_loss.is_finite() {
        return Err(Error::Diverged {
            context: "initial loss".to_string(),
            loss: best_loss,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = crate::seeding::rng_for(opt.seed, "train-shuffle");
    let mut steps = 0usize;
    let mut scratch_reg: Vec<RegressionItem> = Vec::new();
    let mut scratch_choice: Vec<ChoiceItem> = Vec::new();
    for epoch in 0..opt.epochs {
        // Fisher-Yates with the epoch's stream.
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut at = 0;
        while at < n {
            let end = (at + opt.batch_size).min(n);
            let (mb_loss, grad) = match batch {
                LossBatch::SquaredError(items) => {
                    scratch_reg.clear();
                    scratch_reg.extend(order[at..end].iter().map(|&i| items[i].clone()));
                    loss_gradient(&current, &LossBatch::SquaredError(&scratch_reg))?
                }
                LossBatch::Choice(items) => {
                    scratch_choice.clear();
                    scratch_choice.extend(order[at..end].iter().map(|&i| items[i].clone()));
                    loss_gradient(&current, &LossBatch::Choice(&scratch_choice))?
                }
            };
            if !mb_loss.is_finite() {
                return Err(Error::Diverged {
                    context: format!("epoch {epoch}"),
                    loss: mb_loss,
                });
            }
            for (p, g) in current.params.iter_mut().zip(&grad) {
                *p -= opt.learning_rate * g;
            }
            steps += 1;
            if steps.is_multiple_of(opt.projection_cadence) {
                current.project();
            }
            at = end;
        }
        current.project();
        let full = loss_value(&current, batch);
        if !full.is_finite() {
            return Err(Error::Diverged {
                context: format!("epoch {epoch}"),
                loss: full,
            });
        }
        if full < best_loss {
            best_loss = full;
            best = current.clone();
        }
    }
    Ok(best)
}
