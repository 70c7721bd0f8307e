//! Two-layer policy-value network with hand-derived backprop and Adam.
//!
//! `obs -> tanh(W1 x + b1) -> { logits = W_pi h + b_pi, value = W_v h + b_v }`.
//! Weights are row-major (`W1` is `hidden × obs`).
//!
//! Acting uses the f32 [`forward`]. The learner evaluates the network and
//! accumulates gradients in f64 ([`grad`]) and rounds the result to f32, so
//! gradient error is dominated by the final rounding rather than by long
//! f32 reductions.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::trajectory::TrajectoryBatch;

pub const DEFAULT_HIDDEN_DIM: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NnError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("non-finite loss or gradient ({0})")]
    NonFiniteLoss(String),
    #[error("empty batch")]
    EmptyBatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NetSpec {
    pub obs_dim: usize,
    pub hidden_dim: usize,
    pub num_actions: usize,
}

impl NetSpec {
    pub fn new(obs_dim: usize, hidden_dim: usize, num_actions: usize) -> Self {
        assert!(
            obs_dim >= 1 && hidden_dim >= 1 && num_actions >= 1,
            "network dimensions must be at least 1"
        );
        Self {
            obs_dim,
            hidden_dim,
            num_actions,
        }
    }

    /// Lengths of `[W1, b1, W_pi, b_pi, W_v, b_v]`.
    pub fn tensor_lens(&self) -> [usize; 6] {
        let (o, h, a) = (self.obs_dim, self.hidden_dim, self.num_actions);
        [h * o, h, a * h, a, h, 1]
    }

    pub fn num_params(&self) -> usize {
        self.tensor_lens().iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub spec: NetSpec,
    pub w1: Vec<f32>,
    pub b1: Vec<f32>,
    pub w_pi: Vec<f32>,
    pub b_pi: Vec<f32>,
    pub w_v: Vec<f32>,
    pub b_v: Vec<f32>,
    pub version: u64,
}

impl Params {
    pub fn zeros(spec: NetSpec) -> Self {
        let [l1, l2, l3, l4, l5, l6] = spec.tensor_lens();
        Self {
            spec,
            w1: vec![0.0; l1],
            b1: vec![0.0; l2],
            w_pi: vec![0.0; l3],
            b_pi: vec![0.0; l4],
            w_v: vec![0.0; l5],
            b_v: vec![0.0; l6],
            version: 0,
        }
    }

    /// Tensors in field order.
    pub fn tensors(&self) -> [&[f32]; 6] {
        [&self.w1, &self.b1, &self.w_pi, &self.b_pi, &self.w_v, &self.b_v]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f32>; 6] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w_pi,
            &mut self.b_pi,
            &mut self.w_v,
            &mut self.b_v,
        ]
    }

    pub fn iter(&self) -> impl Iterator<Item = &f32> {
        self.tensors().into_iter().flatten()
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    /// Checks tensor lengths against `spec`.
    pub fn check_shapes(&self) -> Result<(), NnError> {
        for (t, expected) in self.tensors().iter().zip(self.spec.tensor_lens()) {
            if t.len() != expected {
                return Err(NnError::ShapeMismatch { expected, got: t.len() });
            }
        }
        Ok(())
    }
}

/// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
pub fn init_params(spec: NetSpec, seed: u64) -> Params {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Params::zeros(spec);
    let mut fill = |w: &mut Vec<f32>, fan_in: usize, fan_out: usize| {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
        for v in w.iter_mut() {
            *v = rng.gen_range(-limit..=limit);
        }
    };
    fill(&mut params.w1, spec.obs_dim, spec.hidden_dim);
    fill(&mut params.w_pi, spec.hidden_dim, spec.num_actions);
    fill(&mut params.w_v, spec.hidden_dim, 1);
    params
}

/// `bias + W x` for row-major `W`. Rows are processed in blocks with
/// independent accumulators; each row still sums its terms in index order.
fn affine(w: &[f32], bias: &[f32], x: &[f32]) -> Vec<f32> {
    const BLOCK: usize = 8;
    let n = x.len();
    let mut out = bias.to_vec();
    for (rows, acc) in w.chunks(BLOCK * n).zip(out.chunks_mut(BLOCK)) {
        if acc.len() == BLOCK {
            let mut a = [0.0f32; BLOCK];
            a.copy_from_slice(acc);
            let rows: [&[f32]; BLOCK] = std::array::from_fn(|r| &rows[r * n..(r + 1) * n]);
            for (i, &xi) in x.iter().enumerate() {
                for r in 0..BLOCK {
                    a[r] += rows[r][i] * xi;
                }
            }
            acc.copy_from_slice(&a);
        } else {
            for (r, ar) in acc.iter_mut().enumerate() {
                *ar = rows[r * n..(r + 1) * n]
                    .iter()
                    .zip(x)
                    .fold(*ar, |s, (w, xi)| s + w * xi);
            }
        }
    }
    out
}

pub fn forward(params: &Params, obs: &[f32]) -> Result<(Vec<f32>, f32), NnError> {
    let obs_dim = params.spec.obs_dim;
    if obs.len() != obs_dim {
        return Err(NnError::ShapeMismatch {
            expected: obs_dim,
            got: obs.len(),
        });
    }
    let hidden: Vec<f32> = affine(&params.w1, &params.b1, obs).into_iter().map(f32::tanh).collect();
    let logits = affine(&params.w_pi, &params.b_pi, &hidden);
    let value = params
        .w_v
        .iter()
        .zip(&hidden)
        .fold(params.b_v[0], |acc, (w, h)| acc + w * h);
    Ok((logits, value))
}

pub fn log_softmax(logits: &[f32]) -> Vec<f32> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let sum: f32 = logits.iter().map(|z| (z - max).exp()).sum();
    let lse = max + sum.ln();
    logits.iter().map(|z| z - lse).collect()
}

pub fn softmax(logits: &[f32]) -> Vec<f32> {
    log_softmax(logits).into_iter().map(f32::exp).collect()
}

/// Draws an action by inverse CDF over `softmax(logits)` using one uniform
/// `f32` from `rng`, and returns it with its log-probability.
pub fn sample_action<R: Rng + ?Sized>(logits: &[f32], rng: &mut R) -> (usize, f32) {
    let log_probs = log_softmax(logits);
    let u: f32 = rng.gen();
    let mut cumulative = 0.0f32;
    let mut chosen = None;
    let mut last_supported = 0;
    for (a, lp) in log_probs.iter().enumerate() {
        let p = lp.exp();
        if p > 0.0 {
            last_supported = a;
        }
        cumulative += p;
        if u < cumulative {
            chosen = Some(a);
            break;
        }
    }
    // Rounding can leave the cumulative sum just below 1.
    let action = chosen.unwrap_or(last_supported);
    (action, log_probs[action])
}

/// Network head outputs for a batch of trajectories, in f64.
///
/// `logits[i]` is `T_i × A` row-major, `values[i]` has `T_i + 1` entries
/// (the last one is the bootstrap value).
#[derive(Debug, Clone)]
pub struct HeadOutputs {
    pub logits: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
}

/// Loss value, metrics, and the derivative of the loss w.r.t. every head
/// output. Shapes mirror [`HeadOutputs`].
#[derive(Debug, Clone)]
pub struct LossOutput<M> {
    pub loss: f64,
    pub metrics: M,
    pub d_logits: Vec<Vec<f64>>,
    pub d_values: Vec<Vec<f64>>,
}

/// A differentiable objective over network head outputs. Implementations
/// return the gradient w.r.t. the heads; [`grad`] handles the network.
pub trait LossFn {
    type Metrics;

    fn evaluate(&self, batch: &[TrajectoryBatch], heads: &HeadOutputs) -> LossOutput<Self::Metrics>;
}

struct Activations {
    hidden: Vec<f64>,
    logits: Vec<f64>,
    value: f64,
}

fn forward_f64(params: &Params, obs: &[f32]) -> Activations {
    let NetSpec {
        obs_dim,
        hidden_dim,
        num_actions,
    } = params.spec;
    let hidden: Vec<f64> = (0..hidden_dim)
        .map(|j| {
            let row = &params.w1[j * obs_dim..(j + 1) * obs_dim];
            let pre = row
                .iter()
                .zip(obs)
                .fold(params.b1[j] as f64, |acc, (&w, &x)| acc + w as f64 * x as f64);
            pre.tanh()
        })
        .collect();
    let logits = (0..num_actions)
        .map(|k| {
            let row = &params.w_pi[k * hidden_dim..(k + 1) * hidden_dim];
            row.iter()
                .zip(&hidden)
                .fold(params.b_pi[k] as f64, |acc, (&w, &h)| acc + w as f64 * h)
        })
        .collect();
    let value = params
        .w_v
        .iter()
        .zip(&hidden)
        .fold(params.b_v[0] as f64, |acc, (&w, &h)| acc + w as f64 * h);
    Activations { hidden, logits, value }
}

struct GradAccum {
    w1: Vec<f64>,
    b1: Vec<f64>,
    w_pi: Vec<f64>,
    b_pi: Vec<f64>,
    w_v: Vec<f64>,
    b_v: Vec<f64>,
}

impl GradAccum {
    fn new(spec: NetSpec) -> Self {
        let [l1, l2, l3, l4, l5, l6] = spec.tensor_lens();
        Self {
            w1: vec![0.0; l1],
            b1: vec![0.0; l2],
            w_pi: vec![0.0; l3],
            b_pi: vec![0.0; l4],
            w_v: vec![0.0; l5],
            b_v: vec![0.0; l6],
        }
    }

    fn backprop(&mut self, params: &Params, obs: &[f32], act: &Activations, d_logits: &[f64], d_value: f64) {
        let NetSpec {
            obs_dim,
            hidden_dim,
            num_actions,
        } = params.spec;
        let mut d_hidden = vec![0.0f64; hidden_dim];
        for k in 0..num_actions {
            let g = d_logits[k];
            if g == 0.0 {
                continue;
            }
            self.b_pi[k] += g;
            let row = k * hidden_dim;
            for j in 0..hidden_dim {
                self.w_pi[row + j] += g * act.hidden[j];
                d_hidden[j] += g * params.w_pi[row + j] as f64;
            }
        }
        if d_value != 0.0 {
            self.b_v[0] += d_value;
            for j in 0..hidden_dim {
                self.w_v[j] += d_value * act.hidden[j];
                d_hidden[j] += d_value * params.w_v[j] as f64;
            }
        }
        for j in 0..hidden_dim {
            let h = act.hidden[j];
            let d_pre = d_hidden[j] * (1.0 - h * h);
            if d_pre == 0.0 {
                continue;
            }
            self.b1[j] += d_pre;
            let row = j * obs_dim;
            for (i, &x) in obs.iter().enumerate() {
                self.w1[row + i] += d_pre * x as f64;
            }
        }
    }

    fn into_params(self, spec: NetSpec) -> Params {
        let cast = |v: Vec<f64>| v.into_iter().map(|g| g as f32).collect();
        Params {
            spec,
            w1: cast(self.w1),
            b1: cast(self.b1),
            w_pi: cast(self.w_pi),
            b_pi: cast(self.b_pi),
            w_v: cast(self.w_v),
            b_v: cast(self.b_v),
            version: 0,
        }
    }
}

fn check_batch(params: &Params, batch: &[TrajectoryBatch]) -> Result<(), NnError> {
    if batch.is_empty() || batch.iter().all(|t| t.is_empty()) {
        return Err(NnError::EmptyBatch);
    }
    for traj in batch {
        if traj.obs_dim != params.spec.obs_dim {
            return Err(NnError::ShapeMismatch {
                expected: params.spec.obs_dim,
                got: traj.obs_dim,
            });
        }
        if traj.num_actions != params.spec.num_actions {
            return Err(NnError::ShapeMismatch {
                expected: params.spec.num_actions,
                got: traj.num_actions,
            });
        }
    }
    Ok(())
}

/// Evaluates `loss_fn` on `batch` and returns the loss, its exact gradient
/// with respect to every parameter (shaped like `params`, version 0), and the
/// loss metrics.
pub fn grad<L: LossFn + ?Sized>(
    params: &Params,
    batch: &[TrajectoryBatch],
    loss_fn: &L,
) -> Result<(f64, Params, L::Metrics), NnError> {
    params.check_shapes()?;
    check_batch(params, batch)?;

    let activations: Vec<Vec<Activations>> = batch
        .iter()
        .map(|traj| {
            (0..traj.len())
                .map(|t| forward_f64(params, traj.observation(t)))
                .chain(std::iter::once(forward_f64(params, &traj.bootstrap_observation)))
                .collect()
        })
        .collect();
    let heads = HeadOutputs {
        logits: activations
            .iter()
            .map(|acts| {
                acts[..acts.len() - 1]
                    .iter()
                    .flat_map(|a| a.logits.iter().copied())
                    .collect()
            })
            .collect(),
        values: activations
            .iter()
            .map(|acts| acts.iter().map(|a| a.value).collect())
            .collect(),
    };

    let out = loss_fn.evaluate(batch, &heads);
    if !out.loss.is_finite() {
        return Err(NnError::NonFiniteLoss(format!("loss = {}", out.loss)));
    }

    let a = params.spec.num_actions;
    // The bootstrap position has a value head only.
    let no_logit_grad = vec![0.0; a];
    let mut accum = GradAccum::new(params.spec);
    for (i, traj) in batch.iter().enumerate() {
        for (t, act) in activations[i].iter().enumerate() {
            let (obs, d_logits) = if t < traj.len() {
                (traj.observation(t), &out.d_logits[i][t * a..(t + 1) * a])
            } else {
                (&traj.bootstrap_observation[..], &no_logit_grad[..])
            };
            accum.backprop(params, obs, act, d_logits, out.d_values[i][t]);
        }
    }
    let grads = accum.into_params(params.spec);
    if !grads.is_finite() {
        return Err(NnError::NonFiniteLoss("gradient has non-finite entries".into()));
    }
    Ok((out.loss, grads, out.metrics))
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub m: Params,
    pub v: Params,
    pub t: u64,
}

impl OptState {
    pub fn new(spec: NetSpec) -> Self {
        Self {
            m: Params::zeros(spec),
            v: Params::zeros(spec),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update. The returned params carry `version + 1`.
pub fn adam_step(params: &Params, opt: &OptState, grads: &Params, lr: f32) -> (Params, OptState) {
    assert_eq!(params.spec, grads.spec, "gradient shape does not match params");
    assert_eq!(params.spec, opt.m.spec, "optimizer state shape does not match params");
    let mut next = params.clone();
    let mut next_opt = opt.clone();
    next_opt.t += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(next_opt.t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(next_opt.t as i32);
    let lr = lr as f64;

    let m_tensors = next_opt.m.tensors_mut();
    let v_tensors = next_opt.v.tensors_mut();
    for (((w, g), m), v) in next
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(m_tensors)
        .zip(v_tensors)
    {
        for k in 0..w.len() {
            let g = g[k] as f64;
            let mk = ADAM_BETA1 * m[k] as f64 + (1.0 - ADAM_BETA1) * g;
            let vk = ADAM_BETA2 * v[k] as f64 + (1.0 - ADAM_BETA2) * g * g;
            m[k] = mk as f32;
            v[k] = vk as f32;
            let m_hat = mk / bc1;
            let v_hat = vk / bc2;
            w[k] = (w[k] as f64 - lr * m_hat / (v_hat.sqrt() + ADAM_EPS)) as f32;
        }
    }
    next.version = params.version + 1;
    (next, next_opt)
}
