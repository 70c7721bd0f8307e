//! Reference implementations shared by the integration tests. Everything here
//! is written from the definitions, independently of the library code.

#![allow(dead_code)]

use marl_core::nn::{init_params, NetSpec, Params};
use marl_core::replay::{BufferStats, Replay, ReplayBuffer, ReplayError};
use marl_core::trajectory::TrajectoryBatch;
use marl_core::vtrace::VTraceConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One V-trace problem: `values` has `T + 1` entries, `discounts[t]` already
/// includes γ and the termination mask.
#[derive(Debug, Clone)]
pub struct VTraceCase {
    pub rhos: Vec<f64>,
    pub rewards: Vec<f64>,
    pub discounts: Vec<f64>,
    pub values: Vec<f64>,
    pub rho_bar: f64,
    pub c_bar: f64,
}

pub fn random_vtrace_case(rng: &mut ChaCha8Rng) -> VTraceCase {
    let t = rng.gen_range(1..=6);
    let gamma = rng.gen_range(0.5..1.0);
    // Clip thresholds travel through the f32 config.
    let rho_bar = rng.gen_range(0.5f32..2.0);
    let c_bar = rho_bar * rng.gen_range(0.3f32..=1.0);
    VTraceCase {
        rhos: (0..t).map(|_| rng.gen_range(0.05..3.0)).collect(),
        rewards: (0..t).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        discounts: (0..t).map(|_| if rng.gen_bool(0.2) { 0.0 } else { gamma }).collect(),
        values: (0..=t).map(|_| rng.gen_range(-3.0..3.0)).collect(),
        rho_bar: rho_bar as f64,
        c_bar: c_bar as f64,
    }
}

impl VTraceCase {
    pub fn config(&self) -> VTraceConfig {
        VTraceConfig {
            rho_bar: self.rho_bar as f32,
            c_bar: self.c_bar as f32,
            ..VTraceConfig::default()
        }
    }

    fn rho(&self, t: usize) -> f64 {
        self.rhos[t].min(self.rho_bar)
    }

    fn c(&self, t: usize) -> f64 {
        self.rhos[t].min(self.c_bar)
    }

    fn delta(&self, t: usize) -> f64 {
        self.rho(t) * (self.rewards[t] + self.discounts[t] * self.values[t + 1] - self.values[t])
    }

    /// `v_s = V(x_s) + Σ_{t≥s} (Π_{i=s}^{t-1} γ_i c_i) δ_t`, term by term.
    pub fn vs(&self, s: usize) -> f64 {
        let big_t = self.rhos.len();
        if s == big_t {
            return self.values[big_t];
        }
        let mut total = self.values[s];
        for t in s..big_t {
            let mut weight = 1.0;
            for i in s..t {
                weight *= self.discounts[i] * self.c(i);
            }
            total += weight * self.delta(t);
        }
        total
    }

    pub fn pg_advantage(&self, s: usize) -> f64 {
        self.rho(s) * (self.rewards[s] + self.discounts[s] * self.vs(s + 1) - self.values[s])
    }
}

/// Discounted return-to-go with bootstrap: `Σ_k (Π_{i<k} γ_i) r_k + (Π γ_i) V(x_T)`.
pub fn n_step_return(rewards: &[f64], discounts: &[f64], bootstrap: f64, s: usize) -> f64 {
    let mut total = 0.0;
    let mut weight = 1.0;
    for t in s..rewards.len() {
        total += weight * rewards[t];
        weight *= discounts[t];
    }
    total + weight * bootstrap
}

/// Parameters in f64, laid out like [`Params`].
#[derive(Debug, Clone)]
pub struct Net {
    pub spec: NetSpec,
    pub tensors: Vec<Vec<f64>>,
}

impl Net {
    pub fn from_params(p: &Params) -> Self {
        Self {
            spec: p.spec,
            tensors: p
                .tensors()
                .iter()
                .map(|t| t.iter().map(|&x| x as f64).collect())
                .collect(),
        }
    }

    /// Logits and value for one observation.
    pub fn forward(&self, obs: &[f32]) -> (Vec<f64>, f64) {
        let NetSpec {
            obs_dim,
            hidden_dim,
            num_actions,
        } = self.spec;
        let [w1, b1, wp, bp, wv, bv] = [0, 1, 2, 3, 4, 5].map(|i| &self.tensors[i]);
        let mut hidden = vec![0.0; hidden_dim];
        for j in 0..hidden_dim {
            let mut s = b1[j];
            for i in 0..obs_dim {
                s += w1[j * obs_dim + i] * obs[i] as f64;
            }
            hidden[j] = s.tanh();
        }
        let mut logits = vec![0.0; num_actions];
        for k in 0..num_actions {
            let mut s = bp[k];
            for j in 0..hidden_dim {
                s += wp[k * hidden_dim + j] * hidden[j];
            }
            logits[k] = s;
        }
        let mut value = bv[0];
        for j in 0..hidden_dim {
            value += wv[j] * hidden[j];
        }
        (logits, value)
    }
}

pub fn log_probs(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
    logits.iter().map(|l| l - m - z.ln()).collect()
}

/// V-trace targets `(vs, pg_advantages)` of every trajectory at `net`.
pub fn targets(net: &Net, batch: &[TrajectoryBatch], cfg: &VTraceConfig) -> Vec<(Vec<f64>, Vec<f64>)> {
    batch
        .iter()
        .map(|traj| {
            let t_len = traj.len();
            let mut values = Vec::new();
            let mut rhos = Vec::new();
            for t in 0..t_len {
                let (logits, v) = net.forward(traj.observation(t));
                values.push(v);
                let lp = log_probs(&logits)[traj.actions[t] as usize];
                rhos.push((lp - traj.behavior_log_probs[t] as f64).exp());
            }
            values.push(net.forward(&traj.bootstrap_observation).1);
            let case = VTraceCase {
                rhos,
                rewards: traj.rewards.iter().map(|&r| r as f64).collect(),
                discounts: traj.discounts.iter().map(|&d| cfg.gamma as f64 * d as f64).collect(),
                values,
                rho_bar: cfg.rho_bar as f64,
                c_bar: cfg.c_bar as f64,
            };
            (
                (0..t_len).map(|s| case.vs(s)).collect(),
                (0..t_len).map(|s| case.pg_advantage(s)).collect(),
            )
        })
        .collect()
}

/// The actor-critic loss at `net` with the V-trace targets held fixed.
pub fn surrogate_loss(net: &Net, batch: &[TrajectoryBatch], cfg: &VTraceConfig, fixed: &[(Vec<f64>, Vec<f64>)]) -> f64 {
    let mut policy = 0.0;
    let mut value = 0.0;
    let mut entropy = 0.0;
    let mut n = 0usize;
    for (traj, (vs, adv)) in batch.iter().zip(fixed) {
        for t in 0..traj.len() {
            let (logits, v) = net.forward(traj.observation(t));
            let lp = log_probs(&logits);
            policy -= lp[traj.actions[t] as usize] * adv[t];
            value += (vs[t] - v).powi(2);
            entropy -= lp.iter().map(|l| l.exp() * l).sum::<f64>();
            n += 1;
        }
    }
    let n = n as f64;
    policy / n + cfg.value_coef as f64 * value / n - cfg.entropy_coef as f64 * entropy / n
}

/// Central-difference gradient of [`surrogate_loss`], one entry per
/// parameter in tensor order.
pub fn finite_difference_grad(params: &Params, batch: &[TrajectoryBatch], cfg: &VTraceConfig, eps: f64) -> Vec<f64> {
    let base = Net::from_params(params);
    let fixed = targets(&base, batch, cfg);
    let mut out = Vec::new();
    for ti in 0..base.tensors.len() {
        for k in 0..base.tensors[ti].len() {
            let mut plus = base.clone();
            plus.tensors[ti][k] += eps;
            let mut minus = base.clone();
            minus.tensors[ti][k] -= eps;
            out.push(
                (surrogate_loss(&plus, batch, cfg, &fixed) - surrogate_loss(&minus, batch, cfg, &fixed)) / (2.0 * eps),
            );
        }
    }
    out
}

/// A small random network with non-zero biases and a batch of trajectories
/// for it. Behaviour log-probabilities come from an unrelated policy so that
/// the importance ratios vary.
pub fn random_problem(seed: u64) -> (Params, Vec<TrajectoryBatch>, VTraceConfig) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = NetSpec::new(rng.gen_range(1..=4), rng.gen_range(1..=5), rng.gen_range(2..=4));
    let mut params = init_params(spec, seed);
    for t in params.tensors_mut() {
        for x in t.iter_mut() {
            *x += rng.gen_range(-0.3..0.3);
        }
    }
    let mut batch = Vec::new();
    for _ in 0..rng.gen_range(1..=3) {
        let mut traj = TrajectoryBatch::new(0, spec.obs_dim, spec.num_actions);
        let t_len = rng.gen_range(1..=5);
        for t in 0..t_len {
            let obs: Vec<f32> = (0..spec.obs_dim).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let behaviour: Vec<f64> = (0..spec.num_actions).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let action = rng.gen_range(0..spec.num_actions);
            let discount = if t + 1 == t_len && rng.gen_bool(0.5) { 0.0 } else { 1.0 };
            traj.push(
                &obs,
                action,
                rng.gen_range(-1.0..1.0),
                discount,
                log_probs(&behaviour)[action] as f32,
            );
        }
        traj.bootstrap_observation = (0..spec.obs_dim).map(|_| rng.gen_range(-1.5..1.5)).collect();
        batch.push(traj);
    }
    let cfg = VTraceConfig {
        gamma: rng.gen_range(0.8..1.0),
        rho_bar: 1.0,
        c_bar: rng.gen_range(0.5..=1.0),
        value_coef: rng.gen_range(0.1..1.0),
        entropy_coef: rng.gen_range(0.0..0.1),
    };
    (params, batch, cfg)
}

/// Largest `|a - n| / max(|a|, |n|, floor)` over all entries.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub fn flatten(p: &Params) -> Vec<f64> {
    p.tensors().iter().flat_map(|t| t.iter().map(|&x| x as f64)).collect()
}

/// A one-step item tagged with its writer (`agent_id`) and per-writer
/// sequence number (the reward).
pub fn tagged_item(writer: u32, seq: u32) -> TrajectoryBatch {
    let mut t = TrajectoryBatch::new(writer, 2, 3);
    t.push(&[writer as f32, seq as f32], (seq % 3) as usize, seq as f32, 1.0, -1.0);
    t.bootstrap_observation = vec![0.5, -0.5];
    t
}

pub struct LocalReplay(pub std::sync::Arc<ReplayBuffer>);

impl Replay for LocalReplay {
    fn write(&self, item: TrajectoryBatch) -> Result<(), ReplayError> {
        self.0.write(item)
    }

    fn sample(&self, n: usize) -> Result<Vec<TrajectoryBatch>, ReplayError> {
        self.0.sample(n)
    }

    fn stats(&self) -> Result<BufferStats, ReplayError> {
        Ok(self.0.stats())
    }
}

#[derive(Debug)]
pub struct StressOutcome {
    pub written: u64,
    pub delivered: usize,
    pub stats: BufferStats,
    /// Every tag seen at most once and every delivered tag was written.
    pub exactly_once: bool,
    /// Each writer's items arrive in the order they were written.
    pub fifo: bool,
}

impl StressOutcome {
    pub fn holds(&self) -> bool {
        self.exactly_once
            && self.fifo
            && self.stats.is_conserved()
            && self.stats.current_size == 0
            && self.stats.items_written == self.written
            && self.stats.items_sampled == self.delivered as u64
            && self.stats.items_sampled + self.stats.items_dropped == self.written
    }
}

/// `writers` threads each write `per_writer` tagged items through their own
/// client, in bursts of 64, while one sampler takes batches of `batch` until
/// the buffer closes; whatever is left is drained at the end.
pub fn replay_stress(
    buffer: &std::sync::Arc<ReplayBuffer>,
    client: impl Fn() -> Box<dyn Replay>,
    writers: u32,
    per_writer: u32,
    batch: usize,
) -> StressOutcome {
    use std::collections::HashSet;
    use std::thread;

    let sampler = client();
    let sampler = thread::spawn(move || {
        let mut got = Vec::new();
        loop {
            match sampler.sample(batch) {
                Ok(items) => got.extend(items),
                Err(ReplayError::Closed) => return got,
                Err(e) => panic!("sampler: {e}"),
            }
        }
    });
    let handles: Vec<_> = (0..writers)
        .map(|w| {
            let c = client();
            thread::spawn(move || {
                for seq in 0..per_writer {
                    c.write(tagged_item(w, seq)).unwrap();
                    if seq % 64 == 0 {
                        thread::yield_now();
                    }
                }
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    buffer.close();
    let mut delivered = sampler.join().unwrap();
    delivered.extend(buffer.drain(usize::MAX));

    let tags: Vec<(u32, u32)> = delivered.iter().map(|t| (t.agent_id, t.rewards[0] as u32)).collect();
    let unique: HashSet<_> = tags.iter().collect();
    let exactly_once = unique.len() == tags.len()
        && delivered
            .iter()
            .zip(&tags)
            .all(|(item, &(w, s))| w < writers && s < per_writer && *item == tagged_item(w, s));
    let mut last = vec![None; writers as usize];
    let mut fifo = true;
    for &(w, s) in &tags {
        if let Some(slot) = last.get_mut(w as usize) {
            fifo &= slot.map_or(true, |prev| prev < s);
            *slot = Some(s);
        }
    }
    StressOutcome {
        written: writers as u64 * per_writer as u64,
        delivered: delivered.len(),
        stats: buffer.stats(),
        exactly_once,
        fifo,
    }
}
