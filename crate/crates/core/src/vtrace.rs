//! V-trace targets and the independent actor-critic learner.
//!
//! With `ρ_t = min(ρ̄, π/μ)`, `c_t = min(c̄, π/μ)` and
//! `δ_t = ρ_t (r_t + γ_t V(x_{t+1}) - V(x_t))`, where `γ_t` is the discount
//! already multiplied by the termination mask:
//!
//! ```text
//! v_T = V(x_T)
//! v_t = V(x_t) + δ_t + γ_t c_t (v_{t+1} - V(x_{t+1}))
//! A_t = ρ_t (r_t + γ_t v_{t+1} - V(x_t))
//! ```
//!
//! The loss is
//! `-mean[log π(a_t) A_t] + value_coef mean[(v_t - V(x_t))²] - entropy_coef mean[H(π_t)]`
//! with `A_t` and `v_t` held constant.

use num_traits::Float;
use thiserror::Error;

use crate::nn::{adam_step, grad, HeadOutputs, LossFn, LossOutput, NnError, OptState, Params};
use crate::trajectory::TrajectoryBatch;

/// Importance ratios are computed as `exp(min(log π - log μ, MAX_LOG_RATIO))`
/// so they stay finite; any ratio this large is clipped by `ρ̄` anyway.
const MAX_LOG_RATIO: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VTraceConfig {
    pub gamma: f32,
    pub rho_bar: f32,
    pub c_bar: f32,
    pub value_coef: f32,
    pub entropy_coef: f32,
}

impl Default for VTraceConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            rho_bar: 1.0,
            c_bar: 1.0,
            value_coef: 0.5,
            entropy_coef: 0.01,
        }
    }
}

impl VTraceConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(format!("gamma must be in (0, 1], got {}", self.gamma));
        }
        if !(self.rho_bar > 0.0) {
            return Err(format!("rho_bar must be positive, got {}", self.rho_bar));
        }
        if !(self.c_bar > 0.0 && self.c_bar <= self.rho_bar) {
            return Err(format!(
                "c_bar must be positive and at most rho_bar, got c_bar={} rho_bar={}",
                self.c_bar, self.rho_bar
            ));
        }
        if !(self.value_coef >= 0.0 && self.value_coef.is_finite()) {
            return Err(format!("value_coef must be non-negative, got {}", self.value_coef));
        }
        if !(self.entropy_coef >= 0.0 && self.entropy_coef.is_finite()) {
            return Err(format!("entropy_coef must be non-negative, got {}", self.entropy_coef));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VTraceError {
    #[error("non-finite {0}")]
    NonFiniteInput(&'static str),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct VTraceOutput<F> {
    pub vs: Vec<F>,
    pub pg_advantages: Vec<F>,
}

/// V-trace targets for one trajectory.
///
/// `discounts[t]` is `γ·d_t`; `values` has `T + 1` entries, the last being the
/// bootstrap value `V(x_T)`.
pub fn vtrace_targets<F: Float>(
    rhos: &[F],
    rewards: &[F],
    discounts: &[F],
    values: &[F],
    cfg: &VTraceConfig,
) -> Result<VTraceOutput<F>, VTraceError> {
    let t_len = rhos.len();
    if rewards.len() != t_len || discounts.len() != t_len || values.len() != t_len + 1 {
        return Err(VTraceError::LengthMismatch(format!(
            "rhos {}, rewards {}, discounts {}, values {} (expected T+1)",
            t_len,
            rewards.len(),
            discounts.len(),
            values.len()
        )));
    }
    for (name, xs) in [
        ("rhos", rhos),
        ("rewards", rewards),
        ("discounts", discounts),
        ("values", values),
    ] {
        if xs.iter().any(|x| !x.is_finite()) {
            return Err(VTraceError::NonFiniteInput(name));
        }
    }
    let rho_bar = F::from(cfg.rho_bar).unwrap();
    let c_bar = F::from(cfg.c_bar).unwrap();

    let mut vs = vec![F::zero(); t_len];
    let mut pg_advantages = vec![F::zero(); t_len];
    let mut next_vs = values[t_len];
    for t in (0..t_len).rev() {
        let rho = rhos[t].min(rho_bar);
        let c = rhos[t].min(c_bar);
        let delta = rho * (rewards[t] + discounts[t] * values[t + 1] - values[t]);
        vs[t] = values[t] + delta + discounts[t] * c * (next_vs - values[t + 1]);
        pg_advantages[t] = rho * (rewards[t] + discounts[t] * next_vs - values[t]);
        next_vs = vs[t];
    }
    Ok(VTraceOutput { vs, pg_advantages })
}

/// Loss components, averaged over every step in the batch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossMetrics {
    pub total: f64,
    pub policy_loss: f64,
    /// Mean squared value error, before `value_coef`.
    pub value_loss: f64,
    pub entropy: f64,
    /// Mean unclipped importance ratio `π/μ`.
    pub mean_rho: f64,
    pub steps: usize,
}

/// The V-trace actor-critic objective as a [`LossFn`].
#[derive(Debug, Clone, Copy)]
pub struct ActorCriticLoss {
    pub cfg: VTraceConfig,
}

fn log_softmax_f64(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|z| (z - max).exp()).sum();
    let lse = max + sum.ln();
    logits.iter().map(|z| z - lse).collect()
}

impl LossFn for ActorCriticLoss {
    type Metrics = LossMetrics;

    fn evaluate(&self, batch: &[TrajectoryBatch], heads: &HeadOutputs) -> LossOutput<LossMetrics> {
        let cfg = &self.cfg;
        let n: usize = batch.iter().map(|t| t.len()).sum();
        let inv_n = 1.0 / n as f64;
        let gamma = cfg.gamma as f64;
        let vc = cfg.value_coef as f64;
        let ec = cfg.entropy_coef as f64;

        let mut policy_sum = 0.0;
        let mut value_sum = 0.0;
        let mut entropy_sum = 0.0;
        let mut rho_sum = 0.0;
        let mut d_logits = Vec::with_capacity(batch.len());
        let mut d_values = Vec::with_capacity(batch.len());

        for (i, traj) in batch.iter().enumerate() {
            let t_len = traj.len();
            let a_dim = traj.num_actions;
            let values = &heads.values[i];
            let log_probs: Vec<Vec<f64>> = (0..t_len)
                .map(|t| log_softmax_f64(&heads.logits[i][t * a_dim..(t + 1) * a_dim]))
                .collect();
            let rhos: Vec<f64> = (0..t_len)
                .map(|t| {
                    let log_ratio = log_probs[t][traj.actions[t] as usize] - traj.behavior_log_probs[t] as f64;
                    log_ratio.min(MAX_LOG_RATIO).exp()
                })
                .collect();
            let rewards: Vec<f64> = traj.rewards.iter().map(|&r| r as f64).collect();
            let discounts: Vec<f64> = traj.discounts.iter().map(|&d| gamma * d as f64).collect();
            // Inputs are finite by construction (validated trajectories, finite heads).
            let targets = vtrace_targets(&rhos, &rewards, &discounts, values, cfg).unwrap_or_else(|_| VTraceOutput {
                vs: vec![f64::NAN; t_len],
                pg_advantages: vec![f64::NAN; t_len],
            });

            let mut dl = vec![0.0; t_len * a_dim];
            let mut dv = vec![0.0; t_len + 1];
            for t in 0..t_len {
                let lp = &log_probs[t];
                let action = traj.actions[t] as usize;
                let adv = targets.pg_advantages[t];
                let entropy: f64 = -lp.iter().map(|&l| l.exp() * l).sum::<f64>();
                policy_sum += -lp[action] * adv;
                let err = targets.vs[t] - values[t];
                value_sum += err * err;
                entropy_sum += entropy;
                rho_sum += rhos[t];

                for k in 0..a_dim {
                    let p = lp[k].exp();
                    let indicator = if k == action { 1.0 } else { 0.0 };
                    let d_policy = -adv * (indicator - p);
                    let d_entropy = ec * p * (lp[k] + entropy);
                    dl[t * a_dim + k] = inv_n * (d_policy + d_entropy);
                }
                dv[t] = inv_n * (-2.0 * vc * err);
            }
            d_logits.push(dl);
            d_values.push(dv);
        }

        let policy_loss = policy_sum * inv_n;
        let value_loss = value_sum * inv_n;
        let entropy = entropy_sum * inv_n;
        let total = policy_loss + vc * value_loss - ec * entropy;
        LossOutput {
            loss: total,
            metrics: LossMetrics {
                total,
                policy_loss,
                value_loss,
                entropy,
                mean_rho: rho_sum * inv_n,
                steps: n,
            },
            d_logits,
            d_values,
        }
    }
}

/// Loss and metrics of the actor-critic objective (no gradient).
pub fn actor_critic_loss(
    params: &Params,
    batch: &[TrajectoryBatch],
    cfg: &VTraceConfig,
) -> Result<(f64, LossMetrics), NnError> {
    let (loss, _, metrics) = grad(params, batch, &ActorCriticLoss { cfg: *cfg })?;
    Ok((loss, metrics))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub params: Params,
    pub opt: OptState,
}

/// Parameters and optimizer state for every agent in the population.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerState {
    pub agents: Vec<AgentState>,
}

impl LearnerState {
    pub fn new(params: Vec<Params>) -> Self {
        Self {
            agents: params
                .into_iter()
                .map(|p| AgentState {
                    opt: OptState::new(p.spec),
                    params: p,
                })
                .collect(),
        }
    }

    pub fn params(&self) -> Vec<Params> {
        self.agents.iter().map(|a| a.params.clone()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentLog {
    pub agent_id: usize,
    pub metrics: LossMetrics,
    pub version: u64,
}

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("agent {agent_id}: {source}")]
    Agent {
        agent_id: usize,
        #[source]
        source: NnError,
    },
    #[error("trajectory for unknown agent {0}")]
    UnknownAgent(u32),
}

/// One learner update: for each agent with trajectories in `batch`, compute
/// the actor-critic gradient on that agent's trajectories and apply one Adam
/// step. Agents without data are left untouched. Per-agent updates share no
/// state, so their order does not affect the result.
pub fn sgd_step(
    state: &LearnerState,
    batch: &[TrajectoryBatch],
    cfg: &VTraceConfig,
    lr: f32,
) -> Result<(LearnerState, Vec<AgentLog>), LearnError> {
    let population = state.agents.len();
    let mut per_agent: Vec<Vec<TrajectoryBatch>> = vec![Vec::new(); population];
    for traj in batch {
        let id = traj.agent_id as usize;
        if id >= population {
            return Err(LearnError::UnknownAgent(traj.agent_id));
        }
        per_agent[id].push(traj.clone());
    }

    let loss_fn = ActorCriticLoss { cfg: *cfg };
    let mut next = state.clone();
    let mut logs = Vec::new();
    for (agent_id, trajs) in per_agent.iter().enumerate() {
        if trajs.is_empty() {
            continue;
        }
        let agent = &state.agents[agent_id];
        let (_, grads, metrics) =
            grad(&agent.params, trajs, &loss_fn).map_err(|source| LearnError::Agent { agent_id, source })?;
        let (params, opt) = adam_step(&agent.params, &agent.opt, &grads, lr);
        logs.push(AgentLog {
            agent_id,
            metrics,
            version: params.version,
        });
        next.agents[agent_id] = AgentState { params, opt };
    }
    Ok((next, logs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg_gamma(gamma: f32) -> VTraceConfig {
        VTraceConfig {
            gamma,
            ..VTraceConfig::default()
        }
    }

    #[test]
    fn zero_rewards_and_values_give_zero_targets() {
        let out = vtrace_targets(
            &[0.5f64, 2.0, 1.0],
            &[0.0; 3],
            &[0.99; 3],
            &[0.0; 4],
            &VTraceConfig::default(),
        )
        .unwrap();
        assert_eq!(out.vs, vec![0.0; 3]);
        assert_eq!(out.pg_advantages, vec![0.0; 3]);
    }

    #[test]
    fn on_policy_reduces_to_return_to_go() {
        let out = vtrace_targets(&[1.0f32; 3], &[1.0; 3], &[1.0; 3], &[0.0; 4], &cfg_gamma(1.0)).unwrap();
        assert_eq!(out.vs, vec![3.0, 2.0, 1.0]);
        assert_eq!(out.pg_advantages, vec![3.0, 2.0, 1.0]);
    }

    #[test]
    fn termination_cuts_bootstrap() {
        let out = vtrace_targets(
            &[1.0f64; 2],
            &[1.0, 1.0],
            &[0.9, 0.0],
            &[0.0, 0.0, 100.0],
            &cfg_gamma(0.9),
        )
        .unwrap();
        assert!((out.vs[1] - 1.0).abs() < 1e-12);
        assert!((out.vs[0] - 1.9).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_lengths_and_non_finite() {
        let cfg = VTraceConfig::default();
        assert!(matches!(
            vtrace_targets(&[1.0f32; 2], &[0.0; 2], &[1.0; 2], &[0.0; 2], &cfg),
            Err(VTraceError::LengthMismatch(_))
        ));
        assert_eq!(
            vtrace_targets(&[1.0f32, f32::NAN], &[0.0; 2], &[1.0; 2], &[0.0; 3], &cfg),
            Err(VTraceError::NonFiniteInput("rhos"))
        );
    }

    #[test]
    fn config_validation() {
        assert!(VTraceConfig::default().validate().is_ok());
        let bad = VTraceConfig {
            c_bar: 2.0,
            ..VTraceConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = VTraceConfig {
            gamma: 0.0,
            ..VTraceConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
