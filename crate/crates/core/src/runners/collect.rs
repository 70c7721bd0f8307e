//! Experience collection shared by every architecture.

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use crate::envcore::{EnvSpec, Environment, TimeStep};
use crate::nn::{forward, sample_action, Params};
use crate::trajectory::TrajectoryBatch;

use super::{ParamStore, RunError};

/// One served or locally computed action, kept for offline recomputation.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditRecord {
    pub agent_id: usize,
    pub version: u64,
    pub params: Arc<Params>,
    pub observation: Vec<f32>,
    pub action: usize,
    pub log_prob: f32,
    pub value: f32,
}

pub(crate) trait ActionSource {
    fn begin_episode(&mut self) -> Result<(), RunError> {
        Ok(())
    }

    fn begin_step(&mut self) -> Result<(), RunError> {
        Ok(())
    }

    /// Returns the action and its behavior log-probability.
    fn act(&mut self, agent: usize, observation: &[f32]) -> Result<(usize, f32), RunError>;

    fn take_audit(&mut self) -> Vec<AuditRecord> {
        Vec::new()
    }
}

/// Acts with a local copy of the population's parameters.
pub(crate) struct LocalPolicy<'a> {
    pub params: Vec<Arc<Params>>,
    pub rng: ChaCha8Rng,
    /// Refreshes from here when set.
    pub store: Option<&'a ParamStore>,
    pub sync_interval: u64,
    pub steps_since_sync: u64,
    pub audit: Vec<AuditRecord>,
    pub audit_cap: usize,
}

impl<'a> LocalPolicy<'a> {
    pub fn new(params: Vec<Arc<Params>>, rng: ChaCha8Rng) -> Self {
        Self {
            params,
            rng,
            store: None,
            sync_interval: 0,
            steps_since_sync: 0,
            audit: Vec::new(),
            audit_cap: 0,
        }
    }

    fn refresh(&mut self) {
        if let Some(store) = self.store {
            self.params = store.snapshot();
            self.steps_since_sync = 0;
        }
    }
}

impl ActionSource for LocalPolicy<'_> {
    fn begin_episode(&mut self) -> Result<(), RunError> {
        if self.sync_interval == 0 {
            self.refresh();
        }
        Ok(())
    }

    fn begin_step(&mut self) -> Result<(), RunError> {
        if self.sync_interval > 0 && self.steps_since_sync >= self.sync_interval {
            self.refresh();
        }
        self.steps_since_sync += 1;
        Ok(())
    }

    fn act(&mut self, agent: usize, observation: &[f32]) -> Result<(usize, f32), RunError> {
        let params = &self.params[agent];
        let (logits, value) = forward(params, observation).map_err(|e| RunError::Worker(e.to_string()))?;
        let (action, log_prob) = sample_action(&logits, &mut self.rng);
        if self.audit.len() < self.audit_cap {
            self.audit.push(AuditRecord {
                agent_id: agent,
                version: params.version,
                params: params.clone(),
                observation: observation.to_vec(),
                action,
                log_prob,
                value,
            });
        }
        Ok((action, log_prob))
    }

    fn take_audit(&mut self) -> Vec<AuditRecord> {
        std::mem::take(&mut self.audit)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct FinishedEpisode {
    pub agent_id: usize,
    pub episode_return: f64,
    /// Environment steps into the unroll at which the episode ended.
    pub offset: usize,
}

#[derive(Debug, Default)]
pub(crate) struct Unroll {
    /// One trajectory per player.
    pub trajectories: Vec<TrajectoryBatch>,
    pub episodes: Vec<FinishedEpisode>,
    pub steps: usize,
}

/// Runs one environment, assigning population members to player slots
/// round-robin at the start of every episode.
pub(crate) struct Collector {
    env: Box<dyn Environment>,
    spec: EnvSpec,
    population: usize,
    next_agent: usize,
    assignment: Vec<usize>,
    returns: Vec<f64>,
    timestep: Option<TimeStep>,
}

impl Collector {
    pub fn new(env: Box<dyn Environment>, population: usize, first_agent: usize) -> Self {
        let spec = env.spec();
        Self {
            env,
            population,
            next_agent: first_agent % population,
            assignment: vec![0; spec.num_players],
            returns: vec![0.0; spec.num_players],
            spec,
            timestep: None,
        }
    }

    /// Collects up to `max_steps` steps, stopping early at the end of an
    /// episode. Each player's trajectory bootstraps from its latest
    /// observation.
    pub fn collect(&mut self, source: &mut dyn ActionSource, max_steps: usize) -> Result<Unroll, RunError> {
        let n = self.spec.num_players;
        if self.timestep.as_ref().is_none_or(TimeStep::is_last) {
            for (p, slot) in self.assignment.iter_mut().enumerate() {
                *slot = (self.next_agent + p) % self.population;
            }
            self.next_agent = (self.next_agent + n) % self.population;
            self.returns.iter_mut().for_each(|r| *r = 0.0);
            source.begin_episode()?;
            self.timestep = Some(self.env.reset());
        }
        let mut ts = self.timestep.take().expect("set above");
        let mut unroll = Unroll {
            trajectories: self
                .assignment
                .iter()
                .map(|&a| TrajectoryBatch::new(a as u32, self.spec.obs_dim, self.spec.num_actions))
                .collect(),
            ..Unroll::default()
        };
        let mut actions = vec![0; n];
        let mut log_probs = vec![0.0; n];
        while unroll.steps < max_steps {
            source.begin_step()?;
            for p in 0..n {
                (actions[p], log_probs[p]) = source.act(self.assignment[p], &ts.observations[p])?;
            }
            let next = self.env.step(&actions)?;
            for p in 0..n {
                unroll.trajectories[p].push(
                    &ts.observations[p],
                    actions[p],
                    next.rewards[p],
                    next.discount,
                    log_probs[p],
                );
                self.returns[p] += next.rewards[p] as f64;
            }
            unroll.steps += 1;
            ts = next;
            if ts.is_last() {
                for p in 0..n {
                    unroll.episodes.push(FinishedEpisode {
                        agent_id: self.assignment[p],
                        episode_return: self.returns[p],
                        offset: unroll.steps,
                    });
                }
                break;
            }
        }
        for (traj, obs) in unroll.trajectories.iter_mut().zip(&ts.observations) {
            traj.bootstrap_observation = obs.clone();
        }
        self.timestep = Some(ts);
        Ok(unroll)
    }
}
