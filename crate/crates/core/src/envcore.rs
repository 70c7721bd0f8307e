//! Multi-agent environment interface in the style of `dm_env`.
//!
//! Every player acts simultaneously on each tick. A [`TimeStep`] carries one
//! reward and one observation per player plus a single shared discount.
//! Episodes follow `FIRST MID* LAST`; a `LAST` step with discount `0.0` is a
//! termination, with discount `1.0` a truncation.

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StepType {
    First,
    Mid,
    Last,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeStep {
    pub step_type: StepType,
    pub rewards: Vec<f32>,
    pub discount: f32,
    pub observations: Vec<Vec<f32>>,
}

impl TimeStep {
    pub fn first(observations: Vec<Vec<f32>>) -> Self {
        let n = observations.len();
        Self {
            step_type: StepType::First,
            rewards: vec![0.0; n],
            discount: 1.0,
            observations,
        }
    }

    pub fn is_first(&self) -> bool {
        self.step_type == StepType::First
    }

    pub fn is_last(&self) -> bool {
        self.step_type == StepType::Last
    }

    /// True for a `LAST` step produced by termination rather than truncation.
    pub fn is_terminal(&self) -> bool {
        self.is_last() && self.discount == 0.0
    }
}

/// Static description of an environment. Agents are homogeneous, so a single
/// observation size and action count apply to every player.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EnvSpec {
    pub num_players: usize,
    pub obs_dim: usize,
    pub num_actions: usize,
    pub max_episode_len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnvError {
    #[error("step called after the episode ended; call reset first")]
    StepAfterEnd,
    #[error("expected {expected} actions, got {got}")]
    BadActionCount { expected: usize, got: usize },
    #[error("action {action} for player {player} is outside [0, {num_actions})")]
    ActionOutOfRange {
        player: usize,
        action: usize,
        num_actions: usize,
    },
}

pub trait Environment: Send {
    /// Starts a new episode, abandoning any episode in progress.
    fn reset(&mut self) -> TimeStep;

    /// Advances all players by one simultaneous tick.
    fn step(&mut self, actions: &[usize]) -> Result<TimeStep, EnvError>;

    fn spec(&self) -> EnvSpec;
}

impl<E: Environment + ?Sized> Environment for Box<E> {
    fn reset(&mut self) -> TimeStep {
        (**self).reset()
    }

    fn step(&mut self, actions: &[usize]) -> Result<TimeStep, EnvError> {
        (**self).step(actions)
    }

    fn spec(&self) -> EnvSpec {
        (**self).spec()
    }
}

/// Episode bookkeeping shared by the concrete environments: validates joint
/// actions, counts ticks, and decides when the episode is over.
#[derive(Debug, Clone)]
pub struct EpisodeClock {
    spec: EnvSpec,
    tick: usize,
    ended: bool,
}

impl EpisodeClock {
    /// A fresh clock is in the "ended" state so stepping before the first
    /// reset is rejected.
    pub fn new(spec: EnvSpec) -> Self {
        Self {
            spec,
            tick: 0,
            ended: true,
        }
    }

    pub fn reset(&mut self) {
        self.tick = 0;
        self.ended = false;
    }

    pub fn tick(&self) -> usize {
        self.tick
    }

    pub fn check(&self, actions: &[usize]) -> Result<(), EnvError> {
        if self.ended {
            return Err(EnvError::StepAfterEnd);
        }
        validate_actions(actions, self.spec.num_players, self.spec.num_actions)
    }

    /// Records one tick and returns the step type and discount of the
    /// resulting time step.
    pub fn advance(&mut self, terminated: bool) -> (StepType, f32) {
        self.tick += 1;
        if terminated {
            self.ended = true;
            (StepType::Last, 0.0)
        } else if self.tick >= self.spec.max_episode_len {
            self.ended = true;
            (StepType::Last, 1.0)
        } else {
            (StepType::Mid, 1.0)
        }
    }
}

pub fn validate_actions(actions: &[usize], num_players: usize, num_actions: usize) -> Result<(), EnvError> {
    if actions.len() != num_players {
        return Err(EnvError::BadActionCount {
            expected: num_players,
            got: actions.len(),
        });
    }
    if let Some((player, &action)) = actions.iter().enumerate().find(|(_, &a)| a >= num_actions) {
        return Err(EnvError::ActionOutOfRange {
            player,
            action,
            num_actions,
        });
    }
    Ok(())
}
