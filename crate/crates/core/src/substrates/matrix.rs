//! Repeated two-player matrix games.
//!
//! The action is the resource choice itself; there is no gridworld collection
//! phase. Each player observes `[own last action one-hot, opponent last action
//! one-hot, first-round flag]`, so `obs_dim = 2A + 1`.

use crate::envcore::{EnvError, EnvSpec, Environment, EpisodeClock, TimeStep};

pub const ROUNDS_PER_EPISODE: usize = 10;

pub const ROCK: usize = 0;
pub const PAPER: usize = 1;
pub const SCISSORS: usize = 2;

pub const COOPERATE: usize = 0;
pub const DEFECT: usize = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixSpec {
    pub name: &'static str,
    /// `payoff_row[a1][a2]` is the payoff to player 1.
    pub payoff_row: Vec<Vec<f32>>,
    /// `payoff_col[a1][a2]` is the payoff to player 2.
    pub payoff_col: Vec<Vec<f32>>,
    pub num_actions: usize,
    pub rounds_per_episode: usize,
}

impl MatrixSpec {
    /// Zero-sum rock-paper-scissors with ±1 payoffs.
    pub fn rock_paper_scissors() -> Self {
        let row = vec![vec![0.0, -1.0, 1.0], vec![1.0, 0.0, -1.0], vec![-1.0, 1.0, 0.0]];
        let col = row.iter().map(|r| r.iter().map(|&p| -p).collect()).collect();
        Self {
            name: "rps_matrix",
            payoff_row: row,
            payoff_col: col,
            num_actions: 3,
            rounds_per_episode: ROUNDS_PER_EPISODE,
        }
    }

    /// Prisoner's dilemma with T=5, R=3, P=1, S=0.
    pub fn prisoners_dilemma() -> Self {
        let row = vec![vec![3.0, 0.0], vec![5.0, 1.0]];
        let col = (0..2).map(|i| (0..2).map(|j| row[j][i]).collect()).collect();
        Self {
            name: "pd_matrix",
            payoff_row: row,
            payoff_col: col,
            num_actions: 2,
            rounds_per_episode: ROUNDS_PER_EPISODE,
        }
    }

    pub fn obs_dim(&self) -> usize {
        2 * self.num_actions + 1
    }
}

/// Payoffs `(r1, r2)` for the joint action `(a1, a2)`.
///
/// Panics if either action is out of range.
pub fn matrix_payoff(spec: &MatrixSpec, a1: usize, a2: usize) -> (f32, f32) {
    assert!(
        a1 < spec.num_actions && a2 < spec.num_actions,
        "actions ({a1}, {a2}) out of range for {} actions",
        spec.num_actions
    );
    (spec.payoff_row[a1][a2], spec.payoff_col[a1][a2])
}

pub struct MatrixGame {
    spec: MatrixSpec,
    clock: EpisodeClock,
    last_actions: Option<[usize; 2]>,
}

impl MatrixGame {
    pub fn new(spec: MatrixSpec) -> Self {
        let env_spec = EnvSpec {
            num_players: 2,
            obs_dim: spec.obs_dim(),
            num_actions: spec.num_actions,
            max_episode_len: spec.rounds_per_episode,
        };
        Self {
            spec,
            clock: EpisodeClock::new(env_spec),
            last_actions: None,
        }
    }

    pub fn matrix(&self) -> &MatrixSpec {
        &self.spec
    }

    fn observation(&self, player: usize) -> Vec<f32> {
        let a = self.spec.num_actions;
        let mut obs = vec![0.0; 2 * a + 1];
        match self.last_actions {
            Some(last) => {
                obs[last[player]] = 1.0;
                obs[a + last[1 - player]] = 1.0;
            }
            None => obs[2 * a] = 1.0,
        }
        obs
    }

    fn observations(&self) -> Vec<Vec<f32>> {
        vec![self.observation(0), self.observation(1)]
    }
}

impl Environment for MatrixGame {
    fn reset(&mut self) -> TimeStep {
        self.clock.reset();
        self.last_actions = None;
        TimeStep::first(self.observations())
    }

    fn step(&mut self, actions: &[usize]) -> Result<TimeStep, EnvError> {
        self.clock.check(actions)?;
        let (r1, r2) = matrix_payoff(&self.spec, actions[0], actions[1]);
        self.last_actions = Some([actions[0], actions[1]]);
        // The game ends after the final round: that is a termination.
        let over = self.clock.tick() + 1 >= self.spec.rounds_per_episode;
        let (step_type, discount) = self.clock.advance(over);
        Ok(TimeStep {
            step_type,
            rewards: vec![r1, r2],
            discount,
            observations: self.observations(),
        })
    }

    fn spec(&self) -> EnvSpec {
        EnvSpec {
            num_players: 2,
            obs_dim: self.spec.obs_dim(),
            num_actions: self.spec.num_actions,
            max_episode_len: self.spec.rounds_per_episode,
        }
    }
}
