//! Scenarios: a substrate plus a background population of bots.
//!
//! A scenario environment exposes only the focal player slots. Background
//! slots are driven internally from the substrate observation of their own
//! slot on every tick.

pub mod bots;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::checkpoint::CheckpointError;
use crate::envcore::{validate_actions, EnvError, EnvSpec, Environment, TimeStep};
use crate::substrates::{self, make_substrate, UnknownSubstrate, CRAMPED_KITCHEN, PD_MATRIX, RPS_MATRIX};

pub use bots::{bot_action, resolve_bot, BackgroundBot, BotPolicy};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("unknown substrate {0:?}")]
    UnknownSubstrate(String),
    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),
    #[error("unknown bot {bot:?} for substrate {substrate:?}")]
    UnknownBot { bot: String, substrate: String },
    #[error("checkpoint bot: {0}")]
    CheckpointLoad(#[from] CheckpointError),
    #[error("arity mismatch: {0}")]
    ArityMismatch(String),
}

impl From<UnknownSubstrate> for ScenarioError {
    fn from(e: UnknownSubstrate) -> Self {
        ScenarioError::UnknownSubstrate(e.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotAssignment {
    /// Focal players take the first slots, bots the rest.
    Fixed,
    /// Slots are permuted from the scenario RNG at every reset.
    ShuffledPerEpisode,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioSpec {
    pub name: String,
    pub substrate: String,
    pub background_bots: Vec<String>,
    pub focal_slots: usize,
    pub slot_assignment: SlotAssignment,
}

impl ScenarioSpec {
    fn builtin(substrate: &str, index: usize, bots: &[&str], slot_assignment: SlotAssignment) -> Self {
        Self {
            name: format!("{substrate}.scenario_{index}"),
            substrate: substrate.to_string(),
            background_bots: bots.iter().map(|b| b.to_string()).collect(),
            focal_slots: 1,
            slot_assignment,
        }
    }
}

/// The built-in scenario registry for `substrate`, in stable order.
pub fn list_scenarios(substrate: &str) -> Result<Vec<ScenarioSpec>, ScenarioError> {
    use SlotAssignment::{Fixed, ShuffledPerEpisode as Shuffled};
    let table: &[(&[&str], SlotAssignment)] = match substrate {
        RPS_MATRIX => &[
            (&["always_rock"], Fixed),
            (&["always_paper"], Fixed),
            (&["always_scissors"], Fixed),
            (&["uniform_random"], Shuffled),
            (&["best_response_to_last"], Shuffled),
        ],
        PD_MATRIX => &[
            (&["always_cooperate"], Fixed),
            (&["always_defect"], Fixed),
            (&["tit_for_tat"], Fixed),
            (&["uniform_random"], Shuffled),
            (&["best_response_to_last"], Shuffled),
        ],
        CRAMPED_KITCHEN => &[(&["kitchen_coordinator"], Fixed), (&["uniform_random"], Shuffled)],
        other => return Err(ScenarioError::UnknownSubstrate(other.to_string())),
    };
    Ok(table
        .iter()
        .enumerate()
        .map(|(i, (bots, assignment))| ScenarioSpec::builtin(substrate, i, bots, *assignment))
        .collect())
}

/// Looks up a registry scenario by its full name, e.g. `rps_matrix.scenario_0`.
pub fn find_scenario(name: &str) -> Result<ScenarioSpec, ScenarioError> {
    let (substrate, _) = name
        .split_once(".scenario_")
        .ok_or_else(|| ScenarioError::UnknownScenario(name.to_string()))?;
    if !substrates::is_substrate(substrate) {
        return Err(ScenarioError::UnknownScenario(name.to_string()));
    }
    list_scenarios(substrate)?
        .into_iter()
        .find(|s| s.name == name)
        .ok_or_else(|| ScenarioError::UnknownScenario(name.to_string()))
}

/// Splits an environment name into its substrate and optional scenario index.
/// A bare substrate name is the "substrate" pseudo-scenario with every slot
/// focal.
pub fn substrate_of(name: &str) -> &str {
    name.split_once(".scenario_").map_or(name, |(s, _)| s)
}

/// Builds the environment for a substrate name or a registry scenario name.
pub fn make_env(name: &str, seed: u64) -> Result<Box<dyn Environment>, ScenarioError> {
    if substrates::is_substrate(name) {
        return Ok(make_substrate(name, seed)?);
    }
    let spec = find_scenario(name)?;
    Ok(Box::new(make_scenario(&spec, seed)?))
}

pub struct ScenarioEnv {
    spec: ScenarioSpec,
    substrate: Box<dyn Environment>,
    substrate_spec: EnvSpec,
    bots: Vec<BackgroundBot>,
    rng: ChaCha8Rng,
    /// Substrate slot of each focal player.
    focal_slots: Vec<usize>,
    /// Substrate slot of each bot.
    bot_slots: Vec<usize>,
    last: Option<TimeStep>,
}

pub fn make_scenario(spec: &ScenarioSpec, seed: u64) -> Result<ScenarioEnv, ScenarioError> {
    let substrate = make_substrate(&spec.substrate, seed)?;
    let substrate_spec = substrate.spec();
    if spec.focal_slots == 0 || spec.focal_slots + spec.background_bots.len() != substrate_spec.num_players {
        return Err(ScenarioError::ArityMismatch(format!(
            "{} focal + {} bots does not fill {} players of {}",
            spec.focal_slots,
            spec.background_bots.len(),
            substrate_spec.num_players,
            spec.substrate
        )));
    }
    let bots = spec
        .background_bots
        .iter()
        .map(|id| resolve_bot(id, &spec.substrate))
        .collect::<Result<Vec<_>, _>>()?;
    for bot in &bots {
        if let BotPolicy::Checkpoint(params) = &bot.policy {
            if params.spec.obs_dim != substrate_spec.obs_dim || params.spec.num_actions != substrate_spec.num_actions {
                return Err(ScenarioError::ArityMismatch(format!(
                    "bot {} expects obs_dim {} / {} actions, substrate has {} / {}",
                    bot.id,
                    params.spec.obs_dim,
                    params.spec.num_actions,
                    substrate_spec.obs_dim,
                    substrate_spec.num_actions
                )));
            }
        }
    }
    let n = substrate_spec.num_players;
    Ok(ScenarioEnv {
        spec: spec.clone(),
        substrate,
        substrate_spec,
        bots,
        rng: ChaCha8Rng::seed_from_u64(seed),
        focal_slots: (0..spec.focal_slots).collect(),
        bot_slots: (spec.focal_slots..n).collect(),
        last: None,
    })
}

impl ScenarioEnv {
    pub fn scenario(&self) -> &ScenarioSpec {
        &self.spec
    }

    /// The full substrate time step behind the most recent focal one.
    pub fn last_substrate_timestep(&self) -> Option<&TimeStep> {
        self.last.as_ref()
    }

    /// Substrate slot occupied by each focal player this episode.
    pub fn focal_slot_map(&self) -> &[usize] {
        &self.focal_slots
    }

    fn project(&self, ts: &TimeStep) -> TimeStep {
        TimeStep {
            step_type: ts.step_type,
            rewards: self.focal_slots.iter().map(|&s| ts.rewards[s]).collect(),
            discount: ts.discount,
            observations: self.focal_slots.iter().map(|&s| ts.observations[s].clone()).collect(),
        }
    }
}

impl Environment for ScenarioEnv {
    fn reset(&mut self) -> TimeStep {
        if self.spec.slot_assignment == SlotAssignment::ShuffledPerEpisode {
            let mut slots: Vec<usize> = (0..self.substrate_spec.num_players).collect();
            slots.shuffle(&mut self.rng);
            let (focal, bots) = slots.split_at(self.spec.focal_slots);
            self.focal_slots = focal.to_vec();
            self.bot_slots = bots.to_vec();
        }
        let ts = self.substrate.reset();
        let focal = self.project(&ts);
        self.last = Some(ts);
        focal
    }

    fn step(&mut self, actions: &[usize]) -> Result<TimeStep, EnvError> {
        let last = match &self.last {
            Some(ts) if !ts.is_last() => ts,
            _ => return Err(EnvError::StepAfterEnd),
        };
        validate_actions(actions, self.spec.focal_slots, self.substrate_spec.num_actions)?;
        let mut joint = vec![0; self.substrate_spec.num_players];
        for (&slot, &a) in self.focal_slots.iter().zip(actions) {
            joint[slot] = a;
        }
        for (bot, &slot) in self.bots.iter().zip(&self.bot_slots) {
            joint[slot] = bot_action(bot, &last.observations[slot], &mut self.rng);
        }
        let ts = self.substrate.step(&joint)?;
        let focal = self.project(&ts);
        self.last = Some(ts);
        Ok(focal)
    }

    fn spec(&self) -> EnvSpec {
        EnvSpec {
            num_players: self.spec.focal_slots,
            ..self.substrate_spec
        }
    }
}
