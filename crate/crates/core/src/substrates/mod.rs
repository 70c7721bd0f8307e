//! Built-in substrates: the static environment definitions that scenarios
//! populate with background bots.
//!
//! Substrate dynamics are deterministic; the seed passed to
//! [`make_substrate`] is accepted for interface uniformity and all
//! randomness lives in the scenario layer and the agents.

pub mod kitchen;
pub mod matrix;

use thiserror::Error;

use crate::envcore::Environment;

pub use kitchen::{kitchen_step, Kitchen, KitchenState};
pub use matrix::{matrix_payoff, MatrixGame, MatrixSpec};

pub const RPS_MATRIX: &str = "rps_matrix";
pub const PD_MATRIX: &str = "pd_matrix";
pub const CRAMPED_KITCHEN: &str = "cramped_kitchen";

pub const SUBSTRATES: [&str; 3] = [RPS_MATRIX, PD_MATRIX, CRAMPED_KITCHEN];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown substrate {0:?}")]
pub struct UnknownSubstrate(pub String);

pub fn make_substrate(name: &str, _seed: u64) -> Result<Box<dyn Environment>, UnknownSubstrate> {
    match name {
        RPS_MATRIX => Ok(Box::new(MatrixGame::new(MatrixSpec::rock_paper_scissors()))),
        PD_MATRIX => Ok(Box::new(MatrixGame::new(MatrixSpec::prisoners_dilemma()))),
        CRAMPED_KITCHEN => Ok(Box::new(Kitchen::new())),
        other => Err(UnknownSubstrate(other.to_string())),
    }
}

pub fn is_substrate(name: &str) -> bool {
    SUBSTRATES.contains(&name)
}
