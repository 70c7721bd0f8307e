//! Desk-scale multi-agent reinforcement learning.
//!
//! Environments follow a multi-agent `dm_env`-style interface ([`envcore`]).
//! Substrates plus background bots form scenarios ([`scenarios`]). A
//! population of independent actor-critic agents is trained with V-trace
//! ([`vtrace`]) under one of four architectures ([`runners`]) and evaluated
//! against scenario registries ([`evalkit`]).

pub mod checkpoint;
pub mod envcore;
pub mod evalkit;
pub mod nn;
pub mod replay;
pub mod runners;
pub mod scenarios;
pub mod substrates;
pub mod trajectory;
pub mod vtrace;
pub mod wire;
