//! Versioned parameter store shared between the learner and actors.

use std::sync::{Arc, RwLock};

use thiserror::Error;

use crate::nn::Params;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown agent {agent} (population of {population})")]
pub struct UnknownAgent {
    pub agent: usize,
    pub population: usize,
}

/// Latest parameters per agent. Snapshots are immutable `Arc`s, so a reader
/// never sees a half-written update, and a stored version never decreases.
#[derive(Debug)]
pub struct ParamStore {
    slots: Vec<RwLock<Arc<Params>>>,
}

impl ParamStore {
    pub fn new(initial: Vec<Params>) -> Self {
        Self {
            slots: initial.into_iter().map(|p| RwLock::new(Arc::new(p))).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    fn slot(&self, agent: usize) -> Result<&RwLock<Arc<Params>>, UnknownAgent> {
        self.slots.get(agent).ok_or(UnknownAgent {
            agent,
            population: self.slots.len(),
        })
    }

    pub fn get(&self, agent: usize) -> Result<(Arc<Params>, u64), UnknownAgent> {
        let params = self.slot(agent)?.read().unwrap_or_else(|p| p.into_inner()).clone();
        let version = params.version;
        Ok((params, version))
    }

    /// Publishes `params` if its version is newer than the stored one.
    /// Returns the version visible after the call.
    pub fn put(&self, agent: usize, params: Params) -> Result<u64, UnknownAgent> {
        let mut slot = self.slot(agent)?.write().unwrap_or_else(|p| p.into_inner());
        if params.version > slot.version {
            *slot = Arc::new(params);
        }
        Ok(slot.version)
    }

    pub fn snapshot(&self) -> Vec<Arc<Params>> {
        (0..self.len()).map(|a| self.get(a).expect("in range").0).collect()
    }
}
