//! Learner-side trajectory records and their little-endian binary layout.
//!
//! Layout: `u32 agent_id, u32 T, u32 obs_dim, u32 num_actions`, then
//! observations (`T*obs_dim` f32), actions (`T` u32), rewards (`T` f32),
//! discounts (`T` f32), behavior log-probs (`T` f32), bootstrap observation
//! (`obs_dim` f32).

use thiserror::Error;

/// One unroll (or full episode) of a single agent.
///
/// Step `t` holds the observation the agent acted on, the action, the reward
/// and discount of the resulting time step, and the behaviour policy's
/// log-probability of the action at sampling time. `bootstrap_observation`
/// is the observation following the final step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    pub agent_id: u32,
    pub obs_dim: usize,
    pub num_actions: usize,
    pub observations: Vec<f32>,
    pub actions: Vec<u32>,
    pub rewards: Vec<f32>,
    pub discounts: Vec<f32>,
    pub behavior_log_probs: Vec<f32>,
    pub bootstrap_observation: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("truncated input: needed {needed} bytes, had {available}")]
    Truncated { needed: usize, available: usize },
    #[error("malformed trajectory: {0}")]
    Malformed(String),
}

impl TrajectoryBatch {
    pub fn new(agent_id: u32, obs_dim: usize, num_actions: usize) -> Self {
        Self {
            agent_id,
            obs_dim,
            num_actions,
            observations: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            discounts: Vec::new(),
            behavior_log_probs: Vec::new(),
            bootstrap_observation: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn observation(&self, t: usize) -> &[f32] {
        &self.observations[t * self.obs_dim..(t + 1) * self.obs_dim]
    }

    pub fn push(&mut self, observation: &[f32], action: usize, reward: f32, discount: f32, log_prob: f32) {
        self.observations.extend_from_slice(observation);
        self.actions.push(action as u32);
        self.rewards.push(reward);
        self.discounts.push(discount);
        self.behavior_log_probs.push(log_prob);
    }

    /// Checks shape consistency and value domains.
    pub fn validate(&self) -> Result<(), String> {
        let t = self.len();
        if t == 0 {
            return Err("empty trajectory".into());
        }
        if self.obs_dim == 0 || self.num_actions == 0 {
            return Err("obs_dim and num_actions must be at least 1".into());
        }
        if self.observations.len() != t * self.obs_dim {
            return Err(format!(
                "observations hold {} values, expected {}",
                self.observations.len(),
                t * self.obs_dim
            ));
        }
        for (name, len) in [
            ("rewards", self.rewards.len()),
            ("discounts", self.discounts.len()),
            ("behavior_log_probs", self.behavior_log_probs.len()),
        ] {
            if len != t {
                return Err(format!("{name} has length {len}, expected {t}"));
            }
        }
        if self.bootstrap_observation.len() != self.obs_dim {
            return Err(format!(
                "bootstrap observation has length {}, expected {}",
                self.bootstrap_observation.len(),
                self.obs_dim
            ));
        }
        if let Some(a) = self.actions.iter().find(|&&a| a as usize >= self.num_actions) {
            return Err(format!("action {a} out of range for {} actions", self.num_actions));
        }
        if self.discounts.iter().any(|&d| d != 0.0 && d != 1.0) {
            return Err("discounts must be 0 or 1".into());
        }
        if self.behavior_log_probs.iter().any(|lp| !lp.is_finite() || *lp > 0.0) {
            return Err("behavior log-probs must be finite and non-positive".into());
        }
        let all_finite = self
            .observations
            .iter()
            .chain(&self.rewards)
            .chain(&self.bootstrap_observation)
            .all(|v| v.is_finite());
        if !all_finite {
            return Err("non-finite observation or reward".into());
        }
        Ok(())
    }

    pub fn encoded_len(&self) -> usize {
        16 + 4 * (self.observations.len() + 4 * self.len() + self.bootstrap_observation.len())
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.reserve(self.encoded_len());
        for v in [
            self.agent_id,
            self.len() as u32,
            self.obs_dim as u32,
            self.num_actions as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        put_f32s(out, &self.observations);
        for a in &self.actions {
            out.extend_from_slice(&a.to_le_bytes());
        }
        put_f32s(out, &self.rewards);
        put_f32s(out, &self.discounts);
        put_f32s(out, &self.behavior_log_probs);
        put_f32s(out, &self.bootstrap_observation);
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode_into(&mut out);
        out
    }

    /// Decodes one trajectory from the front of `bytes`, returning it and the
    /// number of bytes consumed.
    pub fn decode(bytes: &[u8]) -> Result<(Self, usize), CodecError> {
        let mut r = Reader::new(bytes);
        let agent_id = r.u32()?;
        let t = r.u32()? as usize;
        let obs_dim = r.u32()? as usize;
        let num_actions = r.u32()? as usize;
        let needed = t
            .checked_mul(obs_dim)
            .and_then(|n| n.checked_add(4 * t))
            .and_then(|n| n.checked_add(obs_dim))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| CodecError::Malformed("dimensions overflow".into()))?;
        r.require(needed)?;
        let observations = r.f32s(t * obs_dim)?;
        let actions = (0..t).map(|_| r.u32()).collect::<Result<_, _>>()?;
        let rewards = r.f32s(t)?;
        let discounts = r.f32s(t)?;
        let behavior_log_probs = r.f32s(t)?;
        let bootstrap_observation = r.f32s(obs_dim)?;
        let traj = Self {
            agent_id,
            obs_dim,
            num_actions,
            observations,
            actions,
            rewards,
            discounts,
            behavior_log_probs,
            bootstrap_observation,
        };
        Ok((traj, r.pos))
    }
}

pub(crate) fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Little-endian cursor over a byte slice.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn require(&self, n: usize) -> Result<(), CodecError> {
        if self.remaining() < n {
            Err(CodecError::Truncated {
                needed: n,
                available: self.remaining(),
            })
        } else {
            Ok(())
        }
    }

    pub(crate) fn take<const N: usize>(&mut self) -> Result<[u8; N], CodecError> {
        self.require(N)?;
        let mut buf = [0u8; N];
        buf.copy_from_slice(&self.bytes[self.pos..self.pos + N]);
        self.pos += N;
        Ok(buf)
    }

    pub(crate) fn u16(&mut self) -> Result<u16, CodecError> {
        Ok(u16::from_le_bytes(self.take()?))
    }

    pub(crate) fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    pub(crate) fn u64(&mut self) -> Result<u64, CodecError> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    pub(crate) fn f32(&mut self) -> Result<f32, CodecError> {
        Ok(f32::from_le_bytes(self.take()?))
    }

    pub(crate) fn f32s(&mut self, n: usize) -> Result<Vec<f32>, CodecError> {
        self.require(n.saturating_mul(4))?;
        (0..n).map(|_| self.f32()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> TrajectoryBatch {
        let mut traj = TrajectoryBatch::new(3, 2, 4);
        traj.push(&[0.5, -1.0], 1, 1.0, 1.0, -0.7);
        traj.push(&[0.25, 2.0], 3, -2.0, 0.0, -1.4);
        traj.bootstrap_observation = vec![0.0, 1.0];
        traj
    }

    #[test]
    fn validate_accepts_well_formed() {
        assert_eq!(sample().validate(), Ok(()));
    }

    #[test]
    fn validate_rejects_bad_shapes_and_values() {
        let mut t = sample();
        t.bootstrap_observation.pop();
        assert!(t.validate().is_err());

        let mut t = sample();
        t.actions[0] = 4;
        assert!(t.validate().is_err());

        let mut t = sample();
        t.discounts[0] = 0.5;
        assert!(t.validate().is_err());

        let mut t = sample();
        t.behavior_log_probs[1] = f32::NEG_INFINITY;
        assert!(t.validate().is_err());

        assert!(TrajectoryBatch::new(0, 2, 2).validate().is_err());
    }

    #[test]
    fn layout_header_is_little_endian() {
        let bytes = sample().encode();
        assert_eq!(&bytes[0..4], &3u32.to_le_bytes());
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &4u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &0.5f32.to_le_bytes());
        assert_eq!(bytes.len(), sample().encoded_len());
    }

    #[test]
    fn truncated_input_is_rejected() {
        let bytes = sample().encode();
        let err = TrajectoryBatch::decode(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(matches!(err, CodecError::Truncated { .. }));
    }

    proptest! {
        #[test]
        fn codec_round_trip_is_bit_exact(
            agent in 0u32..8,
            obs_dim in 1usize..5,
            steps in proptest::collection::vec((any::<u32>(), any::<f32>(), any::<f32>()), 1..6),
            seed in any::<u64>(),
        ) {
            let mut traj = TrajectoryBatch::new(agent, obs_dim, 7);
            for (i, (a, r, lp)) in steps.iter().enumerate() {
                let obs: Vec<f32> = (0..obs_dim).map(|k| (seed.wrapping_add((i * 31 + k) as u64) % 997) as f32 * 0.125).collect();
                traj.push(&obs, (*a % 7) as usize, *r, (i % 2) as f32, *lp);
            }
            traj.bootstrap_observation = vec![f32::from_bits(seed as u32); obs_dim];
            let bytes = traj.encode();
            let (back, used) = TrajectoryBatch::decode(&bytes).unwrap();
            prop_assert_eq!(used, bytes.len());
            prop_assert_eq!(back.encode(), bytes);
        }
    }
}
