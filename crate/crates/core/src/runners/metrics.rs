//! Metrics CSV rows.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use crate::vtrace::AgentLog;

pub const METRICS_HEADER: &str =
    "step,wall_ms,agent_id,episode_return,policy_loss,value_loss,entropy,mean_rho,buffer_size";

/// One metrics line. Episode rows carry `episode_return`; learner rows carry
/// the loss terms.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub wall_ms: Option<u64>,
    pub agent_id: usize,
    pub episode_return: Option<f64>,
    pub policy_loss: Option<f64>,
    pub value_loss: Option<f64>,
    pub entropy: Option<f64>,
    pub mean_rho: Option<f64>,
    pub buffer_size: Option<u64>,
}

impl MetricsRow {
    pub fn episode(step: u64, wall_ms: Option<u64>, agent_id: usize, episode_return: f64) -> Self {
        Self {
            step,
            wall_ms,
            agent_id,
            episode_return: Some(episode_return),
            policy_loss: None,
            value_loss: None,
            entropy: None,
            mean_rho: None,
            buffer_size: None,
        }
    }

    pub fn learner(step: u64, wall_ms: Option<u64>, log: &AgentLog, buffer_size: Option<u64>) -> Self {
        Self {
            step,
            wall_ms,
            agent_id: log.agent_id,
            episode_return: None,
            policy_loss: Some(log.metrics.policy_loss),
            value_loss: Some(log.metrics.value_loss),
            entropy: Some(log.metrics.entropy),
            mean_rho: Some(log.metrics.mean_rho),
            buffer_size,
        }
    }

    pub fn to_csv(&self) -> String {
        fn opt<T: std::fmt::Display>(out: &mut String, v: &Option<T>) {
            out.push(',');
            if let Some(v) = v {
                let _ = write!(out, "{v}");
            }
        }
        let mut line = self.step.to_string();
        opt(&mut line, &self.wall_ms);
        let _ = write!(line, ",{}", self.agent_id);
        opt(&mut line, &self.episode_return);
        opt(&mut line, &self.policy_loss);
        opt(&mut line, &self.value_loss);
        opt(&mut line, &self.entropy);
        opt(&mut line, &self.mean_rho);
        opt(&mut line, &self.buffer_size);
        line
    }
}

/// Writes rows to `metrics.csv` when an output path is configured.
pub(crate) struct MetricsSink {
    out: Option<BufWriter<File>>,
}

impl MetricsSink {
    pub(crate) fn create(path: Option<&Path>) -> io::Result<Self> {
        let out = match path {
            Some(path) => {
                let mut w = BufWriter::new(File::create(path)?);
                writeln!(w, "{METRICS_HEADER}")?;
                Some(w)
            }
            None => None,
        };
        Ok(Self { out })
    }

    pub(crate) fn write(&mut self, row: &MetricsRow) -> io::Result<()> {
        if let Some(w) = &mut self.out {
            writeln!(w, "{}", row.to_csv())?;
        }
        Ok(())
    }

    pub(crate) fn finish(self) -> io::Result<()> {
        if let Some(mut w) = self.out {
            w.flush()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn episode_row_leaves_learner_fields_empty() {
        let row = MetricsRow::episode(40, None, 1, 5.5);
        assert_eq!(row.to_csv(), "40,,1,5.5,,,,,");
        assert_eq!(row.to_csv().split(',').count(), METRICS_HEADER.split(',').count());
    }
}
