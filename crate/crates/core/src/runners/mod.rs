//! Training architectures.
//!
//! - [`run_single`]: one environment, act then learn on every unroll.
//! - [`run_sync`]: several environments in lockstep under one snapshot; each
//!   update consumes one unroll from every worker.
//! - [`run_async`]: actor threads write episodes to a replay buffer, a
//!   learner thread samples it and publishes to a [`ParamStore`].
//! - [`run_sebulba`]: as async, but actors hold no parameters and query a
//!   batched [`InferenceServer`].

mod collect;
mod decoupled;
mod inference;
mod lockstep;
mod metrics;
mod params;

use std::fmt;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::checkpoint::save_checkpoint;
use crate::envcore::EnvError;
use crate::nn::{init_params, NetSpec, Params, DEFAULT_HIDDEN_DIM};
use crate::replay::{BufferStats, ReplayError};
use crate::scenarios::{make_env, ScenarioError};
use crate::vtrace::{LearnError, VTraceConfig};

pub use collect::AuditRecord;
pub use decoupled::{run_async, run_sebulba};
pub use inference::{
    served_action, InferError, InferResponse, InferenceClient, InferenceConfig, InferenceServer, InferenceService,
    RemoteInference,
};
pub use lockstep::{run_single, run_sync};
pub use metrics::{MetricsRow, METRICS_HEADER};
pub use params::{ParamStore, UnknownAgent};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.majx";
/// How long a sebulba actor waits for one inference response.
pub const INFER_DEADLINE: Duration = Duration::from_secs(30);
/// Learner budget for draining the replay buffer after actors stop.
pub const DRAIN_BUDGET: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    Single,
    Sync,
    Async,
    Sebulba,
}

impl Architecture {
    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::Single => "single",
            Architecture::Sync => "sync",
            Architecture::Async => "async",
            Architecture::Sebulba => "sebulba",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Architecture {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single" => Ok(Architecture::Single),
            "sync" => Ok(Architecture::Sync),
            "async" => Ok(Architecture::Async),
            "sebulba" => Ok(Architecture::Sebulba),
            other => Err(format!("unknown architecture '{other}' (single, sync, async, sebulba)")),
        }
    }
}

/// How actors reach the replay buffer and inference server.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transport {
    InProcess,
    Tcp,
}

impl Transport {
    pub fn as_str(self) -> &'static str {
        match self {
            Transport::InProcess => "inproc",
            Transport::Tcp => "tcp",
        }
    }
}

impl FromStr for Transport {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "inproc" => Ok(Transport::InProcess),
            "tcp" => Ok(Transport::Tcp),
            other => Err(format!("unknown transport '{other}' (inproc, tcp)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub architecture: Architecture,
    /// Substrate or scenario name.
    pub env: String,
    pub population_size: usize,
    pub num_workers: usize,
    /// Total environment steps.
    pub max_steps: u64,
    /// Stop collecting after this many milliseconds; 0 means no limit.
    pub time_limit_ms: u64,
    pub unroll_length: usize,
    pub seed: u64,
    pub learning_rate: f32,
    pub vtrace: VTraceConfig,
    /// Actor steps between parameter fetches; 0 fetches once per episode.
    pub param_sync_interval: u64,
    pub infer_batch: usize,
    pub infer_timeout_ms: u64,
    pub hidden_dim: usize,
    /// Trajectories per learner update in async and sebulba.
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Record `wall_ms` in metrics. Off by default so that reruns are
    /// byte-identical.
    pub log_wall_time: bool,
    pub transport: Transport,
    /// Number of actions to keep in [`RunReport::audit`].
    pub audit_samples: usize,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::Single,
            env: String::new(),
            population_size: 1,
            num_workers: 1,
            max_steps: 0,
            time_limit_ms: 0,
            unroll_length: 20,
            seed: 0,
            learning_rate: 1e-3,
            vtrace: VTraceConfig::default(),
            param_sync_interval: 0,
            infer_batch: 8,
            infer_timeout_ms: 2,
            hidden_dim: DEFAULT_HIDDEN_DIM,
            batch_size: 4,
            replay_capacity: 256,
            log_wall_time: false,
            transport: Transport::InProcess,
            audit_samples: 0,
            out_dir: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.env.is_empty() {
            return Err("env must name a substrate or scenario".into());
        }
        if self.population_size == 0 {
            return Err("population_size must be at least 1".into());
        }
        if self.num_workers == 0 {
            return Err("num_workers must be at least 1".into());
        }
        if self.unroll_length < 2 {
            return Err("unroll_length must be at least 2".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err("learning_rate must be finite and positive".into());
        }
        if self.infer_batch == 0 {
            return Err("infer_batch must be at least 1".into());
        }
        if self.hidden_dim == 0 {
            return Err("hidden_dim must be at least 1".into());
        }
        if self.batch_size == 0 {
            return Err("batch_size must be at least 1".into());
        }
        if self.replay_capacity < self.batch_size {
            return Err("replay_capacity must be at least batch_size".into());
        }
        self.vtrace.validate()
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("environment: {0}")]
    Env(#[from] EnvError),
    #[error("learner: {0}")]
    Learn(#[from] LearnError),
    #[error("inference: {0}")]
    Inference(#[from] InferError),
    #[error("replay: {0}")]
    Replay(#[from] ReplayError),
    #[error("worker: {0}")]
    Worker(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
}

fn io_err(context: impl Into<String>) -> impl FnOnce(io::Error) -> RunError {
    let context = context.into();
    move |source| RunError::Io { context, source }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeRecord {
    /// Total environment steps when the episode finished.
    pub step: u64,
    pub agent_id: usize,
    pub episode_return: f64,
}

#[derive(Debug, Clone, Default)]
pub struct RunReport {
    pub env_steps: u64,
    pub learner_steps: u64,
    pub episodes: Vec<EpisodeRecord>,
    pub final_params: Vec<Params>,
    pub replay_stats: Option<BufferStats>,
    /// Number of worker unrolls consumed by each lockstep update.
    pub unrolls_per_update: Vec<usize>,
    pub inference_batch_sizes: Vec<usize>,
    pub audit: Vec<AuditRecord>,
    pub wall_time: Duration,
}

impl RunReport {
    /// Mean return of the last `n` finished episodes.
    pub fn mean_recent_return(&self, n: usize) -> Option<f64> {
        let start = self.episodes.len().checked_sub(n)?;
        let recent = &self.episodes[start..];
        Some(recent.iter().map(|e| e.episode_return).sum::<f64>() / n as f64)
    }

    pub fn env_steps_per_second(&self) -> f64 {
        self.env_steps as f64 / self.wall_time.as_secs_f64().max(1e-9)
    }
}

/// Deterministic sub-seed for stream `(purpose, index)` of `seed`.
pub(crate) fn derive_seed(seed: u64, purpose: u32, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 32) | index);
    rng.next_u64()
}

pub(crate) const SEED_PARAMS: u32 = 1;
pub(crate) const SEED_ENV: u32 = 2;
pub(crate) const SEED_ACTOR: u32 = 3;
pub(crate) const SEED_INFERENCE: u32 = 4;

/// Initial population for `config`, one seed stream per agent.
pub fn initial_population(config: &RunConfig) -> Result<Vec<Params>, RunError> {
    let spec = make_env(&config.env, 0)?.spec();
    let net = NetSpec::new(spec.obs_dim, config.hidden_dim, spec.num_actions);
    Ok((0..config.population_size)
        .map(|a| init_params(net, derive_seed(config.seed, SEED_PARAMS, a as u64)))
        .collect())
}

pub(crate) fn output_paths(config: &RunConfig) -> Result<(Option<PathBuf>, Option<PathBuf>), RunError> {
    match &config.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(io_err(format!("creating {}", dir.display())))?;
            Ok((Some(dir.join(METRICS_FILE)), Some(dir.join(CHECKPOINT_FILE))))
        }
        None => Ok((None, None)),
    }
}

pub(crate) fn write_checkpoint(path: Option<&Path>, params: &[Params]) -> Result<(), RunError> {
    if let Some(path) = path {
        save_checkpoint(path, params).map_err(io_err(format!("writing {}", path.display())))?;
    }
    Ok(())
}

/// Runs the architecture selected in `config`.
pub fn run(config: &RunConfig) -> Result<RunReport, RunError> {
    match config.architecture {
        Architecture::Single => run_single(config),
        Architecture::Sync => run_sync(config),
        Architecture::Async => run_async(config),
        Architecture::Sebulba => run_sebulba(config),
    }
}

/// True once the configured time limit, if any, has passed.
pub(crate) fn out_of_time(config: &RunConfig, start: std::time::Instant) -> bool {
    config.time_limit_ms > 0 && start.elapsed() >= Duration::from_millis(config.time_limit_ms)
}

fn check_arch(config: &RunConfig, expected: Architecture) -> Result<(), RunError> {
    config.validate().map_err(RunError::Config)?;
    if config.architecture != expected {
        return Err(RunError::Config(format!(
            "architecture is {}, expected {expected}",
            config.architecture
        )));
    }
    Ok(())
}
