//! Asynchronous runners: actors, a replay buffer and a learner on separate
//! threads.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Sender};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::replay::{BufferConfig, ItemKind, RemoteReplay, Replay, ReplayBuffer, ReplayError, ReplayServer};
use crate::scenarios::make_env;
use crate::trajectory::TrajectoryBatch;
use crate::vtrace::{sgd_step, LearnerState};

use super::collect::{ActionSource, AuditRecord, Collector, LocalPolicy};
use super::inference::{InferenceClient, InferenceConfig, InferenceServer, InferenceService, RemoteInference};
use super::metrics::{MetricsRow, MetricsSink};
use super::{
    check_arch, derive_seed, initial_population, io_err, out_of_time, output_paths, write_checkpoint, Architecture,
    EpisodeRecord, ParamStore, RunConfig, RunError, RunReport, Transport, DRAIN_BUDGET, INFER_DEADLINE, SEED_ACTOR,
    SEED_ENV, SEED_INFERENCE,
};

/// Actor threads act with a local parameter snapshot, refreshed from the
/// [`ParamStore`] every `param_sync_interval` steps (or every episode when
/// 0), and write whole episodes to the replay buffer. The learner samples
/// `batch_size` episodes per update and publishes new parameters. Actors
/// stop at an episode boundary once `max_steps` is reached; the buffer is
/// then closed and the learner drains what is left.
pub fn run_async(config: &RunConfig) -> Result<RunReport, RunError> {
    check_arch(config, Architecture::Async)?;
    run_decoupled(config, Acting::Local)
}

/// As [`run_async`], but actors hold no parameters: every action, with its
/// log-probability, comes from a batched inference server that always uses
/// the newest parameters.
pub fn run_sebulba(config: &RunConfig) -> Result<RunReport, RunError> {
    check_arch(config, Architecture::Sebulba)?;
    run_decoupled(config, Acting::Server)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Acting {
    Local,
    Server,
}

struct ServerPolicy(InferenceClient);

impl ActionSource for ServerPolicy {
    fn act(&mut self, agent: usize, observation: &[f32]) -> Result<(usize, f32), RunError> {
        let resp = self.0.infer(agent as u32, observation)?;
        Ok((resp.action, resp.log_prob))
    }
}

struct RemotePolicy(RemoteInference);

impl ActionSource for RemotePolicy {
    fn act(&mut self, agent: usize, observation: &[f32]) -> Result<(usize, f32), RunError> {
        let resp = self.0.infer(agent as u32, observation)?;
        Ok((resp.action, resp.log_prob))
    }
}

struct Shared<'a> {
    config: &'a RunConfig,
    start: Instant,
    store: &'a ParamStore,
    buffer: &'a ReplayBuffer,
    replay_addr: Option<SocketAddr>,
    inference: Option<&'a InferenceServer>,
    inference_addr: Option<SocketAddr>,
    actor_steps: AtomicU64,
    stop: AtomicBool,
}

impl Shared<'_> {
    fn wall(&self) -> Option<u64> {
        self.config
            .log_wall_time
            .then(|| self.start.elapsed().as_millis() as u64)
    }

    fn abort(&self) {
        self.stop.store(true, Ordering::SeqCst);
        self.buffer.close();
    }
}

fn worker_loop(w: usize, shared: &Shared<'_>, rows: Sender<MetricsRow>) -> Result<Vec<AuditRecord>, RunError> {
    let config = shared.config;
    let env = make_env(&config.env, derive_seed(config.seed, SEED_ENV, w as u64))?;
    let players = env.spec().num_players;
    let mut collector = Collector::new(env, config.population_size, w * players);

    let remote_replay;
    let replay: &dyn Replay = match shared.replay_addr {
        Some(addr) => {
            remote_replay = RemoteReplay::connect(addr)?;
            &remote_replay
        }
        None => shared.buffer,
    };

    let mut local;
    let mut served;
    let mut remote;
    let source: &mut dyn ActionSource = match (shared.inference, shared.inference_addr) {
        (_, Some(addr)) => {
            let client = RemoteInference::connect(addr, Some(INFER_DEADLINE))
                .map_err(io_err("connecting to inference service"))?;
            remote = RemotePolicy(client);
            &mut remote
        }
        (Some(server), None) => {
            served = ServerPolicy(server.client(INFER_DEADLINE));
            &mut served
        }
        (None, None) => {
            let rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, SEED_ACTOR, w as u64));
            local = LocalPolicy::new(shared.store.snapshot(), rng);
            local.store = Some(shared.store);
            local.sync_interval = config.param_sync_interval;
            local.audit_cap = config.audit_samples;
            &mut local
        }
    };

    while !shared.stop.load(Ordering::SeqCst)
        && shared.actor_steps.load(Ordering::SeqCst) < config.max_steps
        && !out_of_time(config, shared.start)
    {
        let unroll = collector.collect(source, usize::MAX)?;
        let before = shared.actor_steps.fetch_add(unroll.steps as u64, Ordering::SeqCst);
        for ep in &unroll.episodes {
            let row = MetricsRow::episode(before + ep.offset as u64, shared.wall(), ep.agent_id, ep.episode_return);
            let _ = rows.send(row);
        }
        for traj in unroll.trajectories {
            match replay.write(traj) {
                Ok(()) => {}
                Err(ReplayError::Closed) => return Ok(source.take_audit()),
                Err(e) => return Err(e.into()),
            }
        }
    }
    Ok(source.take_audit())
}

fn learner_loop(
    shared: &Shared<'_>,
    mut state: LearnerState,
    rows: Sender<MetricsRow>,
) -> Result<(LearnerState, u64), RunError> {
    let config = shared.config;
    let mut updates = 0u64;
    let mut learn = |state: &mut LearnerState, items: &[TrajectoryBatch]| -> Result<(), RunError> {
        let (next, logs) = sgd_step(state, items, &config.vtrace, config.learning_rate)?;
        for log in &logs {
            shared
                .store
                .put(log.agent_id, next.agents[log.agent_id].params.clone())
                .expect("learner population matches store");
        }
        *state = next;
        updates += 1;
        let step = shared.actor_steps.load(Ordering::SeqCst);
        let size = shared.buffer.stats().current_size;
        for log in &logs {
            let _ = rows.send(MetricsRow::learner(step, shared.wall(), log, Some(size)));
        }
        Ok(())
    };

    loop {
        match shared.buffer.sample(config.batch_size) {
            Ok(items) => learn(&mut state, &items)?,
            Err(ReplayError::Closed) => break,
            Err(e) => return Err(e.into()),
        }
    }
    let deadline = Instant::now() + DRAIN_BUDGET;
    let rest = shared.buffer.drain(usize::MAX);
    for chunk in rest.chunks(config.batch_size) {
        if Instant::now() >= deadline {
            break;
        }
        learn(&mut state, chunk)?;
    }
    Ok((state, updates))
}

fn run_decoupled(config: &RunConfig, acting: Acting) -> Result<RunReport, RunError> {
    let start = Instant::now();
    let (metrics_path, checkpoint_path) = output_paths(config)?;
    let mut sink = MetricsSink::create(metrics_path.as_deref()).map_err(io_err("creating metrics file"))?;

    let initial = initial_population(config)?;
    let store = Arc::new(ParamStore::new(initial.clone()));
    let buffer = Arc::new(ReplayBuffer::new(BufferConfig {
        capacity: config.replay_capacity,
        sample_batch_size: config.batch_size,
        item_kind: ItemKind::Episode,
    })?);
    let tcp = config.transport == Transport::Tcp;
    let replay_server = if tcp {
        Some(ReplayServer::serve(buffer.clone(), "127.0.0.1:0").map_err(io_err("binding replay service"))?)
    } else {
        None
    };
    let mut inference = (acting == Acting::Server).then(|| {
        InferenceServer::start(
            store.clone(),
            InferenceConfig {
                max_batch: config.infer_batch,
                flush_timeout: Duration::from_millis(config.infer_timeout_ms),
                seed: derive_seed(config.seed, SEED_INFERENCE, 0),
                audit_cap: config.audit_samples,
            },
        )
    });
    let inference_service = match (&inference, tcp) {
        (Some(server), true) => Some(
            InferenceService::serve(server, store.clone(), "127.0.0.1:0", INFER_DEADLINE)
                .map_err(io_err("binding inference service"))?,
        ),
        _ => None,
    };

    let shared = Shared {
        config,
        start,
        store: &store,
        buffer: &buffer,
        replay_addr: replay_server.as_ref().map(ReplayServer::local_addr),
        inference: inference.as_ref(),
        inference_addr: inference_service.as_ref().map(InferenceService::local_addr),
        actor_steps: AtomicU64::new(0),
        stop: AtomicBool::new(false),
    };

    let (row_tx, row_rx) = unbounded::<MetricsRow>();
    let mut report = RunReport::default();
    let mut first_error: Option<RunError> = None;
    let outcome = thread::scope(|s| {
        let writer = s.spawn(move || -> std::io::Result<Vec<EpisodeRecord>> {
            let mut episodes = Vec::new();
            for row in row_rx {
                if let Some(episode_return) = row.episode_return {
                    episodes.push(EpisodeRecord {
                        step: row.step,
                        agent_id: row.agent_id,
                        episode_return,
                    });
                }
                sink.write(&row)?;
            }
            sink.finish()?;
            Ok(episodes)
        });

        let learner = {
            let rows = row_tx.clone();
            let shared = &shared;
            let state = LearnerState::new(initial);
            s.spawn(move || {
                let out = learner_loop(shared, state, rows);
                if out.is_err() {
                    shared.abort();
                }
                out
            })
        };

        let workers: Vec<_> = (0..config.num_workers)
            .map(|w| {
                let rows = row_tx.clone();
                let shared = &shared;
                s.spawn(move || {
                    let out = worker_loop(w, shared, rows);
                    if out.is_err() {
                        shared.abort();
                    }
                    out
                })
            })
            .collect();
        drop(row_tx);

        for (w, handle) in workers.into_iter().enumerate() {
            match handle.join() {
                Ok(Ok(audit)) => report.audit.extend(audit),
                Ok(Err(e)) => {
                    first_error.get_or_insert(RunError::Worker(format!("worker {w}: {e}")));
                }
                Err(_) => {
                    shared.abort();
                    first_error.get_or_insert(RunError::Worker(format!("worker {w} panicked")));
                }
            }
        }
        shared.buffer.close();
        let learned = match learner.join() {
            Ok(out) => out,
            Err(_) => Err(RunError::Worker("learner panicked".into())),
        };
        let episodes = writer
            .join()
            .unwrap_or_else(|_| Err(std::io::Error::other("metrics writer panicked")));
        (learned, episodes)
    });

    let env_steps = shared.actor_steps.load(Ordering::SeqCst);
    drop(inference_service);
    drop(replay_server);
    if let Some(server) = inference.as_mut() {
        server.shutdown();
        report.inference_batch_sizes = server.batch_sizes();
        report.audit.extend(server.audit());
    }

    let (learned, episodes) = outcome;
    let (state, updates) = match (learned, first_error) {
        (Err(e), _) => return Err(e),
        (Ok(_), Some(e)) => return Err(e),
        (Ok(out), None) => out,
    };
    report.episodes = episodes.map_err(io_err("writing metrics"))?;
    report.episodes.sort_by_key(|e| e.step);
    report.env_steps = env_steps;
    report.learner_steps = updates;
    report.replay_stats = Some(buffer.stats());
    report.final_params = state.params();
    report.audit.truncate(config.audit_samples);
    write_checkpoint(checkpoint_path.as_deref(), &report.final_params)?;
    report.wall_time = start.elapsed();
    Ok(report)
}
