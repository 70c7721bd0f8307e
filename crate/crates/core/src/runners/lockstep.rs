//! Single-threaded and synchronous runners.

use std::sync::Arc;
use std::thread;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::nn::Params;
use crate::scenarios::make_env;
use crate::vtrace::{sgd_step, LearnerState};

use super::collect::{Collector, LocalPolicy, Unroll};
use super::metrics::{MetricsRow, MetricsSink};
use super::{
    check_arch, derive_seed, initial_population, io_err, out_of_time, output_paths, write_checkpoint, Architecture,
    EpisodeRecord, RunConfig, RunError, RunReport, SEED_ACTOR, SEED_ENV,
};

/// Interleaves acting and learning: collect one unroll (cut short at the end
/// of an episode), run one update on it, repeat until the step budget is
/// spent. Deterministic for a given seed.
pub fn run_single(config: &RunConfig) -> Result<RunReport, RunError> {
    check_arch(config, Architecture::Single)?;
    run_lockstep(config, 1)
}

/// Like [`run_single`] with `num_workers` environments advancing in
/// lockstep. Each update consumes one unroll from every worker that still has
/// budget; the step budget is split evenly across workers. With one worker
/// the output is identical to [`run_single`].
pub fn run_sync(config: &RunConfig) -> Result<RunReport, RunError> {
    check_arch(config, Architecture::Sync)?;
    run_lockstep(config, config.num_workers)
}

struct Worker {
    collector: Collector,
    policy: LocalPolicy<'static>,
    budget: u64,
}

impl Worker {
    fn collect(&mut self, unroll_length: usize) -> Result<Unroll, RunError> {
        let max = (unroll_length as u64).min(self.budget) as usize;
        let unroll = self.collector.collect(&mut self.policy, max)?;
        self.budget -= unroll.steps as u64;
        Ok(unroll)
    }
}

fn run_lockstep(config: &RunConfig, num_workers: usize) -> Result<RunReport, RunError> {
    let start = Instant::now();
    let wall = || config.log_wall_time.then(|| start.elapsed().as_millis() as u64);
    let (metrics_path, checkpoint_path) = output_paths(config)?;
    let mut sink = MetricsSink::create(metrics_path.as_deref()).map_err(io_err("creating metrics file"))?;

    let mut learner = LearnerState::new(initial_population(config)?);
    let n = num_workers as u64;
    let mut workers = Vec::with_capacity(num_workers);
    for w in 0..num_workers {
        let env = make_env(&config.env, derive_seed(config.seed, SEED_ENV, w as u64))?;
        let players = env.spec().num_players;
        let rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, SEED_ACTOR, w as u64));
        let mut policy = LocalPolicy::new(Vec::new(), rng);
        policy.audit_cap = config.audit_samples;
        workers.push(Worker {
            collector: Collector::new(env, config.population_size, w * players),
            policy,
            budget: config.max_steps / n + u64::from((w as u64) < config.max_steps % n),
        });
    }

    let mut report = RunReport::default();
    let mut total = 0u64;
    loop {
        let mut active: Vec<&mut Worker> = workers.iter_mut().filter(|w| w.budget > 0).collect();
        if active.is_empty() || out_of_time(config, start) {
            break;
        }
        let snapshot: Vec<Arc<Params>> = learner.agents.iter().map(|a| Arc::new(a.params.clone())).collect();
        for w in active.iter_mut() {
            w.policy.params = snapshot.clone();
        }
        let unroll_length = config.unroll_length;
        let unrolls: Vec<Result<Unroll, RunError>> = if active.len() == 1 {
            vec![active[0].collect(unroll_length)]
        } else {
            thread::scope(|s| {
                let handles: Vec<_> = active
                    .iter_mut()
                    .map(|w| s.spawn(move || w.collect(unroll_length)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| {
                        h.join()
                            .unwrap_or_else(|_| Err(RunError::Worker("worker panicked".into())))
                    })
                    .collect()
            })
        };
        report.unrolls_per_update.push(unrolls.len());

        let mut batch = Vec::new();
        let mut round_steps = 0u64;
        for unroll in unrolls {
            let unroll = unroll?;
            for ep in &unroll.episodes {
                let record = EpisodeRecord {
                    step: total + round_steps + ep.offset as u64,
                    agent_id: ep.agent_id,
                    episode_return: ep.episode_return,
                };
                sink.write(&MetricsRow::episode(
                    record.step,
                    wall(),
                    record.agent_id,
                    record.episode_return,
                ))
                .map_err(io_err("writing metrics"))?;
                report.episodes.push(record);
            }
            round_steps += unroll.steps as u64;
            batch.extend(unroll.trajectories);
        }
        total += round_steps;

        let (next, logs) = sgd_step(&learner, &batch, &config.vtrace, config.learning_rate)?;
        learner = next;
        report.learner_steps += 1;
        for log in &logs {
            sink.write(&MetricsRow::learner(total, wall(), log, None))
                .map_err(io_err("writing metrics"))?;
        }
    }

    report.env_steps = total;
    report.final_params = learner.params();
    for w in workers {
        report.audit.extend(w.policy.audit);
    }
    report.audit.truncate(config.audit_samples);
    write_checkpoint(checkpoint_path.as_deref(), &report.final_params)?;
    sink.finish().map_err(io_err("writing metrics"))?;
    report.wall_time = start.elapsed();
    Ok(report)
}
