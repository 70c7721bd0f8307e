use std::fs;

use marl_core::checkpoint::load_checkpoint;
use marl_core::nn::{forward, log_softmax};
use marl_core::runners::{
    initial_population, run, run_single, served_action, Architecture, RunConfig, RunError, Transport, CHECKPOINT_FILE,
    METRICS_FILE, METRICS_HEADER,
};

fn config(arch: Architecture, env: &str, steps: u64) -> RunConfig {
    RunConfig {
        architecture: arch,
        env: env.into(),
        max_steps: steps,
        seed: 7,
        hidden_dim: 16,
        ..RunConfig::default()
    }
}

#[test]
fn zero_step_run_writes_header_and_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(Architecture::Single, "pd_matrix.scenario_0", 0);
    cfg.out_dir = Some(dir.path().into());
    let report = run(&cfg).unwrap();
    assert_eq!(report.learner_steps, 0);
    let metrics = fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
    assert_eq!(metrics, format!("{METRICS_HEADER}\n"));
    let saved = load_checkpoint(&dir.path().join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(saved, initial_population(&cfg).unwrap());
}

fn run_to_dir(cfg: &RunConfig) -> (String, Vec<u8>) {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = cfg.clone();
    cfg.out_dir = Some(dir.path().into());
    run(&cfg).unwrap();
    (
        fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap(),
        fs::read(dir.path().join(CHECKPOINT_FILE)).unwrap(),
    )
}

#[test]
fn single_is_reproducible_and_matches_one_worker_sync() {
    let mut cfg = config(Architecture::Single, "cramped_kitchen", 1500);
    cfg.population_size = 2;
    let first = run_to_dir(&cfg);
    assert_eq!(first, run_to_dir(&cfg));
    assert!(first.0.lines().count() > 1);

    cfg.architecture = Architecture::Sync;
    cfg.num_workers = 1;
    assert_eq!(first, run_to_dir(&cfg));
}

#[test]
fn sync_updates_stack_one_unroll_per_worker() {
    let mut cfg = config(Architecture::Sync, "rps_matrix.scenario_0", 800);
    cfg.num_workers = 4;
    let report = run(&cfg).unwrap();
    assert_eq!(report.env_steps, 800);
    assert!(!report.unrolls_per_update.is_empty());
    assert!(report.unrolls_per_update.iter().all(|&n| n == 4));
}

#[test]
fn learner_metrics_rows_have_loss_fields() {
    let (metrics, _) = run_to_dir(&config(Architecture::Single, "rps_matrix", 40));
    let mut lines = metrics.lines();
    assert_eq!(lines.next(), Some(METRICS_HEADER));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert!(rows.iter().all(|r| r.len() == 9));
    let learner: Vec<_> = rows.iter().filter(|r| !r[4].is_empty()).collect();
    let episodes: Vec<_> = rows.iter().filter(|r| !r[3].is_empty()).collect();
    assert_eq!(episodes.len(), 8, "4 self-play episodes, 2 players each");
    assert_eq!(learner.len(), 4);
    assert!(learner.iter().all(|r| r[1].is_empty() && r[8].is_empty()));
}

#[test]
fn async_publishes_every_agent_and_conserves_replay_items() {
    let mut cfg = config(Architecture::Async, "rps_matrix.scenario_0", 2000);
    cfg.population_size = 2;
    cfg.num_workers = 3;
    let dir = tempfile::tempdir().unwrap();
    cfg.out_dir = Some(dir.path().into());
    let report = run(&cfg).unwrap();
    let stats = report.replay_stats.unwrap();
    assert_eq!(stats.items_written, stats.items_sampled + stats.items_dropped);
    assert_eq!(stats.current_size, 0);
    assert!(report.env_steps >= 2000);
    let saved = load_checkpoint(&dir.path().join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(saved.len(), 2);
    assert!(
        saved.iter().all(|p| p.version > 0),
        "{:?}",
        saved.iter().map(|p| p.version).collect::<Vec<_>>()
    );
}

#[test]
fn async_over_tcp_transport() {
    let mut cfg = config(Architecture::Async, "pd_matrix.scenario_1", 400);
    cfg.transport = Transport::Tcp;
    cfg.num_workers = 2;
    let report = run(&cfg).unwrap();
    let stats = report.replay_stats.unwrap();
    assert_eq!(stats.items_written, 40);
    assert_eq!(stats.items_written, stats.items_sampled + stats.items_dropped);
}

#[test]
fn async_local_actions_match_recorded_versions() {
    let mut cfg = config(Architecture::Async, "rps_matrix.scenario_0", 3000);
    cfg.num_workers = 2;
    cfg.param_sync_interval = 7;
    cfg.audit_samples = 200;
    let report = run(&cfg).unwrap();
    assert_eq!(report.audit.len(), 200);
    for rec in &report.audit {
        assert_eq!(rec.params.version, rec.version);
        let (logits, value) = forward(&rec.params, &rec.observation).unwrap();
        assert_eq!(value.to_bits(), rec.value.to_bits());
        assert_eq!(log_softmax(&logits)[rec.action].to_bits(), rec.log_prob.to_bits());
    }
}

#[test]
fn sebulba_batches_within_bounds_and_serves_recomputable_actions() {
    let mut cfg = config(Architecture::Sebulba, "rps_matrix.scenario_0", 4000);
    cfg.num_workers = 8;
    cfg.infer_batch = 8;
    cfg.audit_samples = 500;
    let report = run(&cfg).unwrap();
    assert!(!report.inference_batch_sizes.is_empty());
    assert!(report.inference_batch_sizes.iter().all(|&b| (1..=8).contains(&b)));
    assert_eq!(report.audit.len(), 500);
    for rec in &report.audit {
        let (logits, value) = forward(&rec.params, &rec.observation).unwrap();
        assert_eq!(value.to_bits(), rec.value.to_bits());
        assert_eq!(log_softmax(&logits)[rec.action].to_bits(), rec.log_prob.to_bits());
    }
    assert!(report.final_params.iter().all(|p| p.version > 0));
}

#[test]
fn sebulba_over_tcp_transport() {
    let mut cfg = config(Architecture::Sebulba, "cramped_kitchen", 400);
    cfg.transport = Transport::Tcp;
    cfg.num_workers = 2;
    cfg.infer_batch = 2;
    let report = run(&cfg).unwrap();
    assert!(report.env_steps >= 400 && report.env_steps % 200 == 0);
    assert!(report.final_params.iter().all(|p| p.version > 0));
}

#[test]
fn served_action_is_deterministic_per_request() {
    let logits = [0.1f32, 0.7, -0.3];
    assert_eq!(served_action(&logits, 3, 17), served_action(&logits, 3, 17));
}

#[test]
fn invalid_configs_are_rejected_before_running() {
    let mut cfg = config(Architecture::Async, "rps_matrix", 10);
    cfg.num_workers = 0;
    match run(&cfg) {
        Err(RunError::Config(msg)) => assert!(msg.contains("num_workers"), "{msg}"),
        other => panic!("{other:?}"),
    }
    let mut cfg = config(Architecture::Single, "rps_matrix", 10);
    cfg.unroll_length = 1;
    assert!(matches!(run(&cfg), Err(RunError::Config(_))));
    let cfg = config(Architecture::Sync, "rps_matrix", 10);
    assert!(matches!(run_single(&cfg), Err(RunError::Config(_))));
    let cfg = config(Architecture::Single, "no_such_env", 10);
    assert!(matches!(run(&cfg), Err(RunError::Scenario(_))));
}
