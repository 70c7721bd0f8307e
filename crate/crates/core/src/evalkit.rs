//! Evaluation of frozen checkpoints against scenarios, and cross-seed
//! aggregation into a table.
//!
//! The reported metric is the mean focal return: per episode, the return of
//! each focal player summed over steps and averaged over focal players; then
//! averaged over episodes.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::checkpoint::{load_checkpoint, CheckpointError};
use crate::envcore::EnvError;
use crate::nn::{forward, sample_action, Params};
use crate::scenarios::{list_scenarios, make_env, substrate_of, ScenarioError};
use crate::substrates::is_substrate;

pub const RESULT_HEADER: &str = "scenario,label,seed,episodes,mean_focal_return";
pub const SUBSTRATE_ROW: &str = "Substrate";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("loading checkpoint: {0}")]
    CheckpointLoad(#[from] CheckpointError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("environment: {0}")]
    Env(#[from] EnvError),
    #[error("episodes must be at least 1")]
    NoEpisodes,
    #[error("checkpoint holds no agents")]
    EmptyPopulation,
    #[error("non-finite value in result for {0}")]
    NonFinite(String),
    #[error("{0} contains a CSV separator")]
    BadField(String),
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("no results to aggregate")]
    EmptyInput,
    #[error("results span several substrates: {0:?}")]
    MixedSubstrates(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub scenario: String,
    pub label: String,
    pub seed: u64,
    pub episodes: usize,
    pub mean_focal_return: f64,
    pub episode_returns: Vec<f64>,
}

fn mean_left_to_right(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |acc, v| acc + v) / values.len() as f64
}

/// Runs `population` on `scenario` for `episodes` episodes, sampling actions
/// (no learning). Focal slots are filled by cycling through the population.
pub fn evaluate_population(
    population: &[Params],
    scenario: &str,
    episodes: usize,
    seed: u64,
    label: &str,
) -> Result<EvalResult, EvalError> {
    if episodes == 0 {
        return Err(EvalError::NoEpisodes);
    }
    if population.is_empty() {
        return Err(EvalError::EmptyPopulation);
    }
    let mut env = make_env(scenario, seed)?;
    let spec = env.spec();
    for p in population {
        if p.spec.obs_dim != spec.obs_dim || p.spec.num_actions != spec.num_actions {
            return Err(ScenarioError::ArityMismatch(format!(
                "policy expects obs_dim {} / {} actions, {scenario} has {} / {}",
                p.spec.obs_dim, p.spec.num_actions, spec.obs_dim, spec.num_actions
            ))
            .into());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let n = spec.num_players;
    let mut episode_returns = Vec::with_capacity(episodes);
    let mut next_agent = 0;
    let mut actions = vec![0; n];
    for _ in 0..episodes {
        let agents: Vec<&Params> = (0..n)
            .map(|p| &population[(next_agent + p) % population.len()])
            .collect();
        next_agent = (next_agent + n) % population.len();
        let mut returns = vec![0.0f64; n];
        let mut ts = env.reset();
        while !ts.is_last() {
            for p in 0..n {
                let (logits, _) = forward(agents[p], &ts.observations[p]).expect("arity checked");
                actions[p] = sample_action(&logits, &mut rng).0;
            }
            ts = env.step(&actions)?;
            for (r, &x) in returns.iter_mut().zip(&ts.rewards) {
                *r += x as f64;
            }
        }
        episode_returns.push(mean_left_to_right(&returns));
    }
    Ok(EvalResult {
        scenario: scenario.to_string(),
        label: label.to_string(),
        seed,
        episodes,
        mean_focal_return: mean_left_to_right(&episode_returns),
        episode_returns,
    })
}

/// Default label for a checkpoint: its run directory name for
/// `<dir>/checkpoint.majx`, otherwise the file stem.
pub fn checkpoint_label(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned());
    match (stem.as_deref(), path.parent().and_then(Path::file_name)) {
        (Some("checkpoint"), Some(dir)) => dir.to_string_lossy().into_owned(),
        (Some(stem), _) => stem.to_string(),
        _ => "policy".to_string(),
    }
}

pub fn evaluate(checkpoint: &Path, scenario: &str, episodes: usize, seed: u64) -> Result<EvalResult, EvalError> {
    let population = load_checkpoint(checkpoint)?;
    evaluate_population(&population, scenario, episodes, seed, &checkpoint_label(checkpoint))
}

/// Every registry scenario of `substrate`, preceded by the substrate itself.
pub fn all_scenarios(substrate: &str) -> Result<Vec<String>, EvalError> {
    let mut names = vec![substrate.to_string()];
    names.extend(list_scenarios(substrate)?.into_iter().map(|s| s.name));
    Ok(names)
}

fn check_field(field: &str, what: &str) -> Result<(), EvalError> {
    if field.contains([',', '\n', '\r']) {
        return Err(EvalError::BadField(format!("{what} {field:?}")));
    }
    Ok(())
}

pub fn result_to_csv(result: &EvalResult) -> Result<String, EvalError> {
    check_field(&result.scenario, "scenario")?;
    check_field(&result.label, "label")?;
    if !result.mean_focal_return.is_finite() || result.episode_returns.iter().any(|r| !r.is_finite()) {
        return Err(EvalError::NonFinite(result.scenario.clone()));
    }
    let mut out = format!("{RESULT_HEADER}\n");
    let _ = writeln!(
        out,
        "{},{},{},{},{}",
        result.scenario, result.label, result.seed, result.episodes, result.mean_focal_return
    );
    for (i, r) in result.episode_returns.iter().enumerate() {
        let _ = writeln!(out, "episode,{i},{r}");
    }
    Ok(out)
}

pub fn write_result(result: &EvalResult, path: &Path) -> Result<(), EvalError> {
    let text = result_to_csv(result)?;
    fs::write(path, text).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn parse_result(text: &str, source: &str) -> Result<EvalResult, EvalError> {
    let err = |line: usize, message: String| EvalError::Parse {
        path: source.to_string(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, RESULT_HEADER)) => {}
        Some((n, other)) => return Err(err(n, format!("expected header {RESULT_HEADER:?}, found {other:?}"))),
        None => return Err(err(1, "empty file".into())),
    }
    let (n, summary) = lines.next().ok_or_else(|| err(2, "missing summary line".into()))?;
    let fields: Vec<&str> = summary.split(',').collect();
    if fields.len() != 5 {
        return Err(err(n, format!("expected 5 fields, found {}", fields.len())));
    }
    let seed = fields[2].parse::<u64>().map_err(|e| err(n, format!("seed: {e}")))?;
    let episodes = fields[3]
        .parse::<usize>()
        .map_err(|e| err(n, format!("episodes: {e}")))?;
    let mean = fields[4]
        .parse::<f64>()
        .map_err(|e| err(n, format!("mean_focal_return: {e}")))?;
    if !mean.is_finite() {
        return Err(err(n, "mean_focal_return is not finite".into()));
    }
    let mut episode_returns = Vec::with_capacity(episodes);
    for (n, line) in lines {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 || parts[0] != "episode" {
            return Err(err(n, format!("expected episode,<index>,<return>, found {line:?}")));
        }
        let index = parts[1]
            .parse::<usize>()
            .map_err(|e| err(n, format!("episode index: {e}")))?;
        if index != episode_returns.len() {
            return Err(err(n, format!("episode index {index} out of sequence")));
        }
        let r = parts[2]
            .parse::<f64>()
            .map_err(|e| err(n, format!("episode return: {e}")))?;
        if !r.is_finite() {
            return Err(err(n, "episode return is not finite".into()));
        }
        episode_returns.push(r);
    }
    if episode_returns.len() != episodes {
        return Err(err(
            text.lines().count(),
            format!("header declares {episodes} episodes, found {}", episode_returns.len()),
        ));
    }
    Ok(EvalResult {
        scenario: fields[0].to_string(),
        label: fields[1].to_string(),
        seed,
        episodes,
        mean_focal_return: mean,
        episode_returns,
    })
}

pub fn read_result(path: &Path) -> Result<EvalResult, EvalError> {
    let text = fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_result(&text, &path.display().to_string())
}

/// File name used for one (scenario, seed) result.
pub fn result_file_name(scenario: &str, seed: u64) -> PathBuf {
    PathBuf::from(format!("{scenario}.seed{seed}.csv"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalTable {
    pub substrate: String,
    /// Row display names: "Substrate", "Scenario 0", ...
    pub rows: Vec<String>,
    pub labels: Vec<String>,
    /// `cells[row][label]`, the cross-seed mean when any result exists.
    pub cells: Vec<Vec<Option<f64>>>,
    pub seeds: Vec<Vec<usize>>,
}

/// Row key: 0 for the substrate row, `k + 1` for scenario k.
fn row_key(scenario: &str) -> Result<usize, EvalError> {
    if is_substrate(scenario) {
        return Ok(0);
    }
    let k = scenario
        .rsplit_once(".scenario_")
        .and_then(|(_, k)| k.parse::<usize>().ok())
        .ok_or_else(|| ScenarioError::UnknownScenario(scenario.to_string()))?;
    Ok(k + 1)
}

fn row_name(key: usize) -> String {
    match key {
        0 => SUBSTRATE_ROW.to_string(),
        k => format!("Scenario {}", k - 1),
    }
}

/// Groups results by (scenario, label) and averages across seeds. Columns
/// follow `label_order`, then any other labels in order of first appearance.
pub fn aggregate(results: &[EvalResult], label_order: &[String]) -> Result<EvalTable, EvalError> {
    let first = results.first().ok_or(EvalError::EmptyInput)?;
    let substrate = substrate_of(&first.scenario).to_string();
    let mut substrates: Vec<String> = results.iter().map(|r| substrate_of(&r.scenario).to_string()).collect();
    substrates.sort();
    substrates.dedup();
    if substrates.len() > 1 {
        return Err(EvalError::MixedSubstrates(substrates));
    }

    let mut labels: Vec<String> = Vec::new();
    for label in label_order.iter().chain(results.iter().map(|r| &r.label)) {
        if !labels.contains(label) {
            labels.push(label.clone());
        }
    }
    let mut keys = results
        .iter()
        .map(|r| row_key(&r.scenario))
        .collect::<Result<Vec<_>, _>>()?;
    let row_keys = {
        let mut k = keys.clone();
        k.sort_unstable();
        k.dedup();
        k
    };

    let mut values: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); labels.len()]; row_keys.len()];
    for (result, key) in results.iter().zip(keys.drain(..)) {
        let row = row_keys.binary_search(&key).expect("collected above");
        let col = labels.iter().position(|l| *l == result.label).expect("collected above");
        values[row][col].push(result.mean_focal_return);
    }
    let cells = values
        .iter_mut()
        .map(|row| {
            row.iter_mut()
                .map(|v| {
                    if v.is_empty() {
                        return None;
                    }
                    v.sort_by(f64::total_cmp);
                    Some(mean_left_to_right(v))
                })
                .collect()
        })
        .collect();
    let seeds = values.iter().map(|row| row.iter().map(Vec::len).collect()).collect();
    Ok(EvalTable {
        substrate,
        rows: row_keys.into_iter().map(row_name).collect(),
        labels,
        cells,
        seeds,
    })
}

impl EvalTable {
    pub fn to_csv(&self) -> String {
        let mut out = format!("row,{}\n", self.labels.join(","));
        for (name, cells) in self.rows.iter().zip(&self.cells) {
            out.push_str(name);
            for cell in cells {
                out.push(',');
                if let Some(v) = cell {
                    let _ = write!(out, "{v}");
                }
            }
            out.push('\n');
        }
        out
    }

    /// Fixed-width table with two decimals per cell.
    pub fn to_text(&self) -> String {
        let first_width = self
            .rows
            .iter()
            .map(String::len)
            .chain([self.substrate.len()])
            .max()
            .unwrap_or(0);
        let formatted: Vec<Vec<String>> = self
            .cells
            .iter()
            .map(|row| {
                row.iter()
                    .map(|c| c.map_or("-".to_string(), |v| format!("{v:.2}")))
                    .collect()
            })
            .collect();
        let widths: Vec<usize> = (0..self.labels.len())
            .map(|c| {
                formatted
                    .iter()
                    .map(|r| r[c].len())
                    .chain([self.labels[c].len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut out = format!("{:<first_width$}", self.substrate);
        for (label, w) in self.labels.iter().zip(&widths) {
            let _ = write!(out, "  {label:>w$}");
        }
        out.push('\n');
        for (name, row) in self.rows.iter().zip(&formatted) {
            let _ = write!(out, "{name:<first_width$}");
            for (cell, w) in row.iter().zip(&widths) {
                let _ = write!(out, "  {cell:>w$}");
            }
            out.push('\n');
        }
        out
    }
}
