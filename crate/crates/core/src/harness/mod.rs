//! Experiment orchestration: configs, seeded runs, delay sweeps, artifact export and the
//! verification suites.

pub mod config;
pub mod presets;
pub mod verify;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use config::{Algorithm, EnvironmentSection, ExperimentConfig, ExperimentSection, ExpertSection};
pub use presets::{preset, Preset, PRESETS};
pub use verify::{verify, write_report, VerifyOptions, SUITES};

use crate::baselines::{run_tabular, ActionGrid, Discretizer};
use crate::curve::{mean_std, read_curve_csv, write_curve_csv, CurveRow};
use crate::delay::Delay;
use crate::dida::{run_dida, ActionTarget};
use crate::envs::{make_chain_mdp, ChainCosts, GaussianWalk, Pendulum, CHAIN_MOVES};
use crate::error::{Error, Result};
use crate::experts::{value_iteration_expert, GaussianOptimalExpert, PendulumEnergyExpert};
use crate::mdp::{Environment, FiniteEnv};

/// Learning curve of one seed under a validated config.
pub fn run_seed(config: &ExperimentConfig, seed: u64) -> Result<Vec<CurveRow>> {
    let algorithm = config.algorithm()?;
    let delay = config.delay()?;
    let env = &config.environment;
    let mut curve = match config.environment_name()? {
        "pendulum" => {
            let pendulum = match env.noise_spec()? {
                Some(noise) => Pendulum::with_noise(noise)?,
                None => Pendulum::new(),
            };
            let grid = || (Discretizer::pendulum(env.bins), ActionGrid::pendulum());
            learn(config, algorithm, pendulum, delay, &PendulumEnergyExpert::default(), None, grid, seed)?
        }
        "chain" => {
            let mdp = make_chain_mdp(env.n_states, env.slip, ChainCosts::default(), env.gamma)?;
            let expert = value_iteration_expert(&mdp, 1e-10)?;
            let target = ActionTarget::Embedded(CHAIN_MOVES.to_vec());
            let n = env.n_states;
            let grid = || (Discretizer::Finite { n }, ActionGrid::Discrete { n: 3 });
            learn(config, algorithm, FiniteEnv::new(mdp), delay, &expert, Some(target), grid, seed)?
        }
        _ => {
            let walk = GaussianWalk::new(env.walk)?;
            let expert = GaussianOptimalExpert { l_pi: env.walk.l_pi };
            let grid = || -> (Discretizer, ActionGrid) { unreachable!("validation rejects tabular learners on the walk") };
            learn(config, algorithm, walk, delay, &expert, None, grid, seed)?
        }
    };
    let hash = config.hash();
    for row in &mut curve {
        row.config_hash = hash.clone();
    }
    Ok(curve)
}

#[allow(clippy::too_many_arguments)]
fn learn<E, X, G>(
    config: &ExperimentConfig,
    algorithm: Algorithm,
    env: E,
    delay: Delay,
    expert: &X,
    target: Option<ActionTarget>,
    grid: G,
    seed: u64,
) -> Result<Vec<CurveRow>>
where
    E: Environment + Clone,
    X: crate::experts::Expert,
    G: FnOnce() -> (Discretizer, ActionGrid),
{
    match algorithm.tabular_kind() {
        None => Ok(run_dida(env, delay, expert, &config.dida_config(), target, seed)?.curve),
        Some(kind) => {
            let (discretizer, actions) = grid();
            Ok(run_tabular(env, delay, kind, discretizer, actions, &config.tabular, seed)?.curve)
        }
    }
}

/// Runs every seed on a pool of scoped worker threads. Results come back in seed order.
pub fn run_seeds(config: &ExperimentConfig) -> Vec<(u64, Result<Vec<CurveRow>>)> {
    let seeds = &config.experiment.seeds;
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(seeds.len())
        .max(1);
    let mut results: Vec<Option<Result<Vec<CurveRow>>>> = (0..seeds.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                scope.spawn(move || {
                    (w..seeds.len())
                        .step_by(workers)
                        .map(|i| (i, run_seed(config, seeds[i])))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("worker panicked") {
                results[i] = Some(r);
            }
        }
    });
    seeds
        .iter()
        .copied()
        .zip(results.into_iter().map(|r| r.expect("every seed ran")))
        .collect()
}

/// Mean and population std across seeds at each iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub iteration: usize,
    pub env_steps: u64,
    pub mean_return: f64,
    pub std_return: f64,
    pub n_seeds: usize,
    pub config_hash: String,
}

pub fn aggregate(curves: &[Vec<CurveRow>]) -> Result<Vec<AggregateRow>> {
    let first = curves
        .first()
        .ok_or_else(|| Error::Usage("nothing to aggregate".into()))?;
    if curves.iter().any(|c| c.len() != first.len()) {
        return Err(Error::State("seeds produced curves of different lengths".into()));
    }
    Ok(first
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let finals: Vec<f64> = curves.iter().map(|c| c[i].mean_return).collect();
            let (mean, std) = mean_std(&finals);
            AggregateRow {
                iteration: row.iteration,
                env_steps: row.env_steps,
                mean_return: mean,
                std_return: std,
                n_seeds: curves.len(),
                config_hash: row.config_hash.clone(),
            }
        })
        .collect())
}

pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const ERROR_FILE: &str = "error.json";

pub fn seed_file(seed: u64) -> String {
    format!("seed_{seed}.csv")
}

#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub seed_files: Vec<PathBuf>,
    pub aggregate_file: PathBuf,
    pub aggregate: Vec<AggregateRow>,
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    seed: u64,
    config_hash: &'a str,
    error: String,
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs all seeds and writes one curve per seed plus the aggregate. When a seed fails, the
/// curves that did finish are still written, together with an error record, and the first
/// error is returned.
pub fn run(config: &ExperimentConfig, out_dir: &Path) -> Result<RunArtifacts> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let hash = config.hash();
    let mut seed_files = Vec::new();
    let mut curves = Vec::new();
    let mut failures = Vec::new();
    for (seed, result) in run_seeds(config) {
        match result {
            Ok(curve) => {
                let path = out_dir.join(seed_file(seed));
                write_curve_csv(&path, &curve)?;
                seed_files.push(path);
                curves.push(curve);
            }
            Err(e) => failures.push((seed, e)),
        }
    }
    if let Some((seed, e)) = failures.into_iter().next() {
        let record = ErrorRecord {
            seed,
            config_hash: &hash,
            error: e.to_string(),
        };
        std::fs::write(out_dir.join(ERROR_FILE), serde_json::to_string(&record)? + "\n")?;
        return Err(e);
    }
    let aggregate = aggregate(&curves)?;
    let aggregate_file = out_dir.join(AGGREGATE_FILE);
    write_csv(&aggregate_file, &aggregate)?;
    Ok(RunArtifacts {
        dir: out_dir.to_path_buf(),
        seed_files,
        aggregate_file,
        aggregate,
    })
}

/// Recomputes the aggregate from the per-seed files in `dir` and compares it with `aggregate.csv`.
pub fn audit(dir: &Path, config: &ExperimentConfig) -> Result<()> {
    let hash = config.hash();
    let mut curves = Vec::new();
    for &seed in &config.experiment.seeds {
        let curve = read_curve_csv(&dir.join(seed_file(seed)))?;
        if let Some(row) = curve.iter().find(|r| r.seed != seed || r.config_hash != hash) {
            return Err(Error::State(format!(
                "{} holds a row for seed {} / config {}",
                seed_file(seed),
                row.seed,
                row.config_hash
            )));
        }
        curves.push(curve);
    }
    let expected = aggregate(&curves)?;
    let mut reader = csv::Reader::from_path(dir.join(AGGREGATE_FILE))?;
    let stored = reader
        .deserialize()
        .collect::<std::result::Result<Vec<AggregateRow>, _>>()?;
    if stored.len() != expected.len() {
        return Err(Error::State(format!(
            "aggregate has {} rows, per-seed files give {}",
            stored.len(),
            expected.len()
        )));
    }
    for (s, e) in stored.iter().zip(&expected) {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * (1.0 + b.abs());
        if s.iteration != e.iteration
            || s.env_steps != e.env_steps
            || s.n_seeds != e.n_seeds
            || s.config_hash != e.config_hash
            || !close(s.mean_return, e.mean_return)
            || !close(s.std_return, e.std_return)
        {
            return Err(Error::State(format!(
                "aggregate row {} does not match the per-seed files",
                s.iteration
            )));
        }
    }
    Ok(())
}

/// Final-iteration return across seeds at one delay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub delay: f64,
    pub mean_final_return: f64,
    pub std: f64,
    pub n_seeds: usize,
    pub config_hash: String,
}

pub const SWEEP_FILE: &str = "sweep.csv";

fn delay_dir(delay: f64) -> String {
    format!("delay_{delay}")
}

/// Runs the config at each delay with every other setting fixed. Per-delay artifacts go in
/// `delay_<d>/` and the summary table in `sweep.csv`, sorted by delay.
pub fn sweep_delay(config: &ExperimentConfig, delays: &[f64], out_dir: &Path) -> Result<Vec<SweepRow>> {
    if delays.is_empty() {
        return Err(Error::Usage("sweep needs at least one delay".into()));
    }
    let mut delays = delays.to_vec();
    delays.sort_by(f64::total_cmp);
    delays.dedup();
    std::fs::create_dir_all(out_dir)?;
    let mut rows = Vec::with_capacity(delays.len());
    for delay in delays {
        let mut c = config.clone();
        c.experiment.delay = Some(delay);
        let artifacts = run(&c, &out_dir.join(delay_dir(delay)))?;
        let last = artifacts
            .aggregate
            .last()
            .ok_or_else(|| Error::State("run produced an empty curve".into()))?;
        rows.push(SweepRow {
            delay,
            mean_final_return: last.mean_return,
            std: last.std_return,
            n_seeds: last.n_seeds,
            config_hash: last.config_hash.clone(),
        });
    }
    write_csv(&out_dir.join(SWEEP_FILE), &rows)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_dida() -> ExperimentConfig {
        ExperimentConfig::from_toml(
            r#"
[experiment]
algorithm = "dida"
delay = 1
seeds = [3, 4]

[environment]
name = "chain"

[dida]
iterations = 2
steps_per_iteration = 200
episode_length = 50
eval_steps = 100
train_steps = 20

[dida.model]
hidden = [8]
"#,
        )
        .unwrap()
    }

    #[test]
    fn run_writes_one_file_per_seed_plus_aggregate() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_dida();
        let a = run(&config, dir.path()).unwrap();
        assert_eq!(a.seed_files.len(), 2);
        assert_eq!(a.aggregate.len(), 2);
        assert!(a.aggregate.iter().all(|r| r.n_seeds == 2 && r.config_hash == config.hash()));
        audit(dir.path(), &config).unwrap();
        let curve = read_curve_csv(&dir.path().join(seed_file(4))).unwrap();
        assert!(curve.iter().all(|r| r.seed == 4));
    }

    #[test]
    fn runs_are_byte_identical() {
        let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let config = tiny_dida();
        run(&config, d1.path()).unwrap();
        run(&config, d2.path()).unwrap();
        for name in [seed_file(3), seed_file(4), AGGREGATE_FILE.to_string()] {
            let a = std::fs::read(d1.path().join(&name)).unwrap();
            let b = std::fs::read(d2.path().join(&name)).unwrap();
            assert_eq!(a, b, "{name}");
        }
    }

    #[test]
    fn audit_catches_tampering() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_dida();
        run(&config, dir.path()).unwrap();
        let path = dir.path().join(seed_file(3));
        let mut rows = read_curve_csv(&path).unwrap();
        rows[0].mean_return += 1.0;
        write_curve_csv(&path, &rows).unwrap();
        assert!(audit(dir.path(), &config).is_err());
    }

    #[test]
    fn sweep_sorts_and_matches_plain_run() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = tiny_dida();
        config.experiment.seeds = vec![0];
        let rows = sweep_delay(&config, &[2.0, 0.0, 1.0], dir.path()).unwrap();
        assert_eq!(rows.iter().map(|r| r.delay).collect::<Vec<_>>(), vec![0.0, 1.0, 2.0]);
        config.experiment.delay = Some(0.0);
        let plain = run(&config, &dir.path().join("plain")).unwrap();
        let last = plain.aggregate.last().unwrap();
        assert_eq!(rows[0].mean_final_return, last.mean_return);
        assert_eq!(rows[0].std, last.std_return);
        let text = std::fs::read_to_string(dir.path().join(SWEEP_FILE)).unwrap();
        assert!(text.starts_with("delay,mean_final_return,std,"));
    }

    #[test]
    fn tabular_chain_run() {
        let mut config = tiny_dida();
        config.experiment.algorithm = Some(Algorithm::Dsarsa);
        config.tabular.iterations = 2;
        config.tabular.steps_per_iteration = 500;
        config.tabular.episode_length = 50;
        config.tabular.eval_steps = 100;
        let curve = run_seed(&config, 0).unwrap();
        assert_eq!(curve.len(), 2);
        assert_eq!(curve[1].env_steps, 1000);
    }

    #[test]
    fn capability_failure_leaves_error_record() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = preset("aug-sarsa-pendulum-desk").unwrap();
        config.experiment.seeds = vec![0];
        config.experiment.delay = Some(10.0);
        config.tabular.memory_cap = 1000;
        let err = run(&config, dir.path()).unwrap_err();
        assert!(matches!(err, Error::Capability(_)), "{err}");
        let record = std::fs::read_to_string(dir.path().join(ERROR_FILE)).unwrap();
        assert!(record.contains("\"seed\":0"));
    }
}
