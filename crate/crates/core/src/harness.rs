//! Experiment orchestration: batches of simulated sessions over environments,
//! methods, seeds and partner populations, with raw logs, reward grid dumps,
//! per-method summaries and report tables.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::board::{BoardConfig, EnvKind, Preset};
use crate::error::{Error, Result};
use crate::exec::par_map;
use crate::grid::GridDump;
use crate::partner::PartnerParams;
use crate::ppo::{Checkpoint, Policy};
use crate::train::{run_simulated, ActionMode, Method, RunResult, SessionConfig, StopReason};

const KEEPER_ENV1: &str = include_str!("../fixtures/keeper_env1.json");
const KEEPER_ENV2: &str = include_str!("../fixtures/keeper_env2.json");

/// The centre-keeper checkpoint shipped with the crate for the `sim` preset.
pub fn bundled_keeper(env: EnvKind) -> Result<Checkpoint> {
    Checkpoint::from_json(match env {
        EnvKind::Env1 => KEEPER_ENV1,
        EnvKind::Env2 => KEEPER_ENV2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartnerPopulation {
    pub count: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub envs: Vec<EnvKind>,
    pub methods: Vec<Method>,
    #[serde(default)]
    pub preset: Preset,
    pub partners: PartnerPopulation,
    pub seeds: Vec<u64>,
    /// Iteration budget per run.
    pub max_iterations: usize,
    /// Keep a reward grid dump every this many iterations; 0 keeps only the
    /// final one.
    #[serde(default)]
    pub snapshot_every: usize,
    #[serde(default)]
    pub validation_actions: ActionMode,
    /// Default output directory when none is given on the command line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Centre-keeper checkpoints for the fixed method. Environments left out
    /// use the bundled keeper.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub keepers: BTreeMap<EnvKind, PathBuf>,
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("experiment spec: {m}")));
        if self.envs.is_empty() || self.envs.iter().collect::<BTreeSet<_>>().len() != self.envs.len() {
            return bad("envs must be non-empty and unique");
        }
        if self.methods.is_empty() || self.methods.iter().collect::<BTreeSet<_>>().len() != self.methods.len() {
            return bad("methods must be non-empty and unique");
        }
        if self.seeds.is_empty() || self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return bad("seeds must be non-empty and unique");
        }
        if self.max_iterations < 1 {
            return bad("max_iterations must be at least 1");
        }
        if self.partners.count < 1 {
            return bad("the partner population needs at least one member");
        }
        Ok(())
    }

    /// Every (env, method, seed, partner) combination, in output order.
    pub fn jobs(&self) -> Vec<Job> {
        let mut jobs = Vec::new();
        for &env in &self.envs {
            for &method in &self.methods {
                for &seed in &self.seeds {
                    for partner_index in 0..self.partners.count {
                        jobs.push(Job {
                            env,
                            method,
                            seed,
                            partner_index,
                        });
                    }
                }
            }
        }
        jobs
    }

    pub fn session_config(&self, env: EnvKind, method: Method) -> SessionConfig {
        let mut cfg = SessionConfig::new(env, self.preset, method);
        cfg.max_iterations = self.max_iterations;
        cfg.validation_actions = self.validation_actions;
        cfg
    }

    fn keeper(&self, env: EnvKind) -> Result<Policy> {
        let ckpt = match self.keepers.get(&env) {
            Some(path) => Checkpoint::load(path)?,
            None if self.preset == Preset::Sim => bundled_keeper(env)?,
            None => {
                return Err(Error::InvalidConfig(format!(
                    "no bundled keeper for the {:?} preset; pass one under `keepers`",
                    self.preset
                )))
            }
        };
        if ckpt.board != BoardConfig::for_env(env, self.preset) {
            return Err(Error::InvalidConfig(format!("keeper checkpoint was trained on a different board than {env}")));
        }
        Ok(ckpt.policy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Job {
    pub env: EnvKind,
    pub method: Method,
    pub seed: u64,
    pub partner_index: usize,
}

impl Job {
    pub fn id(&self) -> String {
        format!("{}-{}-s{}-p{}", self.env, self.method, self.seed, self.partner_index)
    }
}

/// One row of the raw per-iteration log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRow {
    pub env: EnvKind,
    pub method: Method,
    pub seed: u64,
    pub partner: usize,
    pub iteration: usize,
    pub specificity: f64,
    pub path_length: f64,
    pub density_ratio: f64,
    pub human_effort: f64,
    pub agreement_ratio: f64,
    pub mean_x: f64,
    pub mean_y: f64,
    pub steps: usize,
    pub termination: String,
    pub episode_return: f64,
    pub reward_change: f64,
    pub new_cells: usize,
    pub satisfied: Option<bool>,
    pub partner_radius: Option<f64>,
    pub reward_checksum: String,
    pub policy_checksum: String,
}

/// Outcome of one run: training summary plus the validation metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub env: EnvKind,
    pub method: Method,
    pub seed: u64,
    pub partner: usize,
    pub iterations: usize,
    pub stop_reason: StopReason,
    /// Goal specificity of the last training iteration.
    pub final_specificity: f64,
    pub path_length: f64,
    pub density_ratio: f64,
    pub human_effort: f64,
    pub agreement_ratio: f64,
    /// Iteration count when the run stopped on satisfaction or a plateau.
    pub convergence_iteration: Option<usize>,
    /// The policy parameters changed during training.
    pub policy_drift: bool,
    /// Iterations that visited new cells without changing the reward.
    pub evolution_violations: usize,
    pub run_dir: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub run: String,
    pub error: String,
}

/// Sample mean and standard deviation (n − 1 denominator, 0 for n = 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
                n,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std, n }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub specificity: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub env: EnvKind,
    pub method: Method,
    pub runs: usize,
    pub failures: usize,
    /// Specificity across the runs still active at each iteration.
    pub curve: Vec<CurvePoint>,
    pub final_specificity: Stat,
    pub path_length: Stat,
    pub density_ratio: Stat,
    pub human_effort: Stat,
    pub agreement_ratio: Stat,
    pub convergence_iteration: Stat,
    /// Run directories relative to the output directory.
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentOutcome {
    pub rows: Vec<IterationRow>,
    pub records: Vec<RunRecord>,
    pub summaries: Vec<RunSummary>,
    pub failures: Vec<RunFailure>,
}

/// Runs every job of `spec`, writing under `out`:
///
/// ```text
/// spec.json  results.csv  runs.csv  summary.json  failures.json
/// runs/<env>-<method>-s<seed>-p<partner>/
///     iterations.csv  validation.json  validation_trajectory.csv
///     reward_<iteration>.grid ...  reward_final.grid
/// ```
///
/// A failing run is reported in `failures.json` and the outcome; the others
/// still complete.
pub fn run_experiment(spec: &ExperimentSpec, out: &Path) -> Result<ExperimentOutcome> {
    spec.validate()?;
    let mut keepers = BTreeMap::new();
    if spec.methods.contains(&Method::Fixed) {
        for &env in &spec.envs {
            keepers.insert(env, spec.keeper(env)?);
        }
    }
    let populations: BTreeMap<EnvKind, Vec<PartnerParams>> = spec
        .envs
        .iter()
        .map(|&env| (env, PartnerParams::population(env, spec.partners.count, spec.partners.seed)))
        .collect();
    std::fs::create_dir_all(out.join("runs"))?;
    std::fs::write(out.join("spec.json"), serde_json::to_string_pretty(spec)?)?;

    let jobs = spec.jobs();
    let results = par_map(&jobs, |job| {
        let cfg = spec.session_config(job.env, job.method);
        let partner = populations[&job.env][job.partner_index];
        let init = keepers.get(&job.env).filter(|_| job.method == Method::Fixed).cloned();
        catch_unwind(AssertUnwindSafe(|| {
            run_simulated(&cfg, partner, job.partner_index, job.seed, init, spec.snapshot_every)
        }))
        .unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            Err(Error::Numerical(format!("run panicked: {msg}")))
        })
    });

    let mut outcome = ExperimentOutcome::default();
    for (job, result) in jobs.iter().zip(results) {
        let written = result.and_then(|r| write_run(out, job, &r));
        match written {
            Ok((rows, record)) => {
                outcome.rows.extend(rows);
                outcome.records.push(record);
            }
            Err(e) => {
                log::warn!("run {} failed: {e}", job.id());
                outcome.failures.push(RunFailure {
                    run: job.id(),
                    error: e.to_string(),
                });
            }
        }
    }
    for &env in &spec.envs {
        for &method in &spec.methods {
            let records: Vec<&RunRecord> = outcome.records.iter().filter(|r| r.env == env && r.method == method).collect();
            let rows: Vec<&IterationRow> = outcome.rows.iter().filter(|r| r.env == env && r.method == method).collect();
            let prefix = format!("{env}-{method}-");
            let failures = outcome.failures.iter().filter(|f| f.run.starts_with(&prefix)).count();
            outcome.summaries.push(summarize(env, method, &records, &rows, failures));
        }
    }

    write_csv(out.join("results.csv"), &outcome.rows)?;
    write_csv(out.join("runs.csv"), &outcome.records)?;
    std::fs::write(out.join("summary.json"), serde_json::to_string_pretty(&outcome.summaries)?)?;
    std::fs::write(out.join("failures.json"), serde_json::to_string_pretty(&outcome.failures)?)?;
    Ok(outcome)
}

fn write_csv<T: Serialize>(path: PathBuf, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_run(out: &Path, job: &Job, r: &RunResult) -> Result<(Vec<IterationRow>, RunRecord)> {
    let rel = format!("runs/{}", job.id());
    let dir = out.join(&rel);
    std::fs::create_dir_all(&dir)?;
    let rows: Vec<IterationRow> = r
        .iterations
        .iter()
        .map(|l| IterationRow {
            env: job.env,
            method: job.method,
            seed: job.seed,
            partner: job.partner_index,
            iteration: l.iteration,
            specificity: l.metrics.specificity,
            path_length: l.metrics.path_length,
            density_ratio: l.metrics.density_ratio,
            human_effort: l.metrics.human_effort,
            agreement_ratio: l.metrics.agreement_ratio,
            mean_x: l.metrics.mean_pos[0],
            mean_y: l.metrics.mean_pos[1],
            steps: l.steps,
            termination: l.termination.as_str().to_string(),
            episode_return: l.episode_return,
            reward_change: l.reward_change,
            new_cells: l.new_cells,
            satisfied: l.satisfied,
            partner_radius: l.partner_radius,
            reward_checksum: l.reward_checksum.clone(),
            policy_checksum: l.policy_checksum.clone(),
        })
        .collect();
    write_csv(dir.join("iterations.csv"), &rows)?;
    let mut traj = std::fs::File::create(dir.join("validation_trajectory.csv"))?;
    r.validation_trajectory.write_csv(&mut traj)?;
    let validation = serde_json::json!({
        "metrics": r.validation,
        "stop_reason": r.stop_reason,
        "partner": r.partner,
        "initial_policy_checksum": r.initial_policy_checksum,
        "final_policy_checksum": r.final_policy_checksum,
    });
    std::fs::write(dir.join("validation.json"), serde_json::to_string_pretty(&validation)?)?;
    for snap in &r.snapshots {
        snap.to_dump().save(dir.join(format!("reward_{:04}.grid", snap.iteration_index)))?;
    }
    r.final_reward.to_dump().save(dir.join("reward_final.grid"))?;

    let last = r.iterations.last().ok_or(Error::Empty("run iterations"))?;
    let record = RunRecord {
        env: job.env,
        method: job.method,
        seed: job.seed,
        partner: job.partner_index,
        iterations: r.iterations.len(),
        stop_reason: r.stop_reason,
        final_specificity: last.metrics.specificity,
        path_length: r.validation.path_length,
        density_ratio: r.validation.density_ratio,
        human_effort: r.validation.human_effort,
        agreement_ratio: r.validation.agreement_ratio,
        convergence_iteration: matches!(r.stop_reason, StopReason::Satisfied | StopReason::Plateau).then_some(r.iterations.len()),
        policy_drift: r.initial_policy_checksum != r.final_policy_checksum,
        evolution_violations: r.iterations.iter().filter(|l| l.new_cells > 0 && !(l.reward_change > 0.0)).count(),
        run_dir: rel,
    };
    Ok((rows, record))
}

fn summarize(env: EnvKind, method: Method, records: &[&RunRecord], rows: &[&IterationRow], failures: usize) -> RunSummary {
    let mut by_iter: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in rows {
        by_iter.entry(r.iteration).or_default().push(r.specificity);
    }
    let curve = by_iter
        .into_iter()
        .map(|(iteration, v)| CurvePoint {
            iteration,
            specificity: Stat::of(&v),
        })
        .collect();
    let col = |f: fn(&RunRecord) -> f64| Stat::of(&records.iter().map(|r| f(r)).collect::<Vec<_>>());
    let conv: Vec<f64> = records.iter().filter_map(|r| r.convergence_iteration.map(|c| c as f64)).collect();
    RunSummary {
        env,
        method,
        runs: records.len(),
        failures,
        curve,
        final_specificity: col(|r| r.final_specificity),
        path_length: col(|r| r.path_length),
        density_ratio: col(|r| r.density_ratio),
        human_effort: col(|r| r.human_effort),
        agreement_ratio: col(|r| r.agreement_ratio),
        convergence_iteration: Stat::of(&conv),
        artifacts: records.iter().map(|r| r.run_dir.clone()).collect(),
    }
}

/// Reads `runs.csv` from an experiment directory; run directories are made
/// relative to the working directory.
pub fn load_records(dir: &Path) -> Result<Vec<RunRecord>> {
    let mut rdr = csv::Reader::from_path(dir.join("runs.csv"))?;
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        let mut r: RunRecord = rec?;
        r.run_dir = dir.join(&r.run_dir).to_string_lossy().into_owned();
        out.push(r);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            resamples: 2000,
            level: 0.95,
            seed: 0,
        }
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bootstrap confidence interval for the mean.
pub fn bootstrap_mean_ci(values: &[f64], cfg: &BootstrapConfig) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Empty("bootstrap sample"));
    }
    if cfg.resamples < 1 || !(cfg.level > 0.0 && cfg.level < 1.0) {
        return Err(Error::InvalidConfig("bootstrap needs resamples >= 1 and a level in (0, 1)".into()));
    }
    let n = values.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut means: Vec<f64> = (0..cfg.resamples)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - cfg.level) / 2.0;
    Ok((quantile(&means, tail), quantile(&means, 1.0 - tail)))
}

/// Paired comparison of two methods on one metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderingTest {
    pub env: EnvKind,
    pub lower: Method,
    pub higher: Method,
    pub pairs: usize,
    /// Mean of `lower − higher` over the (seed, partner) pairs.
    pub mean_difference: f64,
    pub ci: (f64, f64),
    /// The whole interval lies below zero.
    pub holds: bool,
}

/// Tests `metric(lower) < metric(higher)` in `env` with a paired bootstrap
/// over the (seed, partner) combinations both methods completed.
pub fn ordering_test(
    records: &[RunRecord],
    env: EnvKind,
    lower: Method,
    higher: Method,
    metric: fn(&RunRecord) -> f64,
    cfg: &BootstrapConfig,
) -> Result<OrderingTest> {
    let key = |r: &RunRecord| (r.seed, r.partner);
    let highs: BTreeMap<(u64, usize), f64> =
        records.iter().filter(|r| r.env == env && r.method == higher).map(|r| (key(r), metric(r))).collect();
    let diffs: Vec<f64> = records
        .iter()
        .filter(|r| r.env == env && r.method == lower)
        .filter_map(|r| highs.get(&key(r)).map(|h| metric(r) - h))
        .collect();
    let ci = bootstrap_mean_ci(&diffs, cfg)?;
    Ok(OrderingTest {
        env,
        lower,
        higher,
        pairs: diffs.len(),
        mean_difference: Stat::of(&diffs).mean,
        ci,
        holds: ci.1 < 0.0,
    })
}

/// One line of the performance table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub env: EnvKind,
    pub method: Method,
    /// `(name, stat, bootstrap interval of the mean)` for U, L, δ, σ and φ.
    pub columns: Vec<(String, Stat, (f64, f64))>,
}

pub const TABLE_METRICS: [(&str, fn(&RunRecord) -> f64); 5] = [
    ("U", |r| r.final_specificity),
    ("L", |r| r.path_length),
    ("delta", |r| r.density_ratio),
    ("sigma", |r| r.human_effort),
    ("phi", |r| r.agreement_ratio),
];

/// Aggregates runs of a single (environment, method) pair.
pub fn aggregate(records: &[RunRecord], cfg: &BootstrapConfig) -> Result<TableRow> {
    let first = records.first().ok_or(Error::Empty("records"))?;
    if records.iter().any(|r| r.env != first.env) {
        return Err(Error::InvalidConfig("cannot aggregate runs from different environments".into()));
    }
    if records.iter().any(|r| r.method != first.method) {
        return Err(Error::InvalidConfig("cannot aggregate runs from different methods".into()));
    }
    let mut columns = Vec::new();
    for (name, f) in TABLE_METRICS {
        let v: Vec<f64> = records.iter().map(f).collect();
        columns.push((name.to_string(), Stat::of(&v), bootstrap_mean_ci(&v, cfg)?));
    }
    Ok(TableRow {
        env: first.env,
        method: first.method,
        columns,
    })
}

/// Writes `table.csv` (mean, std and bootstrap interval of U, L, δ, σ, φ per
/// environment and method), `ordering.csv` (paired specificity orderings per
/// environment) and `heatmaps.csv` (the reward grid dumps of every run).
pub fn make_report(records: &[RunRecord], out: &Path, cfg: &BootstrapConfig) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return Err(Error::Empty("records"));
    }
    std::fs::create_dir_all(out)?;
    let mut groups: BTreeMap<(EnvKind, Method), Vec<RunRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.env, r.method)).or_default().push(r.clone());
    }

    let table = out.join("table.csv");
    let mut w = csv::Writer::from_path(&table)?;
    let mut header = vec!["env".to_string(), "method".to_string(), "n".to_string()];
    for (name, _) in TABLE_METRICS {
        for suffix in ["mean", "std", "ci_low", "ci_high"] {
            header.push(format!("{name}_{suffix}"));
        }
    }
    w.write_record(&header)?;
    for group in groups.values() {
        let row = aggregate(group, cfg)?;
        let mut line = vec![row.env.to_string(), row.method.to_string(), group.len().to_string()];
        for (_, stat, ci) in &row.columns {
            line.extend([stat.mean, stat.std, ci.0, ci.1].iter().map(|v| v.to_string()));
        }
        w.write_record(&line)?;
    }
    w.flush()?;

    let ordering = out.join("ordering.csv");
    let mut w = csv::Writer::from_path(&ordering)?;
    w.write_record(["env", "lower", "higher", "pairs", "mean_difference", "ci_low", "ci_high", "holds"])?;
    let envs: BTreeSet<EnvKind> = records.iter().map(|r| r.env).collect();
    for env in envs {
        for (lo, hi) in [(Method::Evl, Method::Bayes), (Method::Bayes, Method::Fixed), (Method::Evl, Method::Fixed)] {
            if !groups.contains_key(&(env, lo)) || !groups.contains_key(&(env, hi)) {
                continue;
            }
            let Ok(t) = ordering_test(records, env, lo, hi, |r| r.final_specificity, cfg) else {
                continue;
            };
            w.write_record(&[
                env.to_string(),
                lo.to_string(),
                hi.to_string(),
                t.pairs.to_string(),
                t.mean_difference.to_string(),
                t.ci.0.to_string(),
                t.ci.1.to_string(),
                t.holds.to_string(),
            ])?;
        }
    }
    w.flush()?;

    let heatmaps = out.join("heatmaps.csv");
    let mut w = csv::Writer::from_path(&heatmaps)?;
    w.write_record(["env", "method", "seed", "partner", "iteration", "checksum", "path"])?;
    for r in records {
        let Ok(entries) = std::fs::read_dir(&r.run_dir) else {
            continue;
        };
        let mut paths: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "grid"))
            .collect();
        paths.sort();
        for p in paths {
            let dump = GridDump::parse(std::io::BufReader::new(std::fs::File::open(&p)?))?;
            w.write_record(&[
                r.env.to_string(),
                r.method.to_string(),
                r.seed.to_string(),
                r.partner.to_string(),
                dump.iteration.to_string(),
                dump.checksum(),
                p.to_string_lossy().into_owned(),
            ])?;
        }
    }
    w.flush()?;
    Ok(vec![table, ordering, heatmaps])
}
