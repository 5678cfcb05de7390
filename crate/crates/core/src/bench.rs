//! Benchmark runs: train or tune each policy, evaluate all of them on one
//! common instance sequence, and persist traces and aggregates.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::belief::{rollout, Trace};
use crate::env::{derive_seed, load_env, sample_instance, EnvSpec};
use crate::error::{Error, Result};
use crate::features::{shared_cache, FeatureConfig};
use crate::optimizer::{train_bmps, TrainMode, TrainSpec};
use crate::policy::{make_policy, make_policy_until, PolicyConfig, PolicyKind};
use crate::search::{tune_aspiration, SearchKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchOptions {
    pub episodes: usize,
    pub seed: u64,
    pub train_iterations: usize,
    pub train_episodes: usize,
    pub tune_budget: usize,
    pub tune_episodes: usize,
    pub features: FeatureConfig,
    pub workers: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            episodes: 3000,
            seed: 0,
            train_iterations: 100,
            train_episodes: 100,
            tune_budget: 30,
            tune_episodes: 200,
            features: FeatureConfig::default(),
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

/// A policy ready for evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchEntry {
    pub label: String,
    pub config: PolicyConfig,
    pub train_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub policy: String,
    pub mean_rr: f64,
    pub std_rr: f64,
    pub se_rr: f64,
    pub mean_clicks: f64,
    pub mean_switches: f64,
    pub episodes: usize,
    pub train_seconds: f64,
    pub eval_seconds_per_episode: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchFailure {
    pub policy: String,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub env: String,
    pub env_hash: String,
    pub seed: u64,
    pub episodes: usize,
    pub rows: Vec<BenchRow>,
    pub configs: Vec<BenchEntry>,
    pub failures: Vec<BenchFailure>,
    pub machine: String,
}

impl BenchReport {
    pub fn row(&self, policy: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.policy == policy)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub policy: String,
    pub episode: usize,
    pub seed: u64,
    pub trace: Trace,
}

#[derive(Clone, Debug)]
pub struct BenchRun {
    pub report: BenchReport,
    pub traces: Vec<TraceRecord>,
}

pub fn machine_descriptor() -> String {
    format!(
        "{}-{} {} threads",
        std::env::consts::OS,
        std::env::consts::ARCH,
        std::thread::available_parallelism().map_or(1, |n| n.get())
    )
}

/// Seed of episode `index` in a run seeded with `seed`; shared by every
/// policy so they face the same instances.
pub fn episode_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, index as u64)
}

/// Names accepted in a policy list: BMPS variants are trained, search
/// baselines tuned; a path loads a saved `PolicyConfig`.
pub const POLICY_NAMES: [&str; 10] = [
    "flat_bmps",
    "hier_bmps",
    "hier_bmps_switching",
    "greedy_flat",
    "greedy_hier",
    "random",
    "dfs",
    "bfs",
    "backward",
    "bidirectional",
];

/// Turns a policy name into an evaluable entry, training it if needed.
pub fn resolve_policy(name: &str, spec: &EnvSpec, opts: &BenchOptions) -> Result<BenchEntry> {
    let start = Instant::now();
    let train = |mode| {
        let mut ts = TrainSpec::new(mode, opts.train_iterations, opts.train_episodes, opts.seed ^ 0x7EA1);
        ts.features = opts.features;
        train_bmps(spec, &ts).map(|o| o.config)
    };
    let search = |kind| {
        tune_aspiration(kind, spec, opts.tune_budget, opts.tune_episodes, opts.seed ^ 0x7E5E)
            .map(|c| PolicyConfig::new(PolicyKind::Search(c)))
    };
    let config = match name {
        "flat_bmps" => train(TrainMode::Flat)?,
        "hier_bmps" => train(TrainMode::Hier { switching: false })?,
        "hier_bmps_switching" => train(TrainMode::Hier { switching: true })?,
        "greedy_flat" => PolicyConfig::new(PolicyKind::GreedyMyopic { hierarchical: false }),
        "greedy_hier" => PolicyConfig::new(PolicyKind::GreedyMyopic { hierarchical: true }),
        "random" => PolicyConfig::new(PolicyKind::Random { seed: opts.seed }),
        "dfs" => search(SearchKind::Dfs)?,
        "bfs" => search(SearchKind::Bfs)?,
        "backward" => search(SearchKind::Backward)?,
        "bidirectional" => search(SearchKind::Bidirectional)?,
        path if Path::new(path).is_file() => {
            let config: PolicyConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
            config.validate(spec)?;
            return Ok(BenchEntry { label: config.label(), config, train_seconds: 0.0 });
        }
        other => return Err(Error::UnknownPolicy(other.to_string())),
    };
    let config = PolicyConfig { features: opts.features, ..config };
    config.validate(spec)?;
    let label = name.to_string();
    Ok(BenchEntry { label, config, train_seconds: start.elapsed().as_secs_f64() })
}

/// Mean, sample standard deviation and standard error.
pub fn mean_std(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt(), (var / n).sqrt())
}

/// Aggregate row from traces; timing fields are left for the caller.
pub fn aggregate(policy: &str, traces: &[&Trace]) -> BenchRow {
    let rr: Vec<f64> = traces.iter().map(|t| t.rr).collect();
    let (mean_rr, std_rr, se_rr) = mean_std(&rr);
    let n = traces.len().max(1) as f64;
    BenchRow {
        policy: policy.to_string(),
        mean_rr,
        std_rr,
        se_rr,
        mean_clicks: traces.iter().map(|t| t.clicks as f64).sum::<f64>() / n,
        mean_switches: traces.iter().map(|t| t.switches as f64).sum::<f64>() / n,
        episodes: traces.len(),
        train_seconds: 0.0,
        eval_seconds_per_episode: 0.0,
    }
}

/// Runs `config` on episodes `0..episodes` of the run seeded with `seed`.
/// Episodes are split over `workers` threads; the result does not depend
/// on the worker count.
pub fn evaluate(
    config: &PolicyConfig,
    spec: &EnvSpec,
    episodes: usize,
    seed: u64,
    workers: usize,
) -> Result<(Vec<Trace>, f64)> {
    let workers = workers.clamp(1, episodes.max(1));
    let chunk = episodes.div_ceil(workers);
    let results: Vec<Result<(Vec<Trace>, f64)>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                s.spawn(move || -> Result<(Vec<Trace>, f64)> {
                    let mut policy = make_policy(config, spec, Some(shared_cache()))?;
                    let mut out = Vec::new();
                    let mut secs = 0.0;
                    for i in (w * chunk)..((w + 1) * chunk).min(episodes) {
                        let s = episode_seed(seed, i);
                        let truth = sample_instance(spec, s);
                        let t0 = Instant::now();
                        policy.reset(s);
                        out.push(rollout(policy.as_mut(), spec, &truth)?);
                        secs += t0.elapsed().as_secs_f64();
                    }
                    Ok((out, secs))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut traces = Vec::with_capacity(episodes);
    let mut secs = 0.0;
    for r in results {
        let (t, s) = r?;
        traces.extend(t);
        secs += s;
    }
    Ok((traces, secs))
}

/// Evaluates prepared entries on a common instance sequence.
pub fn run_entries(spec: &EnvSpec, entries: Vec<BenchEntry>, opts: &BenchOptions) -> BenchRun {
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut traces = Vec::new();
    let mut configs = Vec::new();
    for e in entries {
        match evaluate(&e.config, spec, opts.episodes, opts.seed, opts.workers) {
            Ok((ts, secs)) => {
                let mut row = aggregate(&e.label, &ts.iter().collect::<Vec<_>>());
                row.train_seconds = e.train_seconds;
                row.eval_seconds_per_episode = secs / opts.episodes.max(1) as f64;
                rows.push(row);
                traces.extend(ts.into_iter().enumerate().map(|(i, trace)| TraceRecord {
                    policy: e.label.clone(),
                    episode: i,
                    seed: episode_seed(opts.seed, i),
                    trace,
                }));
                configs.push(e);
            }
            Err(err) => failures.push(BenchFailure { policy: e.label.clone(), error: err.to_string() }),
        }
    }
    BenchRun {
        report: BenchReport {
            env: spec.name().to_string(),
            env_hash: spec.env_hash(),
            seed: opts.seed,
            episodes: opts.episodes,
            rows,
            configs,
            failures,
            machine: machine_descriptor(),
        },
        traces,
    }
}

/// Trains what needs training, then evaluates every policy. A policy that
/// fails to train or run is reported and skipped.
pub fn run_benchmark(env_selector: &str, policies: &[String], opts: &BenchOptions) -> Result<BenchRun> {
    let spec = load_env(env_selector)?;
    let mut entries = Vec::new();
    let mut failures = Vec::new();
    for name in policies {
        match resolve_policy(name, &spec, opts) {
            Ok(e) => entries.push(e),
            Err(err) => failures.push(BenchFailure { policy: name.clone(), error: err.to_string() }),
        }
    }
    let mut run = run_entries(&spec, entries, opts);
    failures.append(&mut run.report.failures);
    run.report.failures = failures;
    Ok(run)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

pub const CSV_HEADER: &str = "policy,mean_rr,std_rr,se_rr,mean_clicks,mean_switches,episodes,human";
pub const TIMING_HEADER: &str = "policy,train_seconds,eval_seconds_per_episode,machine";

/// Display table: two decimals, no timing, so reruns are byte-identical.
pub fn report_csv(report: &BenchReport) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in &report.rows {
        s.push_str(&format!(
            "{},{:.2},{:.2},{:.2},{:.2},{:.2},{},\n",
            r.policy, r.mean_rr, r.std_rr, r.se_rr, r.mean_clicks, r.mean_switches, r.episodes
        ));
    }
    s
}

pub fn timing_csv(report: &BenchReport) -> String {
    let mut s = String::from(TIMING_HEADER);
    s.push('\n');
    for r in &report.rows {
        s.push_str(&format!(
            "{},{:.3},{:.6},{}\n",
            r.policy, r.train_seconds, r.eval_seconds_per_episode, report.machine
        ));
    }
    s
}

pub fn write_report(report: &BenchReport, format: ReportFormat, path: &Path) -> Result<()> {
    let text = match format {
        ReportFormat::Csv => report_csv(report),
        ReportFormat::Json => serde_json::to_string_pretty(report)? + "\n",
    };
    std::fs::write(path, text)?;
    Ok(())
}

pub fn write_traces(traces: &[TraceRecord], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for t in traces {
        writeln!(f, "{}", serde_json::to_string(t)?)?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_traces(path: &Path) -> Result<Vec<TraceRecord>> {
    std::fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Writes `report.csv`, `timing.csv`, `report.json` and `traces.jsonl`.
pub fn write_run(run: &BenchRun, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let paths = ["report.csv", "timing.csv", "report.json", "traces.jsonl"].map(|f| dir.join(f));
    write_report(&run.report, ReportFormat::Csv, &paths[0])?;
    std::fs::write(&paths[1], timing_csv(&run.report))?;
    write_report(&run.report, ReportFormat::Json, &paths[2])?;
    write_traces(&run.traces, &paths[3])?;
    Ok(paths.to_vec())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingResult {
    pub policy: String,
    pub seconds_per_episode: f64,
    pub episodes: usize,
    /// False when the budget ran out; `seconds_per_episode` is then a lower
    /// bound on the time of one episode.
    pub complete: bool,
    pub machine: String,
}

/// Mean wall-clock time per episode after one warm-up episode. Every
/// episode starts with an empty feature cache. With a `budget`, stops at
/// the first episode that overruns it.
pub fn time_evaluation(
    config: &PolicyConfig,
    spec: &EnvSpec,
    episodes: usize,
    seed: u64,
    budget: Option<Duration>,
) -> Result<TimingResult> {
    let run = |i: usize, deadline: Option<Instant>| -> Result<f64> {
        let mut p = make_policy_until(config, spec, Some(shared_cache()), deadline)?;
        let s = episode_seed(seed, i);
        let truth = sample_instance(spec, s);
        let t0 = Instant::now();
        p.reset(s);
        rollout(p.as_mut(), spec, &truth)?;
        Ok(t0.elapsed().as_secs_f64())
    };
    let mut total = 0.0;
    let mut done = 0;
    let mut complete = true;
    for i in 0..=episodes {
        let t0 = Instant::now();
        match run(i, budget.map(|b| Instant::now() + b)) {
            Ok(secs) if i > 0 => {
                total += secs;
                done += 1;
            }
            Ok(_) => {}
            Err(Error::BudgetExceeded) => {
                complete = false;
                total = t0.elapsed().as_secs_f64();
                done = 1;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(TimingResult {
        policy: config.label(),
        seconds_per_episode: total / done.max(1) as f64,
        episodes: done,
        complete,
        machine: machine_descriptor(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub env: String,
    pub goals: usize,
    pub policy: String,
    /// Feature values computed per selection, averaged over episodes.
    pub evaluations_per_selection: f64,
}

/// Counts feature computations per computation selection, with a fresh
/// cache each episode so counts are not hidden by reuse.
pub fn feature_evaluation_counts(config: &PolicyConfig, spec: &EnvSpec, episodes: usize, seed: u64) -> Result<f64> {
    let mut evals = 0u64;
    let mut selections = 0usize;
    for i in 0..episodes {
        let cache = shared_cache();
        let mut p = make_policy(config, spec, Some(cache.clone()))?;
        let s = episode_seed(seed, i);
        p.reset(s);
        let trace = rollout(p.as_mut(), spec, &sample_instance(spec, s))?;
        evals += cache.lock().unwrap().evaluations;
        selections += trace.computations.iter().filter(|c| c.kind != "switch").count();
    }
    Ok(evals as f64 / selections.max(1) as f64)
}

/// Feature-evaluation counts of flat and hierarchical BMPS on the
/// increasing-variance family for each number of goals in `goals`.
pub fn scalability_sweep(
    goals: &[usize],
    flat: &PolicyConfig,
    hier: &PolicyConfig,
    episodes: usize,
    seed: u64,
) -> Result<Vec<ScalingPoint>> {
    let mut out = Vec::new();
    for &m in goals {
        let spec = crate::env::gen_increasing_variance(m)?;
        for cfg in [flat, hier] {
            out.push(ScalingPoint {
                env: spec.name().to_string(),
                goals: m,
                policy: cfg.label(),
                evaluations_per_selection: feature_evaluation_counts(cfg, &spec, episodes, seed)?,
            });
        }
    }
    Ok(out)
}
