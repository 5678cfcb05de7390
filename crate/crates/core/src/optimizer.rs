//! Bayesian optimization over simplex-constrained weights, plus BMPS
//! training on top of it.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::belief::rollout;
use crate::env::{derive_seed, sample_instance, EnvSpec};
use crate::error::{Error, Result};
use crate::features::{shared_cache, FeatureConfig, SharedCache, WeightLevel, WeightVector};
use crate::policy::{goal_setting_score, make_policy, PolicyConfig};

/// Search domain: a probability simplex block followed by an optional
/// interval component.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub simplex: usize,
    pub interval: Option<(f64, f64)>,
}

impl Constraint {
    pub fn for_level(level: WeightLevel, spec: &EnvSpec) -> Self {
        Self { simplex: WeightVector::simplex_len(level), interval: Some(WeightVector::cost_range(level, spec)) }
    }

    pub fn dim(&self) -> usize {
        self.simplex + usize::from(self.interval.is_some())
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        if x.len() != self.dim() {
            return false;
        }
        let s = &x[..self.simplex];
        let simplex_ok =
            self.simplex == 0 || (s.iter().all(|&v| v >= 0.0) && (s.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        let interval_ok = match self.interval {
            Some((lo, hi)) => (lo..=hi).contains(&x[self.simplex]),
            None => true,
        };
        simplex_ok && interval_ok
    }

    /// Maps a point to the unit cube the surrogate works in.
    fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        let mut u = x.to_vec();
        if let Some((lo, hi)) = self.interval {
            let i = self.simplex;
            u[i] = if hi > lo { (x[i] - lo) / (hi - lo) } else { 0.0 };
        }
        u
    }

    /// Nearest feasible point after a perturbation (clip, renormalize).
    fn project(&self, x: &mut [f64]) {
        if self.simplex > 0 {
            let s = &mut x[..self.simplex];
            s.iter_mut().for_each(|v| *v = v.max(0.0));
            let total: f64 = s.iter().sum();
            if total <= 0.0 {
                s.iter_mut().for_each(|v| *v = 1.0 / self.simplex as f64);
            } else {
                s.iter_mut().for_each(|v| *v /= total);
            }
        }
        if let Some((lo, hi)) = self.interval {
            let i = self.simplex;
            x[i] = x[i].clamp(lo, hi);
        }
    }
}

/// Uniform draw from the domain. The simplex block uses normalized
/// exponentials, so it is Dirichlet(1, ..., 1).
pub fn sample_constrained<R: Rng + ?Sized>(rng: &mut R, c: &Constraint) -> Vec<f64> {
    let mut x = Vec::with_capacity(c.dim());
    if c.simplex > 0 {
        let e: Vec<f64> = (0..c.simplex).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
        let total: f64 = e.iter().sum();
        x.extend(e.iter().map(|v| v / total));
    }
    if let Some((lo, hi)) = c.interval {
        x.push(if hi > lo { rng.gen_range(lo..=hi) } else { lo });
    }
    x
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    GpEi,
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizeSpec {
    pub constraint: Constraint,
    pub iterations: usize,
    pub method: Method,
    pub seed: u64,
}

impl OptimizeSpec {
    pub fn new(constraint: Constraint, iterations: usize, seed: u64) -> Self {
        Self { constraint, iterations, method: Method::GpEi, seed }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizeResult {
    pub best_weights: Vec<f64>,
    pub best_objective_estimate: f64,
    pub history: Vec<(Vec<f64>, f64)>,
}

impl OptimizeResult {
    /// History points ordered by estimate, best first.
    pub fn ranked(&self) -> Vec<&(Vec<f64>, f64)> {
        let mut v: Vec<_> = self.history.iter().collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1));
        v
    }
}

const CANDIDATES: usize = 512;
const REFIT_EVERY: usize = 10;
const LENGTHSCALES: [f64; 7] = [0.05, 0.1, 0.2, 0.3, 0.5, 0.8, 1.2];
const NOISES: [f64; 7] = [1e-6, 1e-4, 1e-3, 1e-2, 0.05, 0.2, 0.5];

struct Gp {
    x: Vec<Vec<f64>>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    alpha: DVector<f64>,
    lengthscale: f64,
}

fn kernel(a: &[f64], b: &[f64], l: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    (-d2 / (2.0 * l * l)).exp()
}

impl Gp {
    fn fit(x: &[Vec<f64>], y: &DVector<f64>, lengthscale: f64, noise: f64) -> Option<(Self, f64)> {
        let n = x.len();
        let k = DMatrix::from_fn(n, n, |i, j| kernel(&x[i], &x[j], lengthscale) + if i == j { noise } else { 0.0 });
        let chol = k.cholesky()?;
        let alpha = chol.solve(y);
        let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let lml = -0.5 * y.dot(&alpha) - log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
        Some((Self { x: x.to_vec(), chol, alpha, lengthscale }, lml))
    }

    fn predict(&self, p: &[f64]) -> (f64, f64) {
        let ks = DVector::from_iterator(self.x.len(), self.x.iter().map(|xi| kernel(xi, p, self.lengthscale)));
        let mean = ks.dot(&self.alpha);
        let v = self.chol.l().solve_lower_triangular(&ks).unwrap_or_else(|| DVector::zeros(ks.len()));
        (mean, (1.0 - v.dot(&v)).max(1e-12))
    }
}

fn expected_improvement(gp: &Gp, p: &[f64], best: f64, normal: &Normal) -> f64 {
    let (mu, var) = gp.predict(p);
    let sd = var.sqrt();
    let z = (mu - best - 0.01) / sd;
    (mu - best - 0.01) * normal.cdf(z) + sd * normal.pdf(z)
}

/// Maximizes a noisy objective over the constrained domain. The objective
/// receives the point and the evaluation index.
pub fn optimize(
    spec: &OptimizeSpec,
    mut objective: impl FnMut(&[f64], usize) -> Result<f64>,
) -> Result<OptimizeResult> {
    if spec.iterations == 0 {
        return Err(Error::OutOfRange("iterations must be at least 1".into()));
    }
    let c = spec.constraint;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    // Initial design: the simplex vertices with the interval at its low end,
    // then uniform draws.
    let vertices: Vec<Vec<f64>> = (0..c.simplex)
        .map(|i| {
            let mut x: Vec<f64> = (0..c.simplex).map(|j| if i == j { 1.0 } else { 0.0 }).collect();
            x.extend(c.interval.map(|(lo, _)| lo));
            x
        })
        .collect();
    let n_init = spec.iterations.min(vertices.len() + c.dim() + 2);
    let mut history: Vec<(Vec<f64>, f64)> = Vec::with_capacity(spec.iterations);
    let mut hyper = (0.3, 1e-2);

    for it in 0..spec.iterations {
        let x = if spec.method == Method::Random {
            sample_constrained(&mut rng, &c)
        } else if it < vertices.len().min(n_init) {
            vertices[it].clone()
        } else if it < n_init {
            sample_constrained(&mut rng, &c)
        } else {
            let unit: Vec<Vec<f64>> = history.iter().map(|(x, _)| c.to_unit(x)).collect();
            let raw: Vec<f64> = history.iter().map(|h| h.1).collect();
            let mean = raw.iter().sum::<f64>() / raw.len() as f64;
            let sd = (raw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / raw.len() as f64).sqrt();
            let sd = if sd > 1e-12 { sd } else { 1.0 };
            let y = DVector::from_iterator(raw.len(), raw.iter().map(|v| (v - mean) / sd));
            if (it - n_init) % REFIT_EVERY == 0 {
                let mut best = f64::NEG_INFINITY;
                for &l in &LENGTHSCALES {
                    for &nz in &NOISES {
                        if let Some((_, lml)) = Gp::fit(&unit, &y, l, nz) {
                            if lml > best {
                                best = lml;
                                hyper = (l, nz);
                            }
                        }
                    }
                }
            }
            let gp = Gp::fit(&unit, &y, hyper.0, hyper.1)
                .or_else(|| Gp::fit(&unit, &y, hyper.0, hyper.1 + 1e-3))
                .map(|g| g.0);
            match gp {
                Some(gp) => propose(&gp, &c, &unit, &mut rng, &normal),
                None => sample_constrained(&mut rng, &c),
            }
        };
        let v = objective(&x, it)?;
        if !v.is_finite() {
            return Err(Error::NonFiniteObjective(x));
        }
        history.push((x, v));
    }

    let (best_weights, best_objective_estimate) = history
        .iter()
        .fold(None::<&(Vec<f64>, f64)>, |acc, h| match acc {
            Some(a) if a.1 >= h.1 => Some(a),
            _ => Some(h),
        })
        .cloned()
        .expect("at least one evaluation");
    Ok(OptimizeResult { best_weights, best_objective_estimate, history })
}

/// Maximizes expected improvement by random multistart plus a short local
/// perturbation search from the best starts.
fn propose(gp: &Gp, c: &Constraint, unit: &[Vec<f64>], rng: &mut ChaCha8Rng, normal: &Normal) -> Vec<f64> {
    let incumbent = unit.iter().map(|u| gp.predict(u).0).fold(f64::NEG_INFINITY, f64::max);
    let mut scored: Vec<(f64, Vec<f64>)> = (0..CANDIDATES)
        .map(|_| {
            let x = sample_constrained(rng, c);
            (expected_improvement(gp, &c.to_unit(&x), incumbent, normal), x)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let width = c.interval.map_or(0.0, |(lo, hi)| hi - lo);
    let mut best = scored[0].clone();
    for (mut ei, mut x) in scored.into_iter().take(8) {
        let mut step = 0.1;
        for _ in 0..24 {
            let mut y = x.clone();
            for (i, v) in y.iter_mut().enumerate() {
                let scale = if i < c.simplex { step } else { step * width };
                *v += scale * (rng.gen::<f64>() * 2.0 - 1.0);
            }
            c.project(&mut y);
            let e = expected_improvement(gp, &c.to_unit(&y), incumbent, normal);
            if e > ei {
                ei = e;
                x = y;
            } else {
                step *= 0.8;
            }
        }
        if ei > best.0 {
            best = (ei, x);
        }
    }
    best.1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Flat,
    Hier { switching: bool },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub mode: TrainMode,
    pub iterations: usize,
    pub episodes_per_eval: usize,
    pub seed: u64,
    #[serde(default)]
    pub method: Method,
    #[serde(default)]
    pub features: FeatureConfig,
    /// Number of top history points re-scored on a common instance set
    /// before picking the final weights. Zero keeps the raw argmax.
    #[serde(default)]
    pub rescore_top: usize,
    #[serde(default)]
    pub log: Option<PathBuf>,
}

impl TrainSpec {
    pub fn new(mode: TrainMode, iterations: usize, episodes_per_eval: usize, seed: u64) -> Self {
        Self {
            mode,
            iterations,
            episodes_per_eval,
            seed,
            method: Method::GpEi,
            features: FeatureConfig::default(),
            rescore_top: 5,
            log: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainLogLine {
    pub stage: String,
    pub iteration: usize,
    pub weights: Vec<f64>,
    pub estimate: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub config: PolicyConfig,
    pub seconds: f64,
    pub log: Vec<TrainLogLine>,
    /// Feature evaluations performed during training.
    pub evaluations: u64,
}

fn to_weights(level: WeightLevel, x: &[f64]) -> WeightVector {
    WeightVector { level, weights: x.to_vec() }
}

/// Mean rollout RR of `config` over `episodes` instances drawn from the
/// stream `stream`.
pub fn mean_rr(
    spec: &EnvSpec,
    config: &PolicyConfig,
    episodes: usize,
    stream: u64,
    cache: &SharedCache,
) -> Result<f64> {
    let mut policy = make_policy(config, spec, Some(cache.clone()))?;
    let mut total = 0.0;
    for e in 0..episodes {
        let seed = derive_seed(stream, e as u64);
        policy.reset(seed);
        total += rollout(policy.as_mut(), spec, &sample_instance(spec, seed))?.rr;
    }
    Ok(total / episodes as f64)
}

/// Optimizes BMPS weights for `spec`.
pub fn train_bmps(spec: &EnvSpec, ts: &TrainSpec) -> Result<TrainOutcome> {
    if ts.iterations == 0 || ts.episodes_per_eval == 0 {
        return Err(Error::OutOfRange("iterations and episodes_per_eval must be at least 1".into()));
    }
    if matches!(ts.mode, TrainMode::Hier { .. }) && !spec.is_hierarchical() {
        return Err(Error::InvalidEnv(vec![format!("{} is not hierarchical-compatible", spec.name())]));
    }
    let start = Instant::now();
    let cache = shared_cache();
    let mut log = Vec::new();
    let fc = ts.features;
    let n = ts.episodes_per_eval;
    let with_features = |mut cfg: PolicyConfig| {
        cfg.features = fc;
        cfg
    };

    let config = match ts.mode {
        TrainMode::Flat => {
            let c = Constraint::for_level(WeightLevel::Flat, spec);
            let make = |x: &[f64]| with_features(PolicyConfig::flat(to_weights(WeightLevel::Flat, x)));
            let res = run_stage(ts, "flat", c, 0, &mut log, |x, it| {
                mean_rr(spec, &make(x), n, derive_seed(ts.seed, it as u64), &cache)
            })?;
            let best = rescore(ts, &res, &|x| mean_rr(spec, &make(x), 4 * n, ts.seed ^ 0xF1A7, &cache))?;
            make(&best)
        }
        TrainMode::Hier { switching } => {
            let ch = Constraint::for_level(WeightLevel::High, spec);
            let high_score = |x: &[f64], episodes: usize, stream: u64| -> Result<f64> {
                let w = to_weights(WeightLevel::High, x);
                let mut total = 0.0;
                for e in 0..episodes {
                    let t = sample_instance(spec, derive_seed(stream, e as u64));
                    total += goal_setting_score(&w, spec, &t, fc, &cache)?;
                }
                Ok(total / episodes as f64)
            };
            let res = run_stage(ts, "high", ch, 1, &mut log, |x, it| {
                high_score(x, n, derive_seed(ts.seed ^ 0x4819, it as u64))
            })?;
            let high_x = rescore(ts, &res, &|x| high_score(x, 4 * n, ts.seed ^ 0x4A11))?;
            let high = to_weights(WeightLevel::High, &high_x);

            let cl = Constraint::for_level(WeightLevel::Low, spec);
            let make =
                |x: &[f64]| with_features(PolicyConfig::hier(high.clone(), to_weights(WeightLevel::Low, x), switching));
            let res = run_stage(ts, "low", cl, 2, &mut log, |x, it| {
                mean_rr(spec, &make(x), n, derive_seed(ts.seed ^ 0x10E5, it as u64), &cache)
            })?;
            let best = rescore(ts, &res, &|x| mean_rr(spec, &make(x), 4 * n, ts.seed ^ 0x10A7, &cache))?;
            make(&best)
        }
    };

    let evaluations = cache.lock().unwrap().evaluations;
    if let Some(path) = &ts.log {
        let mut f = std::fs::File::create(path)?;
        for line in &log {
            writeln!(f, "{}", serde_json::to_string(line)?)?;
        }
    }
    Ok(TrainOutcome { config, seconds: start.elapsed().as_secs_f64(), log, evaluations })
}

fn run_stage(
    ts: &TrainSpec,
    stage: &str,
    c: Constraint,
    salt: u64,
    log: &mut Vec<TrainLogLine>,
    objective: impl FnMut(&[f64], usize) -> Result<f64>,
) -> Result<OptimizeResult> {
    let os =
        OptimizeSpec { constraint: c, iterations: ts.iterations, method: ts.method, seed: derive_seed(ts.seed, salt) };
    let res = optimize(&os, objective)?;
    log.extend(res.history.iter().enumerate().map(|(i, (w, v))| TrainLogLine {
        stage: stage.into(),
        iteration: i,
        weights: w.clone(),
        estimate: *v,
    }));
    Ok(res)
}

/// Re-scores the best few history points on one shared, larger instance
/// set and returns the winner.
fn rescore(ts: &TrainSpec, res: &OptimizeResult, score: &dyn Fn(&[f64]) -> Result<f64>) -> Result<Vec<f64>> {
    if ts.rescore_top <= 1 {
        return Ok(res.best_weights.clone());
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for (x, _) in res.ranked().into_iter().take(ts.rescore_top) {
        let v = score(x)?;
        if best.as_ref().map_or(true, |b| v > b.0) {
            best = Some((v, x.clone()));
        }
    }
    Ok(best.expect("non-empty history").1)
}
