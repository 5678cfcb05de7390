//! Value-of-computation features and the approximate VOC they feed.
//!
//! At the route levels (flat, and low with a committed goal) the features
//! are the myopic value of information of one inspection, the value of
//! perfect information about every remaining node, and the same restricted
//! to the nodes on paths through the inspected node. The goal-setting level
//! uses the first two over goal values only.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::belief::{high_dist, high_value, termination_value, BeliefState, Computation, Level};
use crate::contraction::{max_path_dist, path_enumeration_dist};
use crate::dist::Dist;
use crate::env::{EnvSpec, NodeId, Scope};
use crate::error::{Error, Result};

/// How best-path distributions are computed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Contraction,
    PathEnumeration,
}

/// Cost feature used by the flat VOC.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlatCostMode {
    /// One click fee per inspection.
    #[default]
    Plain,
    /// Feature-weighted count of unobserved relevant nodes.
    Weighted,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub voi1: f64,
    pub vpi: f64,
    /// Absent at the goal-setting level.
    pub vpi_sub: Option<f64>,
    pub cost: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightLevel {
    Flat,
    High,
    Low,
}

/// BMPS weights. Flat and low weights are `[w1, w2, w3, w4]` with the first
/// three on the simplex; high weights are `[w1, w2, w3]` with the first two
/// on the simplex. The last component scales the cost.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub level: WeightLevel,
    pub weights: Vec<f64>,
}

impl WeightVector {
    pub fn flat(w: [f64; 4]) -> Self {
        Self { level: WeightLevel::Flat, weights: w.to_vec() }
    }

    pub fn high(w: [f64; 3]) -> Self {
        Self { level: WeightLevel::High, weights: w.to_vec() }
    }

    pub fn low(w: [f64; 4]) -> Self {
        Self { level: WeightLevel::Low, weights: w.to_vec() }
    }

    /// Size of the simplex block.
    pub fn simplex_len(level: WeightLevel) -> usize {
        match level {
            WeightLevel::High => 2,
            _ => 3,
        }
    }

    /// Closed range of the cost weight for this level on `spec`.
    pub fn cost_range(level: WeightLevel, spec: &EnvSpec) -> (f64, f64) {
        let hi = match level {
            WeightLevel::Flat => (spec.node_count() - 1) as f64,
            WeightLevel::High => spec.goals().len() as f64,
            WeightLevel::Low => spec.goal_sets().iter().map(|g| g.members.len()).max().unwrap_or(1) as f64,
        };
        (1.0, hi.max(1.0))
    }

    pub fn validate(&self, spec: &EnvSpec) -> Result<()> {
        let k = Self::simplex_len(self.level);
        if self.weights.len() != k + 1 {
            return Err(Error::InvalidWeights(format!(
                "{:?} weights need {} components, got {}",
                self.level,
                k + 1,
                self.weights.len()
            )));
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidWeights("weights must be finite".into()));
        }
        let simplex = &self.weights[..k];
        if simplex.iter().any(|&w| w < -1e-12) || (simplex.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidWeights(format!("{simplex:?} is not on the simplex")));
        }
        let (lo, hi) = Self::cost_range(self.level, spec);
        let c = self.weights[k];
        if c < lo - 1e-9 || c > hi + 1e-9 {
            return Err(Error::InvalidWeights(format!("cost weight {c} outside [{lo}, {hi}]")));
        }
        Ok(())
    }

    fn w(&self, i: usize) -> f64 {
        self.weights[i]
    }
}

/// Which scope and floor a route-level feature uses.
#[derive(Clone, Copy)]
struct Route<'a> {
    scope: &'a Scope,
    floor: f64,
}

fn route<'a>(spec: &'a EnvSpec, level: Level, floor: Option<f64>) -> Route<'a> {
    let scope = match level {
        Level::Flat => spec.flat_scope(),
        Level::Low(g) => spec.goal_scope(spec.goal_index(g).expect("goal")),
        Level::High => unreachable!("goal setting has no route scope"),
    };
    Route { scope, floor: floor.unwrap_or(f64::NEG_INFINITY) }
}

/// Value of stopping now at a route level, with an optional outside
/// option `floor` (the best alternative goal when switching is possible).
pub fn route_value(b: &BeliefState, spec: &EnvSpec, level: Level, floor: Option<f64>) -> f64 {
    termination_value(b, spec, level).max(floor.unwrap_or(f64::NEG_INFINITY))
}

/// Myopic value of information of inspecting `c`.
pub fn voi1(b: &BeliefState, spec: &EnvSpec, c: Computation, level: Level, floor: Option<f64>) -> f64 {
    let Some(node) = c.node() else { return 0.0 };
    if b.is_observed(node) {
        return 0.0;
    }
    if level == Level::High {
        let gi = spec.goal_index(node).expect("goal");
        let others = (0..spec.goals().len())
            .filter(|&g| g != gi)
            .map(|g| high_value(b, spec, g))
            .fold(f64::NEG_INFINITY, f64::max);
        let d = high_dist(b, spec, gi);
        return (d.expected_max_with(others) - d.mean().max(others)).max(0.0);
    }
    let r = route(spec, level, floor);
    let Some(l) = r.scope.local(node) else { return 0.0 };
    let means = b.scope_means(spec, r.scope);
    let (through, avoid) = through_and_avoid(r.scope, &means, l);
    let alt = avoid.max(r.floor);
    let d = b.dist(spec, node);
    let now = (through + d.mean()).max(alt);
    let after: f64 = d.iter().map(|(v, p)| p * (through + v).max(alt)).sum();
    (after - now).max(0.0)
}

/// Best path value through `l` excluding `l`'s own reward, and best path
/// value avoiding `l`.
fn through_and_avoid(scope: &Scope, means: &[f64], l: usize) -> (f64, f64) {
    let k = scope.len();
    let mut fwd = vec![f64::NEG_INFINITY; k];
    let mut avoid = vec![f64::NEG_INFINITY; k];
    fwd[0] = means[0];
    avoid[0] = means[0];
    for i in 1..k {
        let ps = scope.parents(i);
        fwd[i] = ps.iter().map(|&p| fwd[p]).fold(f64::NEG_INFINITY, f64::max) + means[i];
        avoid[i] = if i == l {
            f64::NEG_INFINITY
        } else {
            ps.iter().map(|&p| avoid[p]).fold(f64::NEG_INFINITY, f64::max) + means[i]
        };
    }
    let mut bwd = vec![f64::NEG_INFINITY; k];
    for i in (0..k).rev() {
        let cs = scope.children(i);
        let rest = if cs.is_empty() { 0.0 } else { cs.iter().map(|&c| bwd[c]).fold(f64::NEG_INFINITY, f64::max) };
        bwd[i] = rest + means[i];
    }
    let avoid_best = scope.sinks().iter().map(|&s| avoid[s]).fold(f64::NEG_INFINITY, f64::max);
    (fwd[l] + bwd[l] - 2.0 * means[l], avoid_best)
}

fn best_path_dist(scope: &Scope, dists: &[Dist], backend: Backend, deadline: Option<Instant>) -> Result<Dist> {
    match backend {
        Backend::Contraction => max_path_dist(scope, dists),
        Backend::PathEnumeration => path_enumeration_dist(scope, dists, deadline),
    }
}

/// Value of perfect information about every remaining node at `level`.
pub fn vpi(b: &BeliefState, spec: &EnvSpec, level: Level, floor: Option<f64>, backend: Backend) -> Result<f64> {
    vpi_until(b, spec, level, floor, backend, None)
}

pub fn vpi_until(
    b: &BeliefState,
    spec: &EnvSpec,
    level: Level,
    floor: Option<f64>,
    backend: Backend,
    deadline: Option<Instant>,
) -> Result<f64> {
    if level == Level::High {
        let mut acc: Option<Dist> = None;
        for gi in 0..spec.goals().len() {
            let d = high_dist(b, spec, gi);
            acc = Some(match acc {
                None => d,
                Some(a) => a.max(&d)?,
            });
        }
        let d = acc.expect("at least one goal");
        return Ok((d.mean() - termination_value(b, spec, Level::High)).max(0.0));
    }
    let r = route(spec, level, floor);
    let dists = b.scope_dists(spec, r.scope);
    let d = best_path_dist(r.scope, &dists, backend, deadline)?;
    Ok((d.expected_max_with(r.floor) - route_value(b, spec, level, floor)).max(0.0))
}

/// Nodes (global ids) whose revelation `vpi_sub` considers for `c`.
pub fn relevant_nodes(spec: &EnvSpec, c: Computation, level: Level) -> Vec<NodeId> {
    let Some(node) = c.node() else { return Vec::new() };
    let r = route(spec, level, None);
    match r.scope.local(node) {
        Some(l) => r.scope.relevant(l).iter().map(|&x| r.scope.global(x)).filter(|&v| v != spec.root()).collect(),
        None => Vec::new(),
    }
}

/// Value of perfect information about the nodes on paths through `c`.
pub fn vpi_sub(
    b: &BeliefState,
    spec: &EnvSpec,
    c: Computation,
    level: Level,
    floor: Option<f64>,
    backend: Backend,
) -> Result<f64> {
    vpi_sub_until(b, spec, c, level, floor, backend, None)
}

pub fn vpi_sub_until(
    b: &BeliefState,
    spec: &EnvSpec,
    c: Computation,
    level: Level,
    floor: Option<f64>,
    backend: Backend,
    deadline: Option<Instant>,
) -> Result<f64> {
    let Some(node) = c.node() else { return Ok(0.0) };
    if level == Level::High {
        return Err(Error::IllegalComputation("vpi_sub is not defined for goal setting".into()));
    }
    let r = route(spec, level, floor);
    let Some(l) = r.scope.local(node) else { return Ok(0.0) };
    let mut in_s = vec![false; r.scope.len()];
    for &x in r.scope.relevant(l) {
        in_s[x] = true;
    }
    let dists: Vec<Dist> = r
        .scope
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, &v)| if in_s[i] { b.dist(spec, v).into_owned() } else { Dist::point(b.mean(spec, v)) })
        .collect();
    let d = best_path_dist(r.scope, &dists, backend, deadline)?;
    Ok((d.expected_max_with(r.floor) - route_value(b, spec, level, floor)).max(0.0))
}

/// Number of unobserved nodes each feature would reveal for `c`:
/// `[voi1, vpi, vpi_sub]`.
pub fn relevant_unobserved(b: &BeliefState, spec: &EnvSpec, c: Computation, level: Level) -> [usize; 3] {
    let Some(node) = c.node() else { return [0; 3] };
    let r = route(spec, level, None);
    let unobserved = |v: &NodeId| *v != spec.root() && !b.is_observed(*v);
    let all = r.scope.nodes().iter().filter(|v| unobserved(v)).count();
    let sub = relevant_nodes(spec, c, level).iter().filter(|v| unobserved(v)).count();
    [usize::from(!b.is_observed(node)), all, sub]
}

/// Weighted cost of a goal-achievement inspection.
pub fn cost_low(b: &BeliefState, spec: &EnvSpec, c: Computation, goal: NodeId, w: &WeightVector) -> f64 {
    let counts = relevant_unobserved(b, spec, c, Level::Low(goal));
    spec.click_cost() * (0..3).map(|i| w.w(i) * counts[i] as f64).sum::<f64>()
}

/// Feature settings shared by a policy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub backend: Backend,
    pub flat_cost_mode: FlatCostMode,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { backend: Backend::Contraction, flat_cost_mode: FlatCostMode::Plain }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
struct Key {
    belief: u64,
    level: LevelKey,
    floor: u64,
    node: Option<NodeId>,
    feature: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum LevelKey {
    Flat,
    High,
    Low(NodeId),
}

impl From<Level> for LevelKey {
    fn from(l: Level) -> Self {
        match l {
            Level::Flat => LevelKey::Flat,
            Level::High => LevelKey::High,
            Level::Low(g) => LevelKey::Low(g),
        }
    }
}

/// Memo of feature values keyed by observation pattern, shared across
/// episodes and weight settings. Entries never go stale: a key fixes every
/// observed value.
#[derive(Debug, Default)]
pub struct FeatureCache {
    map: HashMap<Key, f64>,
    backend: Option<Backend>,
    /// Feature values computed (cache misses) since creation.
    pub evaluations: u64,
    pub hits: u64,
}

const CACHE_LIMIT: usize = 2_000_000;

pub type SharedCache = Arc<Mutex<FeatureCache>>;

pub fn shared_cache() -> SharedCache {
    Arc::new(Mutex::new(FeatureCache::default()))
}

impl FeatureCache {
    fn get_or(&mut self, key: Key, backend: Backend, f: impl FnOnce() -> Result<f64>) -> Result<f64> {
        if self.backend != Some(backend) {
            self.map.clear();
            self.backend = Some(backend);
        }
        if let Some(&v) = self.map.get(&key) {
            self.hits += 1;
            return Ok(v);
        }
        let v = f()?;
        self.evaluations += 1;
        if self.map.len() >= CACHE_LIMIT {
            self.map.clear();
        }
        self.map.insert(key, v);
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Feature evaluation for one belief, backed by a cache.
pub struct Evaluator<'a> {
    pub spec: &'a EnvSpec,
    pub b: &'a BeliefState,
    pub level: Level,
    pub floor: Option<f64>,
    pub config: FeatureConfig,
    pub cache: &'a mut FeatureCache,
    pub deadline: Option<Instant>,
    belief: u64,
}

impl<'a> Evaluator<'a> {
    pub fn new(
        spec: &'a EnvSpec,
        b: &'a BeliefState,
        level: Level,
        floor: Option<f64>,
        config: FeatureConfig,
        cache: &'a mut FeatureCache,
    ) -> Self {
        Self { spec, b, level, floor, config, cache, deadline: None, belief: b.key() }
    }

    fn key(&self, node: Option<NodeId>, feature: u8) -> Key {
        Key {
            belief: self.belief,
            level: self.level.into(),
            floor: self.floor.map_or(u64::MAX, f64::to_bits),
            node,
            feature,
        }
    }

    pub fn voi1(&mut self, c: Computation) -> Result<f64> {
        let key = self.key(c.node(), 0);
        let (b, spec, level, floor) = (self.b, self.spec, self.level, self.floor);
        self.cache.get_or(key, self.config.backend, || Ok(voi1(b, spec, c, level, floor)))
    }

    pub fn vpi(&mut self) -> Result<f64> {
        let key = self.key(None, 1);
        let (b, spec, level, floor, backend, dl) =
            (self.b, self.spec, self.level, self.floor, self.config.backend, self.deadline);
        self.cache.get_or(key, backend, || vpi_until(b, spec, level, floor, backend, dl))
    }

    pub fn vpi_sub(&mut self, c: Computation) -> Result<f64> {
        let key = self.key(c.node(), 2);
        let (b, spec, level, floor, backend, dl) =
            (self.b, self.spec, self.level, self.floor, self.config.backend, self.deadline);
        self.cache.get_or(key, backend, || vpi_sub_until(b, spec, c, level, floor, backend, dl))
    }

    /// Full feature vector of `c` under weights `w` (the weights only enter
    /// the weighted cost features).
    pub fn features(&mut self, c: Computation, w: &WeightVector) -> Result<FeatureVector> {
        if c.is_termination() {
            let sub = (self.level != Level::High).then_some(0.0);
            return Ok(FeatureVector { voi1: 0.0, vpi: 0.0, vpi_sub: sub, cost: 0.0 });
        }
        let voi1 = self.voi1(c)?;
        let vpi = self.vpi()?;
        let vpi_sub = if self.level == Level::High { None } else { Some(self.vpi_sub(c)?) };
        Ok(FeatureVector { voi1, vpi, vpi_sub, cost: self.cost(c, w) })
    }

    pub fn cost(&self, c: Computation, w: &WeightVector) -> f64 {
        if c.is_termination() {
            return 0.0;
        }
        match (self.level, self.config.flat_cost_mode) {
            (Level::Low(g), _) => cost_low(self.b, self.spec, c, g, w),
            (Level::Flat, FlatCostMode::Weighted) => {
                let counts = relevant_unobserved(self.b, self.spec, c, Level::Flat);
                self.spec.click_cost() * (0..3).map(|i| w.w(i) * counts[i] as f64).sum::<f64>()
            }
            _ => self.spec.click_cost(),
        }
    }
}

/// Approximate VOC from a feature vector.
pub fn combine(f: &FeatureVector, w: &WeightVector) -> f64 {
    match w.level {
        WeightLevel::High => w.w(0) * f.voi1 + w.w(1) * f.vpi - w.w(2) * f.cost,
        _ => w.w(0) * f.voi1 + w.w(1) * f.vpi + w.w(2) * f.vpi_sub.unwrap_or(0.0) - w.w(3) * f.cost,
    }
}

/// Approximate VOC of `c`; terminations are worth 0.
pub fn voc_hat(ev: &mut Evaluator<'_>, c: Computation, w: &WeightVector) -> Result<f64> {
    if c.is_termination() {
        return Ok(0.0);
    }
    Ok(combine(&ev.features(c, w)?, w))
}

/// Approximate VOCs at or below this count as non-positive, so rounding
/// noise in exact-zero features never triggers an inspection.
pub const VOC_EPS: f64 = 1e-9;

/// Best inspection under `w` among `candidates`, or `None` when no
/// inspection has positive approximate VOC. Ties go to the lowest node id.
///
/// `vpi_sub` lies between `voi1` and `vpi`, which bounds every candidate's
/// score before its `vpi_sub` is computed; dominated candidates are skipped.
pub fn argmax_voc(ev: &mut Evaluator<'_>, candidates: &[Computation], w: &WeightVector) -> Result<Option<Computation>> {
    let high = w.level == WeightLevel::High;
    let needs_vpi = w.w(1) > 0.0 || (!high && w.w(2) > 0.0);
    let vpi = if needs_vpi { ev.vpi()? } else { 0.0 };
    let mut scored: Vec<(f64, f64, Computation)> = Vec::with_capacity(candidates.len());
    for &c in candidates {
        if c.is_termination() {
            continue;
        }
        let voi1 = ev.voi1(c)?;
        let cost = ev.cost(c, w);
        let (lo, hi) = if high {
            let v = w.w(0) * voi1 + w.w(1) * vpi - w.w(2) * cost;
            (v, v)
        } else {
            let base = w.w(0) * voi1 + w.w(1) * vpi - w.w(3) * cost;
            (base + w.w(2) * voi1, base + w.w(2) * vpi.max(voi1))
        };
        scored.push((lo, hi, c));
    }
    // Highest upper bound first; lowest id first among equal bounds.
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.2.node().cmp(&b.2.node())));
    let mut best: Option<(f64, Computation)> = None;
    for (lo, hi, c) in scored {
        let floor = best.map_or(0.0, |(v, _)| v);
        if hi < floor - 1e-9 || (best.is_none() && hi <= VOC_EPS) {
            break;
        }
        let v = if high || w.w(2) == 0.0 || (hi - lo).abs() < 1e-15 {
            lo
        } else {
            lo - w.w(2) * ev.voi1(c)? + w.w(2) * ev.vpi_sub(c)?
        };
        let better = match best {
            None => v > VOC_EPS,
            Some((bv, bc)) => v > bv + 1e-12 || ((v - bv).abs() <= 1e-12 && c.node() < bc.node()),
        };
        if better {
            best = Some((v, c));
        }
    }
    Ok(best.map(|(_, c)| c))
}
