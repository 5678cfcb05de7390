//! Uninformed traversal baselines that stop once some path's expected
//! return reaches an aspiration level.

use serde::{Deserialize, Serialize};

use crate::belief::{termination_value, BeliefState, Computation, Decision, Level, Phase, Policy};
use crate::env::{derive_seed, EnvSpec, NodeId};
use crate::error::Result;
use crate::features::shared_cache;
use crate::optimizer::{mean_rr, optimize, Constraint, OptimizeSpec};
use crate::policy::{PolicyConfig, PolicyKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchKind {
    Dfs,
    Bfs,
    Backward,
    Bidirectional,
}

impl SearchKind {
    pub const ALL: [SearchKind; 4] =
        [SearchKind::Dfs, SearchKind::Bfs, SearchKind::Backward, SearchKind::Bidirectional];

    pub fn label(self) -> &'static str {
        match self {
            SearchKind::Dfs => "dfs",
            SearchKind::Bfs => "bfs",
            SearchKind::Backward => "backward",
            SearchKind::Bidirectional => "bidirectional",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub kind: SearchKind,
    pub aspiration: f64,
}

impl SearchConfig {
    pub fn new(kind: SearchKind, aspiration: f64) -> Self {
        Self { kind, aspiration }
    }
}

fn forward_bfs(spec: &EnvSpec) -> Vec<NodeId> {
    let mut seen = vec![false; spec.node_count()];
    seen[spec.root()] = true;
    let mut out = Vec::new();
    let mut queue = std::collections::VecDeque::from([spec.root()]);
    while let Some(v) = queue.pop_front() {
        for &c in spec.children(v) {
            if !seen[c] {
                seen[c] = true;
                out.push(c);
                queue.push_back(c);
            }
        }
    }
    out
}

fn forward_dfs(spec: &EnvSpec) -> Vec<NodeId> {
    fn visit(spec: &EnvSpec, v: NodeId, seen: &mut [bool], out: &mut Vec<NodeId>) {
        for &c in spec.children(v) {
            if !seen[c] {
                seen[c] = true;
                out.push(c);
                visit(spec, c, seen, out);
            }
        }
    }
    let mut seen = vec![false; spec.node_count()];
    let mut out = Vec::new();
    visit(spec, spec.root(), &mut seen, &mut out);
    out
}

fn backward(spec: &EnvSpec) -> Vec<NodeId> {
    let mut seen = vec![false; spec.node_count()];
    seen[spec.root()] = true;
    let mut layer: Vec<NodeId> = spec.goals().to_vec();
    layer.sort_unstable();
    layer.iter().for_each(|&g| seen[g] = true);
    let mut out = Vec::new();
    while !layer.is_empty() {
        out.extend(&layer);
        let mut next: Vec<NodeId> =
            layer.iter().flat_map(|&v| spec.parents(v).iter().copied()).filter(|&p| !seen[p]).collect();
        next.sort_unstable();
        next.dedup();
        next.iter().for_each(|&p| seen[p] = true);
        layer = next;
    }
    out
}

/// Inspection order of `kind` on `spec`, root excluded.
pub fn traversal_order(kind: SearchKind, spec: &EnvSpec) -> Vec<NodeId> {
    match kind {
        SearchKind::Dfs => forward_dfs(spec),
        SearchKind::Bfs => forward_bfs(spec),
        SearchKind::Backward => backward(spec),
        SearchKind::Bidirectional => {
            let (fwd, bwd) = (forward_bfs(spec), backward(spec));
            let mut seen = vec![false; spec.node_count()];
            let mut out = Vec::new();
            let (mut i, mut j) = (0, 0);
            while i < fwd.len() || j < bwd.len() {
                while i < fwd.len() && seen[fwd[i]] {
                    i += 1;
                }
                if i < fwd.len() {
                    seen[fwd[i]] = true;
                    out.push(fwd[i]);
                }
                while j < bwd.len() && seen[bwd[j]] {
                    j += 1;
                }
                if j < bwd.len() {
                    seen[bwd[j]] = true;
                    out.push(bwd[j]);
                }
            }
            out
        }
    }
}

pub struct SearchPolicy {
    config: SearchConfig,
}

impl SearchPolicy {
    pub fn new(config: SearchConfig) -> Self {
        Self { config }
    }
}

impl Policy for SearchPolicy {
    fn start_phase(&self) -> Phase {
        Phase::Flat
    }

    fn decide(&mut self, b: &BeliefState, spec: &EnvSpec) -> Result<Decision> {
        if b.clicks() > 0 && termination_value(b, spec, Level::Flat) >= self.config.aspiration {
            return Ok(Decision::Compute(Computation::TerminateFlat));
        }
        let next = traversal_order(self.config.kind, spec).into_iter().find(|&v| !b.is_observed(v));
        Ok(Decision::Compute(next.map_or(Computation::TerminateFlat, Computation::InspectNode)))
    }
}

/// Range of achievable path sums: worst path at its minimum to best path at
/// its maximum.
pub fn aspiration_range(spec: &EnvSpec) -> (f64, f64) {
    let scope = spec.flat_scope();
    let lo: Vec<f64> = scope.nodes().iter().map(|&v| -spec.prior(v).map_or(0.0, |d| d.min())).collect();
    let hi: Vec<f64> = scope.nodes().iter().map(|&v| spec.prior(v).map_or(0.0, |d| d.max_value())).collect();
    (-scope.max_path_value(&lo), scope.max_path_value(&hi))
}

/// Picks the aspiration of `kind` maximizing mean RR, by 1-D Bayesian
/// optimization. Every evaluation scores the same `episodes` instances, so
/// the 1-D objective is a deterministic step function of the aspiration.
pub fn tune_aspiration(
    kind: SearchKind,
    spec: &EnvSpec,
    budget: usize,
    episodes: usize,
    seed: u64,
) -> Result<SearchConfig> {
    let c = Constraint { simplex: 0, interval: Some(aspiration_range(spec)) };
    let cache = shared_cache();
    let make = |x: &[f64]| PolicyConfig::new(PolicyKind::Search(SearchConfig::new(kind, x[0])));
    let stream = derive_seed(seed, 0);
    let res =
        optimize(&OptimizeSpec::new(c, budget.max(1), seed), |x, _| mean_rr(spec, &make(x), episodes, stream, &cache))?;
    let mut best: Option<(f64, f64)> = None;
    for (x, _) in res.ranked().into_iter().take(5) {
        let v = mean_rr(spec, &make(x), 4 * episodes, seed ^ 0x5EA7, &cache)?;
        if best.map_or(true, |b| v > b.0) {
            best = Some((v, x[0]));
        }
    }
    Ok(SearchConfig::new(kind, best.expect("non-empty history").1))
}
