//! Exact distribution of the best root-to-sink path sum on a DAG.
//!
//! [`plan_contraction`] reduces the graph structure to a single node with
//! three operations: `Add` merges a series pair, `Maximise` merges a
//! parallel pair and `Split` duplicates a node once per parent. Plans only
//! depend on the structure, so they are computed once and cached.
//! [`exec_contraction`] replays a plan against concrete distributions;
//! a split node is conditioned on each of its values and the branch results
//! are recombined as a probability mixture.
//!
//! Two reference implementations live here as well: full joint enumeration
//! ([`naive_max_path_dist`]) and path enumeration conditioned on shared
//! nodes ([`path_enumeration_dist`]), which is exact but exponential in the
//! number of nodes shared between paths.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dist::Dist;
use crate::env::{EnvSpec, Scope};
use crate::error::{Error, Result};

/// Joint outcome cap for [`naive_max_path_dist`].
pub const NAIVE_OUTCOME_CAP: f64 = 1e7;

/// Conditioning-set cap for [`path_enumeration_dist`] without a deadline.
pub const PATH_ENUM_CAP: f64 = 1e9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Step {
    /// `parent` absorbs its only child.
    Add { parent: usize, child: usize },
    /// `keep` absorbs the parallel node `drop`.
    Maximise { keep: usize, drop: usize },
    /// `node` keeps its first parent; `copies` take over the others, in
    /// parent order. Copies occupy slots `first_copy..first_copy + count`.
    Split { node: usize, first_copy: usize, count: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionPlan {
    pub steps: Vec<Step>,
    /// Number of scope nodes the plan expects.
    pub nodes: usize,
    /// Total slots including split copies.
    pub slots: usize,
    pub source_structure: u64,
}

impl ContractionPlan {
    pub fn split_count(&self) -> usize {
        self.steps.iter().filter(|s| matches!(s, Step::Split { .. })).count()
    }
}

struct Work {
    alive: Vec<bool>,
    children: Vec<Vec<usize>>,
    parents: Vec<Vec<usize>>,
    size: Vec<f64>,
}

impl Work {
    fn remove_edge(&mut self, a: usize, b: usize) {
        self.children[a].retain(|&x| x != b);
        self.parents[b].retain(|&x| x != a);
    }

    fn add_edge(&mut self, a: usize, b: usize) {
        let cs = &mut self.children[a];
        if let Err(i) = cs.binary_search(&b) {
            cs.insert(i, b);
        }
        let ps = &mut self.parents[b];
        if let Err(i) = ps.binary_search(&a) {
            ps.insert(i, a);
        }
    }

    fn find_add(&self) -> Option<(usize, usize)> {
        (0..self.alive.len()).find_map(|v| {
            if !self.alive[v] || self.children[v].len() != 1 {
                return None;
            }
            let c = self.children[v][0];
            (self.parents[c].len() == 1).then_some((v, c))
        })
    }

    fn find_max(&self) -> Option<(usize, usize)> {
        for p in 0..self.alive.len() {
            if !self.alive[p] || self.children[p].len() < 2 {
                continue;
            }
            let kids = &self.children[p];
            for (i, &a) in kids.iter().enumerate() {
                if self.parents[a].len() != 1 || self.children[a].len() > 1 {
                    continue;
                }
                for &b in &kids[i + 1..] {
                    if self.parents[b].len() == 1 && self.children[b] == self.children[a] {
                        return Some((a, b));
                    }
                }
            }
        }
        None
    }

    fn find_split(&self) -> Option<usize> {
        (0..self.alive.len())
            .filter(|&v| self.alive[v] && self.parents[v].len() >= 2)
            .min_by(|&a, &b| self.size[a].total_cmp(&self.size[b]).then(a.cmp(&b)))
    }
}

/// Builds the reduction plan for a scope.
pub fn plan_contraction(scope: &Scope) -> Result<ContractionPlan> {
    let k = scope.len();
    let mut w = Work {
        alive: vec![true; k],
        children: (0..k).map(|i| scope.children(i).to_vec()).collect(),
        parents: (0..k).map(|i| scope.parents(i).to_vec()).collect(),
        size: scope.support_sizes().iter().map(|&s| s as f64).collect(),
    };
    let mut steps = Vec::new();
    let mut remaining = k;
    // Each step strictly decreases (root paths summed over nodes, that sum
    // minus node count), so the loop is finite; the guard catches bugs.
    let guard = 1_000_000;
    while remaining > 1 {
        if steps.len() > guard {
            return Err(Error::NotReducible);
        }
        if let Some((p, c)) = w.find_add() {
            let grand = std::mem::take(&mut w.children[c]);
            w.remove_edge(p, c);
            for g in grand {
                w.parents[g].retain(|&x| x != c);
                w.add_edge(p, g);
            }
            w.alive[c] = false;
            w.size[p] = (w.size[p] * w.size[c]).min(1e300);
            steps.push(Step::Add { parent: p, child: c });
            remaining -= 1;
        } else if let Some((a, b)) = w.find_max() {
            let p = w.parents[b][0];
            w.remove_edge(p, b);
            if let Some(&c) = w.children[b].first() {
                w.remove_edge(b, c);
            }
            w.alive[b] = false;
            w.size[a] += w.size[b];
            steps.push(Step::Maximise { keep: a, drop: b });
            remaining -= 1;
        } else if let Some(v) = w.find_split() {
            let parents = w.parents[v].clone();
            let kids = w.children[v].clone();
            let first_copy = w.alive.len();
            let count = parents.len() - 1;
            for &p in &parents[1..] {
                let id = w.alive.len();
                w.alive.push(true);
                w.children.push(Vec::new());
                w.parents.push(Vec::new());
                w.size.push(1.0);
                w.remove_edge(p, v);
                w.add_edge(p, id);
                for &c in &kids {
                    w.add_edge(id, c);
                }
            }
            w.size[v] = 1.0;
            steps.push(Step::Split { node: v, first_copy, count });
            remaining += count;
        } else {
            return Err(Error::NotReducible);
        }
    }
    if !w.alive[0] {
        return Err(Error::NotReducible);
    }
    Ok(ContractionPlan { steps, nodes: k, slots: w.alive.len(), source_structure: scope.structure_hash() })
}

fn plan_cache() -> &'static Mutex<HashMap<u64, Arc<ContractionPlan>>> {
    static CACHE: OnceLock<Mutex<HashMap<u64, Arc<ContractionPlan>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Plan for `scope`, shared across environments with the same structure.
pub fn cached_plan(scope: &Scope) -> Result<Arc<ContractionPlan>> {
    let key = scope.structure_hash();
    if let Some(p) = plan_cache().lock().unwrap().get(&key) {
        return Ok(p.clone());
    }
    let plan = Arc::new(plan_contraction(scope)?);
    plan_cache().lock().unwrap().insert(key, plan.clone());
    Ok(plan)
}

/// Executes `plan` on per-node distributions in scope-local order.
/// `dists[0]` is the root's value, normally a point mass at 0.
pub fn exec_contraction(plan: &ContractionPlan, structure: u64, dists: &[Dist]) -> Result<Dist> {
    if plan.source_structure != structure || dists.len() != plan.nodes {
        return Err(Error::PlanMismatch);
    }
    let mut vals: Vec<Dist> = Vec::with_capacity(plan.slots);
    vals.extend_from_slice(dists);
    vals.resize(plan.slots, Dist::point(0.0));
    run(&plan.steps, vals)
}

fn run(steps: &[Step], mut vals: Vec<Dist>) -> Result<Dist> {
    for (i, step) in steps.iter().enumerate() {
        match *step {
            Step::Add { parent, child } => {
                let c = std::mem::replace(&mut vals[child], Dist::point(0.0));
                vals[parent] = vals[parent].add(&c)?;
            }
            Step::Maximise { keep, drop } => {
                let d = std::mem::replace(&mut vals[drop], Dist::point(0.0));
                vals[keep] = vals[keep].max(&d)?;
            }
            Step::Split { node, first_copy, count } => {
                if vals[node].is_point() {
                    for c in first_copy..first_copy + count {
                        vals[c] = vals[node].clone();
                    }
                    continue;
                }
                let d = vals[node].clone();
                let mut parts = Vec::with_capacity(d.len());
                for (v, p) in d.iter() {
                    let mut branch = vals.clone();
                    let point = Dist::point(v);
                    for c in first_copy..first_copy + count {
                        branch[c] = point.clone();
                    }
                    branch[node] = point;
                    parts.push((run(&steps[i + 1..], branch)?, p));
                }
                return Dist::mixture(&parts);
            }
        }
    }
    Ok(std::mem::replace(&mut vals[0], Dist::point(0.0)))
}

/// Contraction over a scope with its cached plan.
pub fn max_path_dist(scope: &Scope, dists: &[Dist]) -> Result<Dist> {
    let plan = scope.plan()?;
    exec_contraction(&plan, scope.structure_hash(), dists)
}

/// Per-node distributions of a whole environment (global ids) mapped to
/// the flat scope's local order.
pub fn flat_local(spec: &EnvSpec, dists: &[Dist]) -> Vec<Dist> {
    spec.flat_scope().nodes().iter().map(|&v| dists[v].clone()).collect()
}

/// Brute-force oracle: enumerates every joint outcome of the environment.
/// `dists` is indexed by global node id.
pub fn naive_max_path_dist(spec: &EnvSpec, dists: &[Dist]) -> Result<Dist> {
    naive_scope(spec.flat_scope(), &flat_local(spec, dists))
}

/// Brute-force oracle over a scope; `dists` in scope-local order.
pub fn naive_scope(scope: &Scope, dists: &[Dist]) -> Result<Dist> {
    let random: Vec<usize> = (0..dists.len()).filter(|&i| !dists[i].is_point()).collect();
    let size: f64 = random.iter().map(|&i| dists[i].len() as f64).product();
    if size > NAIVE_OUTCOME_CAP {
        return Err(Error::OutcomeSpaceTooLarge { size, cap: NAIVE_OUTCOME_CAP });
    }
    let mut values: Vec<f64> = dists.iter().map(|d| d.support()[0]).collect();
    let mut digits = vec![0usize; random.len()];
    let mut pairs: Vec<(f64, f64)> = Vec::new();
    let mut acc: Option<Dist> = None;
    let mut acc_mass = 0.0;
    loop {
        let prob: f64 = random.iter().zip(&digits).map(|(&i, &d)| dists[i].probs()[d]).product();
        pairs.push((scope.max_path_value(&values), prob));
        if pairs.len() >= 1 << 20 {
            acc = Some(fold_pairs(acc, &mut acc_mass, &mut pairs)?);
        }
        // Odometer increment.
        let mut pos = 0;
        loop {
            if pos == random.len() {
                return fold_pairs(acc, &mut acc_mass, &mut pairs);
            }
            let node = random[pos];
            digits[pos] += 1;
            if digits[pos] < dists[node].len() {
                values[node] = dists[node].support()[digits[pos]];
                break;
            }
            digits[pos] = 0;
            values[node] = dists[node].support()[0];
            pos += 1;
        }
    }
}

fn fold_pairs(acc: Option<Dist>, acc_mass: &mut f64, pairs: &mut Vec<(f64, f64)>) -> Result<Dist> {
    let mass: f64 = pairs.iter().map(|p| p.1).sum();
    let (values, probs): (Vec<f64>, Vec<f64>) = pairs.drain(..).map(|(v, p)| (v, p / mass)).unzip();
    let chunk = Dist::new(&values, &probs)?;
    let out = merge_weighted(acc, *acc_mass, chunk, mass);
    *acc_mass += mass;
    out
}

/// Number of joint outcomes of the shared nodes that path enumeration
/// conditions on.
pub fn path_enumeration_combinations(scope: &Scope, dists: &[Dist]) -> f64 {
    let mut on_paths = vec![0usize; dists.len()];
    for p in scope.paths() {
        for &l in p {
            on_paths[l] += 1;
        }
    }
    (1..dists.len()).filter(|&i| on_paths[i] >= 2 && !dists[i].is_point()).map(|i| dists[i].len() as f64).product()
}

/// Exact best-path distribution without graph reduction. Conditions on
/// every non-degenerate node shared by two or more paths; given those, the
/// paths are independent sums of their private nodes.
pub fn path_enumeration_dist(scope: &Scope, dists: &[Dist], deadline: Option<Instant>) -> Result<Dist> {
    let k = dists.len();
    let mut on_paths = vec![0usize; k];
    for p in scope.paths() {
        for &l in p {
            on_paths[l] += 1;
        }
    }
    let shared: Vec<usize> = (1..k).filter(|&i| on_paths[i] >= 2 && !dists[i].is_point()).collect();
    let combos: f64 = shared.iter().map(|&i| dists[i].len() as f64).product();
    if deadline.is_none() && combos > PATH_ENUM_CAP {
        return Err(Error::OutcomeSpaceTooLarge { size: combos, cap: PATH_ENUM_CAP });
    }
    let mut is_shared = vec![false; k];
    for &i in &shared {
        is_shared[i] = true;
    }
    // Private part of each path, plus the fixed part of its shared nodes.
    let mut private = Vec::with_capacity(scope.paths().len());
    let mut fixed = vec![0.0; scope.paths().len()];
    for (pi, p) in scope.paths().iter().enumerate() {
        let mut d = dists[0].clone();
        for &l in p {
            if is_shared[l] {
                continue;
            }
            if dists[l].is_point() && on_paths[l] >= 2 {
                fixed[pi] += dists[l].support()[0];
            } else {
                d = d.add(&dists[l])?;
            }
        }
        private.push(d);
    }
    let members: Vec<Vec<usize>> =
        scope.paths().iter().map(|p| (0..shared.len()).filter(|&s| p.contains(&shared[s])).collect()).collect();

    let mut digits = vec![0usize; shared.len()];
    let mut parts: Vec<(Dist, f64)> = Vec::new();
    let mut acc: Option<Dist> = None;
    let mut acc_mass = 0.0;
    let mut count = 0u64;
    loop {
        count += 1;
        if count % 256 == 0 {
            if let Some(t) = deadline {
                if Instant::now() >= t {
                    return Err(Error::BudgetExceeded);
                }
            }
        }
        let prob: f64 = shared.iter().zip(&digits).map(|(&i, &d)| dists[i].probs()[d]).product();
        let mut best: Option<Dist> = None;
        for (pi, d) in private.iter().enumerate() {
            let offset: f64 =
                fixed[pi] + members[pi].iter().map(|&s| dists[shared[s]].support()[digits[s]]).sum::<f64>();
            let shifted = d.shift(offset);
            best = Some(match best {
                None => shifted,
                Some(b) => b.max(&shifted)?,
            });
        }
        parts.push((best.expect("scope has a path"), prob));
        if parts.len() >= 4096 {
            let mass: f64 = parts.iter().map(|p| p.1).sum();
            let chunk = Dist::mixture(&normalized(&mut parts, mass))?;
            acc = Some(merge_weighted(acc, acc_mass, chunk, mass)?);
            acc_mass += mass;
        }
        let mut pos = 0;
        loop {
            if pos == shared.len() {
                let mass: f64 = parts.iter().map(|p| p.1).sum();
                if parts.is_empty() {
                    return acc.ok_or(Error::NotReducible);
                }
                let chunk = Dist::mixture(&normalized(&mut parts, mass))?;
                return merge_weighted(acc, acc_mass, chunk, mass);
            }
            digits[pos] += 1;
            if digits[pos] < dists[shared[pos]].len() {
                break;
            }
            digits[pos] = 0;
            pos += 1;
        }
    }
}

fn normalized(parts: &mut Vec<(Dist, f64)>, mass: f64) -> Vec<(Dist, f64)> {
    parts.drain(..).map(|(d, p)| (d, p / mass)).collect()
}

fn merge_weighted(acc: Option<Dist>, acc_mass: f64, chunk: Dist, mass: f64) -> Result<Dist> {
    match acc {
        None => Ok(chunk),
        Some(prev) => {
            let w = mass / (acc_mass + mass);
            Dist::mixture(&[(prev, 1.0 - w), (chunk, w)])
        }
    }
}
