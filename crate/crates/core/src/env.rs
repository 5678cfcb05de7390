//! Planning environments: DAGs of reward-bearing nodes with a root, goal
//! leaves and a per-inspection click cost.

use std::collections::VecDeque;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::contraction::ContractionPlan;
use crate::dist::{discretize_normal, Dist};
use crate::error::{Error, Result};

pub type NodeId = usize;

/// Node reward descriptor as written in environment files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Prior {
    Normal { mu: f64, sigma: f64, bins: usize },
    Categorical { values: Vec<f64>, probs: Vec<f64> },
    Fixed(f64),
}

impl Prior {
    pub fn to_dist(&self) -> Result<Dist> {
        match self {
            Prior::Normal { mu, sigma, bins } => discretize_normal(*mu, *sigma, *bins),
            Prior::Categorical { values, probs } => Dist::new(values, probs),
            Prior::Fixed(v) => Ok(Dist::point(*v)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeEntry {
    pub id: NodeId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dist: Option<Prior>,
}

/// On-disk environment description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvFile {
    pub name: String,
    pub nodes: Vec<NodeEntry>,
    pub edges: Vec<(NodeId, NodeId)>,
    pub root: NodeId,
    pub goals: Vec<NodeId>,
    pub click_cost: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalSet {
    pub goal: NodeId,
    /// Sorted ids of every node on some path to `goal`, root excluded.
    pub members: Vec<NodeId>,
}

/// Ground-truth rewards for one episode, indexed by node id. The root is 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardAssignment {
    pub values: Vec<f64>,
    pub seed: u64,
}

impl RewardAssignment {
    pub fn value(&self, node: NodeId) -> f64 {
        self.values[node]
    }

    pub fn path_return(&self, path: &[NodeId]) -> f64 {
        path.iter().map(|&n| self.values[n]).sum()
    }
}

/// A rooted sub-DAG used for path computations, re-indexed so that local
/// index 0 is the root and local order is topological.
#[derive(Debug)]
pub struct Scope {
    nodes: Vec<NodeId>,
    local: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    parents: Vec<Vec<usize>>,
    sinks: Vec<usize>,
    paths: Vec<Vec<usize>>,
    relevant: Vec<Vec<usize>>,
    hash: u64,
    support_sizes: Vec<usize>,
    plan: OnceLock<Result<Arc<ContractionPlan>, String>>,
}

impl Scope {
    fn build(spec: &EnvSpec, children_of: &[Vec<NodeId>], members: &[bool]) -> Scope {
        let n = spec.node_count;
        // Kahn order restricted to members, smallest id first.
        let mut indeg = vec![0usize; n];
        for &(a, b) in &spec.edges {
            if members[a] && members[b] {
                indeg[b] += 1;
            }
        }
        let mut ready: std::collections::BTreeSet<NodeId> = (0..n).filter(|&v| members[v] && indeg[v] == 0).collect();
        let mut nodes = Vec::new();
        while let Some(v) = ready.pop_first() {
            nodes.push(v);
            for &c in &children_of[v] {
                if members[c] {
                    indeg[c] -= 1;
                    if indeg[c] == 0 {
                        ready.insert(c);
                    }
                }
            }
        }
        debug_assert_eq!(nodes[0], spec.root);
        let mut local = vec![None; n];
        for (i, &v) in nodes.iter().enumerate() {
            local[v] = Some(i);
        }
        let k = nodes.len();
        let mut children = vec![Vec::new(); k];
        let mut parents = vec![Vec::new(); k];
        for (i, &v) in nodes.iter().enumerate() {
            for &c in &children_of[v] {
                if let Some(j) = local[c] {
                    children[i].push(j);
                    parents[j].push(i);
                }
            }
        }
        for list in children.iter_mut().chain(parents.iter_mut()) {
            list.sort_unstable();
        }
        let sinks: Vec<usize> = (0..k).filter(|&i| children[i].is_empty()).collect();

        let mut paths = Vec::new();
        let mut stack = Vec::new();
        walk_paths(0, &nodes, &children, &mut stack, &mut paths);

        // Nodes on some path through i: ancestors, descendants and i itself.
        let mut anc = vec![vec![false; k]; k];
        for i in 0..k {
            for &p in &parents[i] {
                anc[i][p] = true;
                let (lo, hi) = anc.split_at_mut(i);
                for (x, &flag) in lo[p].iter().enumerate() {
                    if flag {
                        hi[0][x] = true;
                    }
                }
            }
        }
        let mut relevant = vec![Vec::new(); k];
        for i in 0..k {
            let mut set = vec![false; k];
            set[i] = true;
            for x in 0..k {
                if anc[i][x] || anc[x][i] {
                    set[x] = true;
                }
            }
            relevant[i] = (0..k).filter(|&x| set[x]).collect();
        }

        let support_sizes: Vec<usize> = nodes.iter().map(|&v| spec.priors[v].as_ref().map_or(1, |d| d.len())).collect();
        let mut h = Sha256::new();
        h.update((k as u64).to_le_bytes());
        for (i, cs) in children.iter().enumerate() {
            for &c in cs {
                h.update((i as u64).to_le_bytes());
                h.update((c as u64).to_le_bytes());
            }
        }
        for &s in &support_sizes {
            h.update((s as u64).to_le_bytes());
        }
        let digest = h.finalize();
        let hash = u64::from_le_bytes(digest[..8].try_into().unwrap());

        Scope { nodes, local, children, parents, sinks, paths, relevant, hash, support_sizes, plan: OnceLock::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Local index to global node id.
    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn global(&self, local: usize) -> NodeId {
        self.nodes[local]
    }

    pub fn local(&self, global: NodeId) -> Option<usize> {
        self.local.get(global).copied().flatten()
    }

    pub fn children(&self, local: usize) -> &[usize] {
        &self.children[local]
    }

    pub fn parents(&self, local: usize) -> &[usize] {
        &self.parents[local]
    }

    pub fn sinks(&self) -> &[usize] {
        &self.sinks
    }

    /// Root-to-sink paths as local indices, root excluded, in lexicographic
    /// order of global ids.
    pub fn paths(&self) -> &[Vec<usize>] {
        &self.paths
    }

    /// Local nodes lying on some path through `local`, sorted.
    pub fn relevant(&self, local: usize) -> &[usize] {
        &self.relevant[local]
    }

    pub fn structure_hash(&self) -> u64 {
        self.hash
    }

    pub fn support_sizes(&self) -> &[usize] {
        &self.support_sizes
    }

    /// Contraction plan for this scope, built on first use.
    pub fn plan(&self) -> Result<Arc<ContractionPlan>> {
        self.plan
            .get_or_init(|| crate::contraction::cached_plan(self).map_err(|e| e.to_string()))
            .clone()
            .map_err(|_| Error::NotReducible)
    }

    /// Best path by `value(local)` sums. Ties go to the first path in
    /// lexicographic order. Returns the path (local) and its value.
    pub fn best_path_by(&self, value: impl Fn(usize) -> f64) -> (&[usize], f64) {
        let mut best = f64::NEG_INFINITY;
        let mut arg = 0;
        for (i, p) in self.paths.iter().enumerate() {
            let s: f64 = p.iter().map(|&l| value(l)).sum();
            if s > best + 1e-12 {
                best = s;
                arg = i;
            }
        }
        (&self.paths[arg], best)
    }

    /// Max over paths of the sum of `value`, via dynamic programming.
    pub fn max_path_value(&self, value: &[f64]) -> f64 {
        let k = self.len();
        let mut best = vec![f64::NEG_INFINITY; k];
        best[0] = value[0];
        for i in 1..k {
            let m = self.parents[i].iter().map(|&p| best[p]).fold(f64::NEG_INFINITY, f64::max);
            best[i] = m + value[i];
        }
        self.sinks.iter().map(|&s| best[s]).fold(f64::NEG_INFINITY, f64::max)
    }
}

fn walk_paths(at: usize, nodes: &[NodeId], children: &[Vec<usize>], stack: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if children[at].is_empty() {
        if !stack.is_empty() {
            out.push(stack.clone());
        }
        return;
    }
    let mut order: Vec<usize> = children[at].clone();
    order.sort_by_key(|&c| nodes[c]);
    for c in order {
        stack.push(c);
        walk_paths(c, nodes, children, stack, out);
        stack.pop();
    }
}

#[derive(Debug)]
struct Derived {
    children: Vec<Vec<NodeId>>,
    parents: Vec<Vec<NodeId>>,
    goal_sets: Vec<GoalSet>,
    goal_index: Vec<Option<usize>>,
    hierarchical: bool,
    flat: Scope,
    goal_scopes: Vec<Scope>,
}

/// A validated planning environment.
#[derive(Debug)]
pub struct EnvSpec {
    name: String,
    node_count: usize,
    root: NodeId,
    edges: Vec<(NodeId, NodeId)>,
    priors: Vec<Option<Dist>>,
    goals: Vec<NodeId>,
    click_cost: f64,
    derived: OnceLock<Derived>,
}

impl Clone for EnvSpec {
    fn clone(&self) -> Self {
        Self {
            name: self.name.clone(),
            node_count: self.node_count,
            root: self.root,
            edges: self.edges.clone(),
            priors: self.priors.clone(),
            goals: self.goals.clone(),
            click_cost: self.click_cost,
            derived: OnceLock::new(),
        }
    }
}

impl PartialEq for EnvSpec {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.node_count == other.node_count
            && self.root == other.root
            && self.edges == other.edges
            && self.priors == other.priors
            && self.goals == other.goals
            && self.click_cost == other.click_cost
    }
}

impl EnvSpec {
    /// Builds and validates an environment. `priors[root]` must be `None`.
    pub fn new(
        name: impl Into<String>,
        node_count: usize,
        root: NodeId,
        edges: Vec<(NodeId, NodeId)>,
        priors: Vec<Option<Dist>>,
        goals: Vec<NodeId>,
        click_cost: f64,
    ) -> Result<Self> {
        let spec = Self::new_unchecked(name, node_count, root, edges, priors, goals, click_cost);
        let problems = validate_env(&spec);
        if problems.is_empty() {
            Ok(spec)
        } else {
            Err(Error::InvalidEnv(problems))
        }
    }

    /// Builds an environment without validation. Only [`validate_env`] and
    /// the plain accessors are meaningful on an invalid result.
    pub fn new_unchecked(
        name: impl Into<String>,
        node_count: usize,
        root: NodeId,
        mut edges: Vec<(NodeId, NodeId)>,
        priors: Vec<Option<Dist>>,
        goals: Vec<NodeId>,
        click_cost: f64,
    ) -> Self {
        edges.sort_unstable();
        Self { name: name.into(), node_count, root, edges, priors, goals, click_cost, derived: OnceLock::new() }
    }

    pub fn from_file_format(file: &EnvFile) -> Result<Self> {
        let n = file.nodes.iter().map(|e| e.id + 1).max().unwrap_or(0);
        let mut priors = vec![None; n];
        let mut seen = vec![false; n];
        let mut problems = Vec::new();
        for entry in &file.nodes {
            if seen[entry.id] {
                problems.push(format!("node {} listed twice", entry.id));
            }
            seen[entry.id] = true;
            if let Some(p) = &entry.dist {
                match p.to_dist() {
                    Ok(d) => priors[entry.id] = Some(d),
                    Err(e) => problems.push(format!("node {}: {e}", entry.id)),
                }
            }
        }
        for (id, s) in seen.iter().enumerate() {
            if !s {
                problems.push(format!("node {id} missing from node list"));
            }
        }
        if !problems.is_empty() {
            return Err(Error::InvalidEnv(problems));
        }
        Self::new(file.name.clone(), n, file.root, file.edges.clone(), priors, file.goals.clone(), file.click_cost)
    }

    /// Lossless file representation (priors become categorical).
    pub fn to_file_format(&self) -> EnvFile {
        let nodes = (0..self.node_count)
            .map(|id| NodeEntry {
                id,
                dist: self.priors[id].as_ref().map(|d| {
                    if d.is_point() {
                        Prior::Fixed(d.support()[0])
                    } else {
                        Prior::Categorical { values: d.support().to_vec(), probs: d.probs().to_vec() }
                    }
                }),
            })
            .collect();
        EnvFile {
            name: self.name.clone(),
            nodes,
            edges: self.edges.clone(),
            root: self.root,
            goals: self.goals.clone(),
            click_cost: self.click_cost,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: EnvFile = serde_json::from_str(&text)?;
        Self::from_file_format(&file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.to_file_format())?)?;
        Ok(())
    }

    /// Same structure and priors with a different click cost.
    pub fn with_click_cost(&self, click_cost: f64) -> Self {
        let mut out = self.clone();
        out.click_cost = click_cost;
        out
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn edges(&self) -> &[(NodeId, NodeId)] {
        &self.edges
    }

    pub fn goals(&self) -> &[NodeId] {
        &self.goals
    }

    pub fn click_cost(&self) -> f64 {
        self.click_cost
    }

    /// Prior of a node. The root has `None`.
    pub fn prior(&self, node: NodeId) -> Option<&Dist> {
        self.priors[node].as_ref()
    }

    /// Prior mean, 0 for the root.
    pub fn prior_mean(&self, node: NodeId) -> f64 {
        self.priors[node].as_ref().map_or(0.0, Dist::mean)
    }

    /// Prior as a distribution, a point mass at 0 for the root.
    pub fn prior_or_zero(&self, node: NodeId) -> Dist {
        self.priors[node].clone().unwrap_or_else(|| Dist::point(0.0))
    }

    /// Non-root node ids in increasing order.
    pub fn non_root(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.node_count).filter(move |&v| v != self.root)
    }

    fn derived(&self) -> &Derived {
        self.derived.get_or_init(|| self.derive())
    }

    fn derive(&self) -> Derived {
        let n = self.node_count;
        let mut children = vec![Vec::new(); n];
        let mut parents = vec![Vec::new(); n];
        for &(a, b) in &self.edges {
            children[a].push(b);
            parents[b].push(a);
        }
        for list in children.iter_mut().chain(parents.iter_mut()) {
            list.sort_unstable();
            list.dedup();
        }
        let goal_sets: Vec<GoalSet> = self
            .goals
            .iter()
            .map(|&g| {
                let mut on = vec![false; n];
                on[g] = true;
                let mut queue = VecDeque::from([g]);
                while let Some(v) = queue.pop_front() {
                    for &p in &parents[v] {
                        if !on[p] {
                            on[p] = true;
                            queue.push_back(p);
                        }
                    }
                }
                on[self.root] = false;
                GoalSet { goal: g, members: (0..n).filter(|&v| on[v]).collect() }
            })
            .collect();
        let mut count = vec![0usize; n];
        let mut goal_index = vec![None; n];
        for (gi, gs) in goal_sets.iter().enumerate() {
            for &m in &gs.members {
                count[m] += 1;
                goal_index[m] = Some(gi);
            }
        }
        let hierarchical = self.non_root().all(|v| count[v] == 1);
        if !hierarchical {
            goal_index = vec![None; n];
        }
        let all = vec![true; n];
        let flat = Scope::build(self, &children, &all);
        let goal_scopes = goal_sets
            .iter()
            .map(|gs| {
                let mut members = vec![false; n];
                members[self.root] = true;
                for &m in &gs.members {
                    members[m] = true;
                }
                Scope::build(self, &children, &members)
            })
            .collect();
        Derived { children, parents, goal_sets, goal_index, hierarchical, flat, goal_scopes }
    }

    pub fn children(&self, node: NodeId) -> &[NodeId] {
        &self.derived().children[node]
    }

    pub fn parents(&self, node: NodeId) -> &[NodeId] {
        &self.derived().parents[node]
    }

    pub fn goal_sets(&self) -> &[GoalSet] {
        &self.derived().goal_sets
    }

    /// Whether every non-root node leads to exactly one goal.
    pub fn is_hierarchical(&self) -> bool {
        self.derived().hierarchical
    }

    /// Position of `goal` in [`EnvSpec::goals`].
    pub fn goal_index(&self, goal: NodeId) -> Option<usize> {
        self.goals.iter().position(|&g| g == goal)
    }

    /// Index of the single goal a node leads to, for hierarchical envs.
    pub fn goal_of(&self, node: NodeId) -> Option<usize> {
        self.derived().goal_index[node]
    }

    pub fn is_goal(&self, node: NodeId) -> bool {
        self.goals.contains(&node)
    }

    pub fn flat_scope(&self) -> &Scope {
        &self.derived().flat
    }

    /// Scope holding the root and every node on a path to the goal with
    /// the given index.
    pub fn goal_scope(&self, goal_index: usize) -> &Scope {
        &self.derived().goal_scopes[goal_index]
    }

    /// Content hash of the full environment, stable across runs.
    pub fn env_hash(&self) -> String {
        let text = serde_json::to_string(&self.to_file_format()).expect("env serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().take(16).map(|b| format!("{b:02x}")).collect()
    }

    /// Checks that `path` starts at a child of the root and ends at a goal.
    pub fn check_path(&self, path: &[NodeId]) -> Result<()> {
        let mut at = self.root;
        for &v in path {
            if v >= self.node_count || !self.children(at).contains(&v) {
                return Err(Error::InvalidPath(format!("no edge {at} -> {v}")));
            }
            at = v;
        }
        if !self.is_goal(at) || path.is_empty() {
            return Err(Error::InvalidPath("path must end at a goal".into()));
        }
        Ok(())
    }
}

impl Serialize for EnvSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_file_format().serialize(s)
    }
}

impl<'de> Deserialize<'de> for EnvSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let file = EnvFile::deserialize(d)?;
        EnvSpec::from_file_format(&file).map_err(serde::de::Error::custom)
    }
}

/// Lists every invariant violation of `spec`. Empty means valid.
pub fn validate_env(spec: &EnvSpec) -> Vec<String> {
    let n = spec.node_count;
    let mut out = Vec::new();
    if n == 0 {
        out.push("environment has no nodes".into());
        return out;
    }
    if spec.root >= n {
        out.push(format!("root {} out of range", spec.root));
        return out;
    }
    let mut children = vec![Vec::new(); n];
    let mut parents = vec![Vec::new(); n];
    for &(a, b) in &spec.edges {
        if a >= n || b >= n {
            out.push(format!("edge ({a}, {b}) out of range"));
            continue;
        }
        if a == b {
            out.push(format!("self loop on {a}"));
            continue;
        }
        if children[a].contains(&b) {
            out.push(format!("duplicate edge ({a}, {b})"));
            continue;
        }
        children[a].push(b);
        parents[b].push(a);
    }
    if !parents[spec.root].is_empty() {
        out.push(format!("root {} has parents", spec.root));
    }
    // Kahn's algorithm; leftovers sit on or behind a cycle.
    let mut indeg: Vec<usize> = parents.iter().map(Vec::len).collect();
    let mut queue: VecDeque<NodeId> = (0..n).filter(|&v| indeg[v] == 0).collect();
    let mut seen = 0;
    while let Some(v) = queue.pop_front() {
        seen += 1;
        for &c in &children[v] {
            indeg[c] -= 1;
            if indeg[c] == 0 {
                queue.push_back(c);
            }
        }
    }
    if seen < n {
        out.push("cycle detected".into());
    }
    let mut reach = vec![false; n];
    reach[spec.root] = true;
    let mut queue = VecDeque::from([spec.root]);
    while let Some(v) = queue.pop_front() {
        for &c in &children[v] {
            if !reach[c] {
                reach[c] = true;
                queue.push_back(c);
            }
        }
    }
    for v in 0..n {
        if !reach[v] {
            out.push(format!("node {v} unreachable from root"));
        }
    }
    if spec.goals.is_empty() {
        out.push("no goals".into());
    }
    let mut is_goal = vec![false; n];
    for &g in &spec.goals {
        if g >= n {
            out.push(format!("goal {g} out of range"));
            continue;
        }
        if g == spec.root {
            out.push("root cannot be a goal".into());
        }
        if is_goal[g] {
            out.push(format!("goal {g} listed twice"));
        }
        is_goal[g] = true;
        if let Some(&c) = children[g].first() {
            out.push(format!("goal {g} has child {c}"));
        }
    }
    for v in 0..n {
        if v != spec.root && children[v].is_empty() && !is_goal[v] {
            out.push(format!("leaf {v} is not a goal"));
        }
    }
    if spec.priors.len() != n {
        out.push(format!("{} priors for {n} nodes", spec.priors.len()));
    } else {
        if spec.priors[spec.root].is_some() {
            out.push("root carries a prior".into());
        }
        for v in 0..n {
            if v != spec.root && spec.priors[v].is_none() {
                out.push(format!("node {v} has no prior"));
            }
        }
    }
    if !(spec.click_cost >= 0.0 && spec.click_cost.is_finite()) {
        out.push(format!("click cost {} must be finite and nonnegative", spec.click_cost));
    }
    out
}

/// Layered fixture with one 17-node subgraph per goal and 10 paths of 5
/// steps each; standard deviations double with depth.
pub fn gen_increasing_variance(num_goals: usize) -> Result<EnvSpec> {
    if !(2..=5).contains(&num_goals) {
        return Err(Error::OutOfRange(format!("num_goals must be in 2..=5, got {num_goals}")));
    }
    const BLOCK: usize = 18;
    let n = 1 + BLOCK * num_goals;
    let mut edges = Vec::new();
    let mut priors = vec![None; n];
    let layer = |depth: u32| discretize_normal(0.0, 5.0 * 2f64.powi(depth as i32 - 1), 4);
    for g in 0..num_goals {
        let base = 1 + BLOCK * g;
        let entry = base;
        let d2 = [base + 1, base + 2];
        let d3 = [base + 3, base + 4, base + 5, base + 6];
        let d4: Vec<NodeId> = (base + 7..base + 17).collect();
        let goal = base + 17;
        edges.push((0, entry));
        priors[entry] = Some(layer(1)?);
        for (i, &v) in d2.iter().enumerate() {
            edges.push((entry, v));
            priors[v] = Some(layer(2)?);
            for &w in &d3[2 * i..2 * i + 2] {
                edges.push((v, w));
            }
        }
        let mut next = 0;
        for (i, fan) in [3usize, 3, 2, 2].into_iter().enumerate() {
            priors[d3[i]] = Some(layer(3)?);
            for &w in &d4[next..next + fan] {
                edges.push((d3[i], w));
                edges.push((w, goal));
                priors[w] = Some(layer(4)?);
            }
            next += fan;
        }
        priors[goal] = Some(discretize_normal(0.0, 100.0 + 20.0 * g as f64, 4)?);
    }
    let goals = (0..num_goals).map(|g| 1 + BLOCK * g + 17).collect();
    EnvSpec::new(format!("increasing{num_goals}"), n, 0, edges, priors, goals, 1.0)
}

/// Four-goal fixture where every path to a goal crosses a node that is
/// -1500 with probability 0.1.
pub fn gen_high_risk() -> EnvSpec {
    let n = 61;
    let mut edges = Vec::new();
    let mut priors = vec![None; n];
    let small = Dist::uniform(&[-10.0, -5.0, 5.0, 10.0]).unwrap();
    let risk = Dist::new(&[-1500.0, 0.0], &[0.1, 0.9]).unwrap();
    let goal = Dist::uniform(&[0.0, 25.0, 75.0, 100.0]).unwrap();
    for k in 0..4 {
        let b = 15 * k;
        let entry = b + 1;
        let risk_node = b + 8;
        edges.push((0, entry));
        priors[entry] = Some(Dist::point(0.0));
        for c in 0..3 {
            let (x, y) = (b + 2 + 2 * c, b + 3 + 2 * c);
            edges.extend([(entry, x), (x, y), (y, risk_node)]);
            priors[x] = Some(small.clone());
            priors[y] = Some(small.clone());
        }
        priors[risk_node] = Some(risk.clone());
        for c in 0..2 {
            let (x, y, z) = (b + 9 + 3 * c, b + 10 + 3 * c, b + 11 + 3 * c);
            edges.extend([(risk_node, x), (x, y), (y, z), (z, b + 15)]);
            for v in [x, y, z] {
                priors[v] = Some(small.clone());
            }
        }
        priors[b + 15] = Some(goal.clone());
    }
    EnvSpec::new("highrisk", n, 0, edges, priors, vec![15, 30, 45, 60], 10.0).expect("high-risk fixture is valid")
}

/// Root with two goal children, each 0 or 100 with equal odds, click cost 1.
pub fn gen_two_goal_toy() -> EnvSpec {
    let g = Dist::new(&[0.0, 100.0], &[0.5, 0.5]).expect("valid");
    EnvSpec::new("toy", 3, 0, vec![(0, 1), (0, 2)], vec![None, Some(g.clone()), Some(g)], vec![1, 2], 1.0)
        .expect("toy fixture is valid")
}

/// Three-step tree with six destinations: three first steps, one second
/// step after each, two destinations after each second step.
pub fn gen_feedback_tree() -> EnvSpec {
    let mut edges = Vec::new();
    let mut priors = vec![None; 13];
    for i in 0..3 {
        let (a, b) = (1 + i, 4 + i);
        edges.extend([(0, a), (a, b), (b, 7 + 2 * i), (b, 8 + 2 * i)]);
        priors[a] = Some(Dist::uniform(&[-4.0, 4.0]).expect("valid"));
        priors[b] = Some(Dist::uniform(&[-8.0, 8.0]).expect("valid"));
        for g in [7 + 2 * i, 8 + 2 * i] {
            priors[g] = Some(Dist::new(&[-24.0, 24.0], &[0.5, 0.5]).expect("valid"));
        }
    }
    EnvSpec::new("feedback", 13, 0, edges, priors, (7..13).collect(), 1.0).expect("feedback fixture is valid")
}

/// Five small environments whose metalevel MDPs are exactly solvable.
pub fn tiny_fixtures() -> Vec<EnvSpec> {
    let d = |v: &[f64], p: &[f64]| Some(Dist::new(v, p).expect("valid"));
    vec![
        gen_two_goal_toy(),
        EnvSpec::new(
            "tiny-diamond",
            4,
            0,
            vec![(0, 1), (0, 2), (1, 3), (2, 3)],
            vec![
                None,
                d(&[-4.0, 0.0, 6.0], &[1.0 / 3.0; 3]),
                d(&[-2.0, 2.0], &[0.5, 0.5]),
                d(&[0.0, 10.0], &[0.5, 0.5]),
            ],
            vec![3],
            0.5,
        )
        .expect("valid"),
        EnvSpec::new(
            "tiny-branches",
            5,
            0,
            vec![(0, 1), (0, 2), (1, 3), (2, 4)],
            vec![
                None,
                d(&[-5.0, 5.0], &[0.5, 0.5]),
                d(&[-5.0, 5.0], &[0.5, 0.5]),
                d(&[-20.0, 0.0, 20.0], &[0.25, 0.5, 0.25]),
                d(&[-20.0, 0.0, 20.0], &[0.25, 0.5, 0.25]),
            ],
            vec![3, 4],
            1.0,
        )
        .expect("valid"),
        EnvSpec::new(
            "tiny-fan",
            4,
            0,
            vec![(0, 1), (0, 2), (0, 3)],
            vec![None, d(&[0.0, 30.0], &[0.7, 0.3]), d(&[0.0, 30.0], &[0.7, 0.3]), d(&[5.0, 10.0], &[0.5, 0.5])],
            vec![1, 2, 3],
            2.0,
        )
        .expect("valid"),
        EnvSpec::new(
            "tiny-shared",
            6,
            0,
            vec![(0, 1), (0, 2), (1, 3), (1, 4), (2, 4), (3, 5), (4, 5)],
            vec![
                None,
                d(&[-3.0, 3.0], &[0.5, 0.5]),
                d(&[-6.0, 0.0], &[0.5, 0.5]),
                d(&[-10.0, 10.0], &[0.5, 0.5]),
                d(&[-2.0, 4.0], &[0.5, 0.5]),
                d(&[0.0, 8.0], &[0.5, 0.5]),
            ],
            vec![5],
            1.0,
        )
        .expect("valid"),
    ]
}

/// Random DAG with categorical priors of at most 4 atoms. Nodes may have
/// several parents. Deterministic in `seed`.
pub fn gen_random_small(max_nodes: usize, max_goals: usize, seed: u64) -> Result<EnvSpec> {
    if !(2..=14).contains(&max_nodes) {
        return Err(Error::OutOfRange(format!("max_nodes must be in 2..=14, got {max_nodes}")));
    }
    if max_goals == 0 {
        return Err(Error::OutOfRange("max_goals must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=max_nodes);
    let k = rng.gen_range(1..=max_goals.min(n - 1));
    let first_goal = n - k;
    let mut edges = std::collections::BTreeSet::new();
    for v in 1..n {
        let pool = v.min(first_goal);
        let parents = if pool > 1 && rng.gen_bool(0.35) { 2 } else { 1 };
        for _ in 0..parents {
            edges.insert((rng.gen_range(0..pool), v));
        }
    }
    for v in 1..first_goal {
        if !edges.iter().any(|&(a, _)| a == v) {
            edges.insert((v, rng.gen_range(first_goal..n)));
        }
    }
    let mut priors = vec![None; n];
    for p in priors.iter_mut().skip(1) {
        let size = rng.gen_range(1..=4);
        let mut values: Vec<f64> = Vec::new();
        while values.len() < size {
            let v = rng.gen_range(-10..=10) as f64;
            if !values.contains(&v) {
                values.push(v);
            }
        }
        let weights: Vec<f64> = (0..size).map(|_| rng.gen_range(1..=5) as f64).collect();
        let total: f64 = weights.iter().sum();
        let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
        *p = Some(Dist::new(&values, &probs)?);
    }
    let click_cost = [0.0, 0.5, 1.0, 2.0][rng.gen_range(0..4)];
    EnvSpec::new(
        format!("random-{seed}"),
        n,
        0,
        edges.into_iter().collect(),
        priors,
        (first_goal..n).collect(),
        click_cost,
    )
}

/// Complete tree with the given branching factor per level. Every leaf is
/// a goal. Every node gets `prior`.
pub fn gen_branching(branching: &[usize], prior: &Dist, click_cost: f64) -> Result<EnvSpec> {
    if branching.is_empty() || branching.contains(&0) {
        return Err(Error::OutOfRange("branching factors must be positive".into()));
    }
    let mut edges = Vec::new();
    let mut frontier = vec![0];
    let mut next_id = 1;
    for &b in branching {
        let mut next = Vec::new();
        for &p in &frontier {
            for _ in 0..b {
                edges.push((p, next_id));
                next.push(next_id);
                next_id += 1;
            }
        }
        frontier = next;
    }
    let mut priors = vec![Some(prior.clone()); next_id];
    priors[0] = None;
    let name = format!("branching-{}", branching.iter().map(|b| b.to_string()).collect::<Vec<_>>().join("x"));
    EnvSpec::new(name, next_id, 0, edges, priors, frontier, click_cost)
}

/// Seed for item `index` of the stream identified by `base` (splitmix64).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws every node's reward from its prior. Deterministic in `seed`.
pub fn sample_instance(spec: &EnvSpec, seed: u64) -> RewardAssignment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..spec.node_count()).map(|v| spec.prior(v).map_or(0.0, |d| d.sample(&mut rng))).collect();
    RewardAssignment { values, seed }
}

pub fn goal_sets(spec: &EnvSpec) -> Vec<GoalSet> {
    spec.goal_sets().to_vec()
}

/// Root-to-goal paths (root excluded) in lexicographic order, optionally
/// restricted to one goal.
pub fn enumerate_paths(spec: &EnvSpec, goal: Option<NodeId>) -> Vec<Vec<NodeId>> {
    let scope = spec.flat_scope();
    scope
        .paths()
        .iter()
        .map(|p| p.iter().map(|&l| scope.global(l)).collect::<Vec<_>>())
        .filter(|p| goal.map_or(true, |g| p.last() == Some(&g)))
        .collect()
}

/// Resolves `builtin:increasing2..5`, `builtin:highrisk`, `builtin:toy`,
/// `builtin:feedback` or a file path.
pub fn load_env(selector: &str) -> Result<EnvSpec> {
    if let Some(name) = selector.strip_prefix("builtin:") {
        match name {
            "highrisk" => return Ok(gen_high_risk()),
            "toy" => return Ok(gen_two_goal_toy()),
            "feedback" => return Ok(gen_feedback_tree()),
            _ => {}
        }
        if let Some(m) = name.strip_prefix("increasing") {
            if let Ok(m @ 2..=5) = m.parse::<usize>() {
                return gen_increasing_variance(m);
            }
        }
        return Err(Error::UnknownSelector(selector.to_string()));
    }
    let path = Path::new(selector);
    if !path.is_file() {
        return Err(Error::UnknownSelector(selector.to_string()));
    }
    EnvSpec::load(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn chain() -> EnvSpec {
        EnvSpec::new(
            "chain",
            3,
            0,
            vec![(0, 1), (1, 2)],
            vec![None, Some(Dist::point(1.0)), Some(Dist::point(2.0))],
            vec![2],
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn chain_is_valid() {
        assert!(validate_env(&chain()).is_empty());
        assert_eq!(enumerate_paths(&chain(), None), vec![vec![1, 2]]);
        assert_eq!(goal_sets(&chain())[0].members, vec![1, 2]);
    }

    #[test]
    fn goal_with_child_is_reported() {
        let p = Some(Dist::point(0.0));
        let spec = EnvSpec::new_unchecked(
            "bad",
            4,
            0,
            vec![(0, 1), (1, 2), (2, 3)],
            vec![None, p.clone(), p.clone(), p],
            vec![2, 3],
            1.0,
        );
        let v = validate_env(&spec);
        assert!(v.iter().any(|s| s.contains("has child")), "{v:?}");
    }

    #[test]
    fn cycle_is_reported() {
        let p = Some(Dist::point(0.0));
        let spec = EnvSpec::new_unchecked(
            "cyclic",
            4,
            0,
            vec![(0, 1), (1, 2), (2, 1), (2, 3)],
            vec![None, p.clone(), p.clone(), p],
            vec![3],
            1.0,
        );
        assert!(validate_env(&spec).iter().any(|s| s == "cycle detected"));
    }

    #[test]
    fn missing_prior_and_unreachable_and_nongoal_leaf() {
        let spec = EnvSpec::new_unchecked(
            "bad",
            4,
            0,
            vec![(0, 1), (1, 2)],
            vec![None, None, Some(Dist::point(0.0)), Some(Dist::point(0.0))],
            vec![2],
            1.0,
        );
        let v = validate_env(&spec);
        assert!(v.iter().any(|s| s.contains("no prior")));
        assert!(v.iter().any(|s| s.contains("unreachable")));
        assert!(v.iter().any(|s| s.contains("not a goal")));
        assert!(EnvSpec::new("x", 1, 0, vec![], vec![None], vec![], 1.0).is_err());
    }

    #[test]
    fn increasing_variance_shape() {
        for m in 2..=5 {
            let env = gen_increasing_variance(m).unwrap();
            assert_eq!(env.node_count(), 18 * m + 1);
            assert!(env.is_hierarchical());
            for (gi, &g) in env.goals().iter().enumerate() {
                let paths = enumerate_paths(&env, Some(g));
                assert_eq!(paths.len(), 10);
                assert!(paths.iter().all(|p| p.len() == 5));
                assert_eq!(env.goal_sets()[gi].members.len(), 18);
                let sd = env.prior(g).unwrap().variance().sqrt();
                // Discretization shrinks the spread; the nominal sigma is checked below.
                assert!(sd < 100.0 + 20.0 * gi as f64);
            }
        }
        assert!(gen_increasing_variance(1).is_err());
        assert!(gen_increasing_variance(6).is_err());
        assert_eq!(gen_increasing_variance(5).unwrap().node_count(), 91);
    }

    #[test]
    fn increasing_variance_nominal_sigmas() {
        let sigmas: Vec<f64> = (1..=4).map(|d| 5.0 * 2f64.powi(d - 1)).collect();
        let total = sigmas.iter().map(|s| s * s).sum::<f64>().sqrt();
        assert!((total - 46.098).abs() < 1e-3);
        // Each layer's discretization is the 4-bin quantile scheme at that sigma.
        let env = gen_increasing_variance(2).unwrap();
        let path = &enumerate_paths(&env, Some(env.goals()[0]))[0];
        for (depth, &node) in path[..4].iter().enumerate() {
            let expect = discretize_normal(0.0, sigmas[depth], 4).unwrap();
            assert_eq!(env.prior(node).unwrap(), &expect);
        }
        let g2 = env.prior(env.goals()[1]).unwrap();
        assert_eq!(g2, &discretize_normal(0.0, 120.0, 4).unwrap());
    }

    #[test]
    fn high_risk_shape() {
        let env = gen_high_risk();
        assert_eq!(env.node_count(), 61);
        assert_eq!(env.goals(), &[15, 30, 45, 60]);
        assert_eq!(env.click_cost(), 10.0);
        assert!(env.is_hierarchical());
        assert_eq!(env.goal_sets()[0].members, (1..=15).collect::<Vec<_>>());
        for k in 0..4 {
            let goal = 15 * k + 15;
            let risk = 15 * k + 8;
            assert!((env.prior_mean(risk) + 150.0).abs() < 1e-9);
            let paths = enumerate_paths(&env, Some(goal));
            assert_eq!(paths.len(), 6);
            assert!(paths.iter().all(|p| p.len() == 8 && p.contains(&risk)));
        }
    }

    #[test]
    fn high_risk_node_is_a_cut_vertex() {
        let env = gen_high_risk();
        for k in 0..4 {
            let risk = 15 * k + 8;
            let mut reach = vec![false; 61];
            let mut stack = vec![0];
            reach[0] = true;
            while let Some(v) = stack.pop() {
                for &c in env.children(v) {
                    if c != risk && !reach[c] {
                        reach[c] = true;
                        stack.push(c);
                    }
                }
            }
            assert!(!reach[15 * k + 15]);
        }
    }

    #[test]
    fn sampling_is_deterministic_and_respects_points() {
        let env = gen_high_risk();
        let a = sample_instance(&env, 3);
        assert_eq!(a, sample_instance(&env, 3));
        assert_eq!(a.value(0), 0.0);
        assert_eq!(a.value(1), 0.0);
        for v in 1..61 {
            assert!(env.prior(v).unwrap().index_of(a.value(v)).is_some());
        }
    }

    #[test]
    fn risk_frequency_matches_prior() {
        let env = gen_high_risk();
        let n = 100_000;
        let hits = (0..n).filter(|&s| sample_instance(&env, s).value(8) == -1500.0).count();
        let frac = hits as f64 / n as f64;
        assert!((frac - 0.1).abs() < 0.01, "{frac}");
    }

    #[test]
    fn selectors() {
        assert_eq!(load_env("builtin:highrisk").unwrap().node_count(), 61);
        assert_eq!(load_env("builtin:increasing3").unwrap().goals().len(), 3);
        assert!(matches!(load_env("builtin:increasing9"), Err(Error::UnknownSelector(_))));
        assert!(matches!(load_env("/no/such/file.json"), Err(Error::UnknownSelector(_))));
    }

    #[test]
    fn file_round_trip() {
        let env = gen_high_risk();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("env.json");
        env.save(&path).unwrap();
        let back = load_env(path.to_str().unwrap()).unwrap();
        assert_eq!(back, env);
        assert_eq!(back.env_hash(), env.env_hash());
    }

    #[test]
    fn file_format_descriptors() {
        let text = r#"{
            "name": "tiny", "root": 0, "goals": [2], "click_cost": 1.0,
            "edges": [[0, 1], [1, 2]],
            "nodes": [
                {"id": 0},
                {"id": 1, "dist": {"normal": {"mu": 0.0, "sigma": 1.0, "bins": 2}}},
                {"id": 2, "dist": {"categorical": {"values": [0, 10], "probs": [0.5, 0.5]}}}
            ]
        }"#;
        let env: EnvSpec = serde_json::from_str(text).unwrap();
        assert_eq!(env.prior(1).unwrap().len(), 2);
        assert_eq!(env.prior_mean(2), 5.0);
        let bad = text.replace("[1, 2]", "[2, 1]");
        assert!(serde_json::from_str::<EnvSpec>(&bad).is_err());
    }

    #[test]
    fn check_path_accepts_only_root_to_goal_walks() {
        let env = gen_high_risk();
        assert!(env.check_path(&[1, 2, 3, 8, 9, 10, 11, 15]).is_ok());
        assert!(env.check_path(&[1, 2, 3, 8]).is_err());
        assert!(env.check_path(&[2, 3, 8, 9, 10, 11, 15]).is_err());
        assert!(env.check_path(&[]).is_err());
    }

    #[test]
    fn branching_tree() {
        let env = gen_branching(&[3, 3, 3], &Dist::uniform(&[-1.0, 1.0]).unwrap(), 1.0).unwrap();
        assert_eq!(env.node_count(), 40);
        assert_eq!(env.goals().len(), 27);
        assert_eq!(enumerate_paths(&env, None).len(), 27);
    }

    fn dfs_paths(env: &EnvSpec) -> Vec<Vec<NodeId>> {
        fn go(env: &EnvSpec, v: NodeId, stack: &mut Vec<NodeId>, out: &mut Vec<Vec<NodeId>>) {
            let kids: Vec<NodeId> = env.edges().iter().filter(|e| e.0 == v).map(|e| e.1).collect();
            if kids.is_empty() {
                out.push(stack.clone());
            }
            for c in kids {
                stack.push(c);
                go(env, c, stack, out);
                stack.pop();
            }
        }
        let mut out = Vec::new();
        go(env, env.root(), &mut Vec::new(), &mut out);
        out.sort();
        out
    }

    proptest! {
        #[test]
        fn random_envs_are_valid_and_deterministic(seed in 0u64..5000, max in 2usize..=14, goals in 1usize..4) {
            let a = gen_random_small(max, goals, seed).unwrap();
            let b = gen_random_small(max, goals, seed).unwrap();
            prop_assert!(validate_env(&a).is_empty());
            prop_assert_eq!(&a, &b);
            prop_assert!(a.node_count() <= max);
            prop_assert!((1..=goals).contains(&a.goals().len()));
            prop_assert!(a.non_root().all(|v| a.prior(v).unwrap().len() <= 4));
        }

        #[test]
        fn path_enumeration_matches_dfs(seed in 0u64..5000) {
            let env = gen_random_small(12, 3, seed).unwrap();
            let paths = enumerate_paths(&env, None);
            let mut sorted = paths.clone();
            sorted.sort();
            prop_assert_eq!(&paths, &sorted);
            sorted.dedup();
            prop_assert_eq!(sorted.len(), paths.len());
            prop_assert_eq!(paths, dfs_paths(&env));
        }

        #[test]
        fn goal_sets_are_path_unions(seed in 0u64..5000) {
            let env = gen_random_small(12, 3, seed).unwrap();
            for gs in env.goal_sets() {
                let mut union: Vec<NodeId> = enumerate_paths(&env, Some(gs.goal)).concat();
                union.sort();
                union.dedup();
                prop_assert_eq!(&union, &gs.members);
            }
        }
    }
}
