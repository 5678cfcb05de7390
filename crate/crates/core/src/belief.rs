//! Belief states over node rewards, the metalevel transition function and
//! episode rollout.

use std::borrow::Cow;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::dist::Dist;
use crate::env::{EnvSpec, NodeId, RewardAssignment, Scope};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    Flat,
    GoalSetting,
    /// Planning the route to the goal with this node id.
    GoalAchievement(NodeId),
    Done,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Computation {
    InspectNode(NodeId),
    InspectGoal(NodeId),
    TerminateFlat,
    TerminateHigh,
    TerminateLow,
}

impl Computation {
    pub fn node(&self) -> Option<NodeId> {
        match *self {
            Computation::InspectNode(n) | Computation::InspectGoal(n) => Some(n),
            _ => None,
        }
    }

    pub fn is_termination(&self) -> bool {
        self.node().is_none()
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Computation::InspectNode(_) => "inspect_node",
            Computation::InspectGoal(_) => "inspect_goal",
            Computation::TerminateFlat => "terminate_flat",
            Computation::TerminateHigh => "terminate_high",
            Computation::TerminateLow => "terminate_low",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Level {
    Flat,
    High,
    /// Goal node id.
    Low(NodeId),
}

/// What a policy wants to do next.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Compute(Computation),
    /// Hand control back to goal setting, keeping all observations.
    Switch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeliefState {
    observed: Vec<Option<f64>>,
    phase: Phase,
    clicks: usize,
    /// How often each goal (by index) has been committed to.
    commits: Vec<u8>,
}

impl BeliefState {
    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn clicks(&self) -> usize {
        self.clicks
    }

    pub fn observed(&self, node: NodeId) -> Option<f64> {
        self.observed[node]
    }

    pub fn is_observed(&self, node: NodeId) -> bool {
        self.observed[node].is_some()
    }

    /// Observed nodes and their values, by node id.
    pub fn observations(&self) -> Vec<(NodeId, f64)> {
        self.observed.iter().enumerate().filter_map(|(v, o)| o.map(|x| (v, x))).collect()
    }

    pub fn observed_count(&self) -> usize {
        self.observed.iter().filter(|o| o.is_some()).count()
    }

    pub fn commits(&self, goal_index: usize) -> u8 {
        self.commits[goal_index]
    }

    /// Current goal in the goal-achievement phase.
    pub fn current_goal(&self) -> Option<NodeId> {
        match self.phase {
            Phase::GoalAchievement(g) => Some(g),
            _ => None,
        }
    }

    /// Expected reward of a node: its observed value or its prior mean.
    pub fn mean(&self, spec: &EnvSpec, node: NodeId) -> f64 {
        self.observed[node].unwrap_or_else(|| spec.prior_mean(node))
    }

    /// Effective distribution: a point mass once observed.
    pub fn dist<'a>(&self, spec: &'a EnvSpec, node: NodeId) -> Cow<'a, Dist> {
        match (self.observed[node], spec.prior(node)) {
            (Some(v), _) => Cow::Owned(Dist::point(v)),
            (None, Some(d)) => Cow::Borrowed(d),
            (None, None) => Cow::Owned(Dist::point(0.0)),
        }
    }

    /// Effective distributions in the local order of `scope`.
    pub fn scope_dists(&self, spec: &EnvSpec, scope: &Scope) -> Vec<Dist> {
        scope.nodes().iter().map(|&v| self.dist(spec, v).into_owned()).collect()
    }

    pub fn scope_means(&self, spec: &EnvSpec, scope: &Scope) -> Vec<f64> {
        scope.nodes().iter().map(|&v| self.mean(spec, v)).collect()
    }

    /// Stable in-process key of the observation pattern.
    pub fn key(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for o in &self.observed {
            o.map(f64::to_bits).hash(&mut h);
        }
        h.finish()
    }

    /// Belief with the given nodes already observed. Does not count clicks.
    pub fn with_observations(spec: &EnvSpec, phase: Phase, obs: &[(NodeId, f64)]) -> Self {
        let mut b = init_belief(spec, phase);
        for &(n, v) in obs {
            b.observed[n] = Some(v);
        }
        b
    }

    /// Fresh belief already committed to `goal`, as if goal setting had
    /// just picked it without inspecting anything.
    pub fn committed(spec: &EnvSpec, goal: NodeId) -> Result<Self> {
        let gi = spec.goal_index(goal).ok_or_else(|| Error::IllegalComputation(format!("{goal} is not a goal")))?;
        let mut b = init_belief(spec, Phase::GoalAchievement(goal));
        b.commits[gi] = 1;
        Ok(b)
    }

    /// Applies a policy decision: inspections reveal `truth`, terminations
    /// move between phases and `Switch` returns to goal setting.
    pub fn apply(&self, spec: &EnvSpec, d: Decision, truth: &RewardAssignment) -> Result<BeliefState> {
        match d {
            Decision::Switch => match self.phase {
                Phase::GoalAchievement(_) => {
                    let mut b = self.clone();
                    b.phase = Phase::GoalSetting;
                    Ok(b)
                }
                other => Err(Error::IllegalComputation(format!("switch in phase {other:?}"))),
            },
            Decision::Compute(c) if c.node().is_some() => observe(self, spec, c, truth),
            Decision::Compute(c) => self.terminate(spec, c),
        }
    }

    fn terminate(&self, spec: &EnvSpec, c: Computation) -> Result<BeliefState> {
        let mut b = self.clone();
        match (self.phase, c) {
            (Phase::Flat, Computation::TerminateFlat) => b.phase = Phase::Done,
            (Phase::GoalAchievement(_), Computation::TerminateLow) => b.phase = Phase::Done,
            (Phase::GoalSetting, Computation::TerminateHigh) => {
                let g = commit_goal(self, spec);
                let gi = spec.goal_index(g).expect("goal");
                b.commits[gi] = b.commits[gi].saturating_add(1);
                b.phase = Phase::GoalAchievement(g);
            }
            (phase, c) => {
                return Err(Error::IllegalComputation(format!("{c:?} in phase {phase:?}")));
            }
        }
        Ok(b)
    }
}

pub fn init_belief(spec: &EnvSpec, phase: Phase) -> BeliefState {
    BeliefState { observed: vec![None; spec.node_count()], phase, clicks: 0, commits: vec![0; spec.goals().len()] }
}

fn is_legal(b: &BeliefState, spec: &EnvSpec, c: Computation) -> bool {
    match (b.phase, c) {
        (Phase::Flat, Computation::InspectNode(n)) => n < spec.node_count() && n != spec.root(),
        (Phase::Flat, Computation::TerminateFlat) => true,
        (Phase::GoalSetting, Computation::InspectGoal(g)) => spec.is_goal(g),
        (Phase::GoalSetting, Computation::TerminateHigh) => true,
        (Phase::GoalAchievement(g), Computation::InspectNode(n)) => {
            let gi = spec.goal_index(g).expect("goal");
            spec.goal_sets()[gi].members.binary_search(&n).is_ok()
        }
        (Phase::GoalAchievement(_), Computation::TerminateLow) => true,
        _ => false,
    }
}

/// Reveals the inspected node's true value.
pub fn observe(b: &BeliefState, spec: &EnvSpec, c: Computation, truth: &RewardAssignment) -> Result<BeliefState> {
    let node = c.node().ok_or_else(|| Error::IllegalComputation(format!("{c:?} is not an inspection")))?;
    if !is_legal(b, spec, c) {
        return Err(Error::IllegalComputation(format!("{c:?} in phase {:?}", b.phase)));
    }
    if b.observed[node].is_some() {
        return Err(Error::AlreadyObserved(node));
    }
    let mut out = b.clone();
    out.observed[node] = Some(truth.value(node));
    out.clicks += 1;
    Ok(out)
}

/// Best path to the goal with index `gi` by expected sums, goal included.
pub fn goal_route_value(b: &BeliefState, spec: &EnvSpec, gi: usize) -> f64 {
    let scope = spec.goal_scope(gi);
    scope.max_path_value(&b.scope_means(spec, scope))
}

/// Prior-mean value of the best route to a goal, the goal itself excluded.
pub fn prior_route_cost(spec: &EnvSpec, gi: usize) -> f64 {
    let scope = spec.goal_scope(gi);
    let means: Vec<f64> = scope.nodes().iter().map(|&v| spec.prior_mean(v)).collect();
    scope.max_path_value(&means) - spec.prior_mean(spec.goals()[gi])
}

/// Goal value used by goal setting: the goal's expected reward, corrected
/// by whatever has been learned about the route since.
pub fn high_value(b: &BeliefState, spec: &EnvSpec, gi: usize) -> f64 {
    goal_route_value(b, spec, gi) - prior_route_cost(spec, gi)
}

/// Distribution of the goal-setting value of goal `gi`.
pub fn high_dist(b: &BeliefState, spec: &EnvSpec, gi: usize) -> Dist {
    let g = spec.goals()[gi];
    let d = b.dist(spec, g);
    let correction = high_value(b, spec, gi) - b.mean(spec, g);
    if correction.abs() < 1e-12 {
        d.into_owned()
    } else {
        d.shift(correction)
    }
}

/// Goal picked on leaving goal setting: highest value, lowest id on ties.
pub fn commit_goal(b: &BeliefState, spec: &EnvSpec) -> NodeId {
    let mut best: Option<(f64, NodeId)> = None;
    for (gi, &g) in spec.goals().iter().enumerate() {
        let v = high_value(b, spec, gi);
        best = match best {
            Some((bv, bg)) if v < bv - 1e-12 || ((v - bv).abs() <= 1e-12 && bg < g) => Some((bv, bg)),
            _ => Some((v, g)),
        };
    }
    best.expect("at least one goal").1
}

/// Value of stopping deliberation at `level`.
pub fn termination_value(b: &BeliefState, spec: &EnvSpec, level: Level) -> f64 {
    match level {
        Level::Flat => {
            let scope = spec.flat_scope();
            scope.max_path_value(&b.scope_means(spec, scope))
        }
        Level::High => (0..spec.goals().len()).map(|gi| high_value(b, spec, gi)).fold(f64::NEG_INFINITY, f64::max),
        Level::Low(g) => goal_route_value(b, spec, spec.goal_index(g).expect("goal")),
    }
}

pub fn available_computations(b: &BeliefState, spec: &EnvSpec) -> Vec<Computation> {
    let mut out = Vec::new();
    match b.phase {
        Phase::Flat => {
            out.extend(spec.non_root().filter(|&n| !b.is_observed(n)).map(Computation::InspectNode));
            out.push(Computation::TerminateFlat);
        }
        Phase::GoalSetting => {
            out.extend(spec.goals().iter().copied().filter(|&g| !b.is_observed(g)).map(Computation::InspectGoal));
            out.push(Computation::TerminateHigh);
        }
        Phase::GoalAchievement(g) => {
            let gi = spec.goal_index(g).expect("goal");
            out.extend(
                spec.goal_sets()[gi]
                    .members
                    .iter()
                    .copied()
                    .filter(|&n| !b.is_observed(n))
                    .map(Computation::InspectNode),
            );
            out.push(Computation::TerminateLow);
        }
        Phase::Done => {}
    }
    out
}

/// Path with the highest expected sum, lexicographically first on ties.
pub fn best_path(b: &BeliefState, spec: &EnvSpec, restrict_goal: Option<NodeId>) -> Vec<NodeId> {
    let scope = match restrict_goal {
        Some(g) => spec.goal_scope(spec.goal_index(g).expect("goal")),
        None => spec.flat_scope(),
    };
    let means = b.scope_means(spec, scope);
    let (path, _) = scope.best_path_by(|l| means[l]);
    path.iter().map(|&l| scope.global(l)).collect()
}

pub fn rr_score(path_return: f64, clicks: usize, lambda: f64) -> f64 {
    path_return - lambda * clicks as f64
}

/// A computation-selection strategy.
pub trait Policy {
    /// Phase the episode starts in.
    fn start_phase(&self) -> Phase;

    fn decide(&mut self, b: &BeliefState, spec: &EnvSpec) -> Result<Decision>;

    /// Called before every episode.
    fn reset(&mut self, _episode_seed: u64) {}
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revealed: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub computations: Vec<TraceStep>,
    pub path: Vec<NodeId>,
    pub path_return: f64,
    pub clicks: usize,
    pub rr: f64,
    pub switches: usize,
}

impl Trace {
    /// Inspected nodes in order.
    pub fn clicked(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.computations.iter().filter(|s| s.revealed.is_some()).filter_map(|s| s.node)
    }
}

/// Upper bound on decisions per episode, well above what any legal policy
/// needs; exceeding it means the policy is looping.
fn decision_limit(spec: &EnvSpec) -> usize {
    4 * (spec.node_count() + 2 * spec.goals().len() + 4)
}

/// Runs one episode of `policy` against `truth`.
pub fn rollout<P: Policy + ?Sized>(policy: &mut P, spec: &EnvSpec, truth: &RewardAssignment) -> Result<Trace> {
    let b = init_belief(spec, policy.start_phase());
    rollout_from(policy, spec, truth, b)
}

/// Runs `policy` from belief `b` until it terminates. Clicks already in
/// `b` count toward the score.
pub fn rollout_from<P: Policy + ?Sized>(
    policy: &mut P,
    spec: &EnvSpec,
    truth: &RewardAssignment,
    mut b: BeliefState,
) -> Result<Trace> {
    let mut steps = Vec::new();
    let mut switches = 0;
    let mut final_goal = None;
    for _ in 0..decision_limit(spec) {
        let d = policy.decide(&b, spec)?;
        let next = b.apply(spec, d, truth).map_err(|e| match e {
            Error::AlreadyObserved(n) => Error::IllegalComputation(format!("node {n} inspected twice")),
            other => other,
        })?;
        match d {
            Decision::Switch => {
                switches += 1;
                steps.push(TraceStep { kind: "switch".into(), node: None, revealed: None });
            }
            Decision::Compute(c) => {
                let node = match c {
                    Computation::TerminateHigh => next.current_goal(),
                    _ => c.node(),
                };
                let revealed = c.node().map(|n| truth.value(n));
                steps.push(TraceStep { kind: c.kind().into(), node, revealed });
                if c == Computation::TerminateLow {
                    final_goal = b.current_goal();
                }
            }
        }
        b = next;
        if b.phase == Phase::Done {
            let path = best_path(&b, spec, final_goal);
            let path_return = truth.path_return(&path);
            let clicks = b.clicks();
            return Ok(Trace {
                computations: steps,
                path,
                path_return,
                clicks,
                rr: rr_score(path_return, clicks, spec.click_cost()),
                switches,
            });
        }
    }
    Err(Error::IllegalComputation("policy did not terminate".into()))
}
