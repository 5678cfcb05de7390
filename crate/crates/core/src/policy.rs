//! Computation-selection policies: flat and hierarchical BMPS, greedy
//! myopic VOC, random, and the search baselines via [`crate::search`].

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::belief::{
    available_computations, commit_goal, goal_route_value, init_belief, prior_route_cost, BeliefState, Computation,
    Decision, Level, Phase, Policy,
};
use crate::env::{EnvSpec, NodeId, RewardAssignment};
use crate::error::{Error, Result};
use crate::features::{argmax_voc, shared_cache, Evaluator, FeatureConfig, FlatCostMode, SharedCache, WeightVector};
use crate::search::{SearchConfig, SearchPolicy};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    FlatBmps { weights: WeightVector },
    HierBmps { high: WeightVector, low: WeightVector, switching: bool },
    GreedyMyopic { hierarchical: bool },
    Random { seed: u64 },
    Search(SearchConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    #[serde(flatten)]
    pub kind: PolicyKind,
    #[serde(default)]
    pub features: FeatureConfig,
}

impl PolicyConfig {
    pub fn new(kind: PolicyKind) -> Self {
        Self { kind, features: FeatureConfig::default() }
    }

    pub fn flat(weights: WeightVector) -> Self {
        Self::new(PolicyKind::FlatBmps { weights })
    }

    pub fn hier(high: WeightVector, low: WeightVector, switching: bool) -> Self {
        Self::new(PolicyKind::HierBmps { high, low, switching })
    }

    pub fn with_switching(&self, on: bool) -> Self {
        let mut out = self.clone();
        if let PolicyKind::HierBmps { switching, .. } = &mut out.kind {
            *switching = on;
        }
        out
    }

    /// Short label used in reports.
    pub fn label(&self) -> String {
        match &self.kind {
            PolicyKind::FlatBmps { .. } => "flat_bmps".into(),
            PolicyKind::HierBmps { switching: true, .. } => "hier_bmps_switching".into(),
            PolicyKind::HierBmps { switching: false, .. } => "hier_bmps".into(),
            PolicyKind::GreedyMyopic { hierarchical: false } => "greedy_flat".into(),
            PolicyKind::GreedyMyopic { hierarchical: true } => "greedy_hier".into(),
            PolicyKind::Random { .. } => "random".into(),
            PolicyKind::Search(s) => s.kind.label().into(),
        }
    }

    pub fn is_hierarchical(&self) -> bool {
        matches!(self.kind, PolicyKind::HierBmps { .. } | PolicyKind::GreedyMyopic { hierarchical: true })
    }

    pub fn validate(&self, spec: &EnvSpec) -> Result<()> {
        match &self.kind {
            PolicyKind::FlatBmps { weights } => check_level(weights, crate::features::WeightLevel::Flat, spec),
            PolicyKind::HierBmps { high, low, .. } => {
                if !spec.is_hierarchical() {
                    return Err(Error::InvalidEnv(vec![format!("{} is not hierarchical-compatible", spec.name())]));
                }
                check_level(high, crate::features::WeightLevel::High, spec)?;
                check_level(low, crate::features::WeightLevel::Low, spec)
            }
            PolicyKind::GreedyMyopic { hierarchical: true } if !spec.is_hierarchical() => {
                Err(Error::InvalidEnv(vec![format!("{} is not hierarchical-compatible", spec.name())]))
            }
            PolicyKind::Search(s) if s.aspiration.is_nan() => {
                Err(Error::OutOfRange("aspiration must not be NaN".into()))
            }
            _ => Ok(()),
        }
    }
}

fn check_level(w: &WeightVector, level: crate::features::WeightLevel, spec: &EnvSpec) -> Result<()> {
    if w.level != level {
        return Err(Error::InvalidWeights(format!("expected {level:?} weights, got {:?}", w.level)));
    }
    w.validate(spec)
}

/// Snapshot of the metacontroller's comparison.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwitchState {
    pub current_goal: NodeId,
    /// Expected return of the best route to the current goal.
    pub committed_value: f64,
    /// Best expected route return among the other goals.
    pub best_alternative: f64,
}

pub fn switch_state(b: &BeliefState, spec: &EnvSpec, goal: NodeId) -> SwitchState {
    let gi = spec.goal_index(goal).expect("goal");
    let best_alternative = (0..spec.goals().len())
        .filter(|&g| g != gi)
        .map(|g| goal_route_value(b, spec, g))
        .fold(f64::NEG_INFINITY, f64::max);
    SwitchState { current_goal: goal, committed_value: goal_route_value(b, spec, gi), best_alternative }
}

/// Maximum number of times one goal may be committed to in an episode.
pub const MAX_COMMITS: u8 = 2;

pub struct FlatBmps {
    weights: WeightVector,
    config: FeatureConfig,
    cache: SharedCache,
    deadline: Option<Instant>,
}

impl FlatBmps {
    pub fn new(weights: WeightVector, config: FeatureConfig, cache: SharedCache) -> Self {
        Self { weights, config, cache, deadline: None }
    }
}

impl Policy for FlatBmps {
    fn start_phase(&self) -> Phase {
        Phase::Flat
    }

    fn decide(&mut self, b: &BeliefState, spec: &EnvSpec) -> Result<Decision> {
        select_flat(b, spec, &self.weights, self.config, &self.cache, self.deadline)
    }
}

/// Best flat computation under `w`: the top inspection if its approximate
/// VOC is positive, otherwise termination.
pub fn select_flat(
    b: &BeliefState,
    spec: &EnvSpec,
    w: &WeightVector,
    config: FeatureConfig,
    cache: &SharedCache,
    deadline: Option<Instant>,
) -> Result<Decision> {
    let cands = available_computations(b, spec);
    let mut guard = cache.lock().unwrap();
    let mut ev = Evaluator::new(spec, b, Level::Flat, None, config, &mut guard);
    ev.deadline = deadline;
    let c = argmax_voc(&mut ev, &cands, w)?.unwrap_or(Computation::TerminateFlat);
    Ok(Decision::Compute(c))
}

pub struct HierBmps {
    high: WeightVector,
    low: WeightVector,
    switching: bool,
    config: FeatureConfig,
    cache: SharedCache,
    deadline: Option<Instant>,
}

impl HierBmps {
    pub fn new(
        high: WeightVector,
        low: WeightVector,
        switching: bool,
        config: FeatureConfig,
        cache: SharedCache,
    ) -> Self {
        Self { high, low, switching, config, cache, deadline: None }
    }
}

impl Policy for HierBmps {
    fn start_phase(&self) -> Phase {
        Phase::GoalSetting
    }

    fn decide(&mut self, b: &BeliefState, spec: &EnvSpec) -> Result<Decision> {
        select_hier(b, spec, &self.high, &self.low, self.switching, self.config, &self.cache, self.deadline)
    }
}

/// Hierarchical selection with the goal-switching metacontroller.
#[allow(clippy::too_many_arguments)]
pub fn select_hier(
    b: &BeliefState,
    spec: &EnvSpec,
    high: &WeightVector,
    low: &WeightVector,
    switching: bool,
    config: FeatureConfig,
    cache: &SharedCache,
    deadline: Option<Instant>,
) -> Result<Decision> {
    let cands = available_computations(b, spec);
    let mut guard = cache.lock().unwrap();
    match b.phase() {
        Phase::GoalSetting => {
            let mut ev = Evaluator::new(spec, b, Level::High, None, config, &mut guard);
            let c = argmax_voc(&mut ev, &cands, high)?.unwrap_or(Computation::TerminateHigh);
            Ok(Decision::Compute(c))
        }
        Phase::GoalAchievement(g) => {
            let state = switch_state(b, spec, g);
            let mut floor = None;
            if switching && spec.goals().len() > 1 {
                if state.committed_value < state.best_alternative {
                    let gi = spec.goal_index(g).expect("goal");
                    if b.commits(gi) >= MAX_COMMITS {
                        return Ok(Decision::Compute(Computation::TerminateLow));
                    }
                    return Ok(Decision::Switch);
                }
                floor = Some(state.best_alternative);
            }
            let mut ev = Evaluator::new(spec, b, Level::Low(g), floor, config, &mut guard);
            ev.deadline = deadline;
            let c = argmax_voc(&mut ev, &cands, low)?.unwrap_or(Computation::TerminateLow);
            Ok(Decision::Compute(c))
        }
        other => Err(Error::IllegalComputation(format!("hierarchical policy in phase {other:?}"))),
    }
}

/// Goal-setting episode alone: runs high-level selection to commitment
/// and scores the committed goal's true value plus its prior route value,
/// net of goal inspection costs.
pub fn goal_setting_score(
    high: &WeightVector,
    spec: &EnvSpec,
    truth: &RewardAssignment,
    config: FeatureConfig,
    cache: &SharedCache,
) -> Result<f64> {
    let mut b = init_belief(spec, Phase::GoalSetting);
    loop {
        let cands = available_computations(&b, spec);
        let c = {
            let mut guard = cache.lock().unwrap();
            let mut ev = Evaluator::new(spec, &b, Level::High, None, config, &mut guard);
            argmax_voc(&mut ev, &cands, high)?.unwrap_or(Computation::TerminateHigh)
        };
        if c == Computation::TerminateHigh {
            let g = commit_goal(&b, spec);
            let gi = spec.goal_index(g).expect("goal");
            return Ok(truth.value(g) + prior_route_cost(spec, gi) - spec.click_cost() * b.clicks() as f64);
        }
        b = crate::belief::observe(&b, spec, c, truth)?;
    }
}

/// Weights under which BMPS reduces to greedy myopic VOC.
pub fn greedy_weights() -> (WeightVector, WeightVector, WeightVector) {
    (
        WeightVector::flat([1.0, 0.0, 0.0, 1.0]),
        WeightVector::high([1.0, 0.0, 1.0]),
        WeightVector::low([1.0, 0.0, 0.0, 1.0]),
    )
}

pub struct RandomPolicy {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        Self { seed, rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl Policy for RandomPolicy {
    fn start_phase(&self) -> Phase {
        Phase::Flat
    }

    fn decide(&mut self, b: &BeliefState, spec: &EnvSpec) -> Result<Decision> {
        let cands = available_computations(b, spec);
        Ok(Decision::Compute(cands[self.rng.gen_range(0..cands.len())]))
    }

    fn reset(&mut self, episode_seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(self.seed ^ episode_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    }
}

/// Instantiates a policy. Policies built with the same `cache` share
/// feature values computed on earlier beliefs.
pub fn make_policy(
    config: &PolicyConfig,
    spec: &EnvSpec,
    cache: Option<SharedCache>,
) -> Result<Box<dyn Policy + Send>> {
    make_policy_until(config, spec, cache, None)
}

/// As [`make_policy`], but BMPS feature computations past `deadline` fail
/// with `BudgetExceeded`.
pub fn make_policy_until(
    config: &PolicyConfig,
    spec: &EnvSpec,
    cache: Option<SharedCache>,
    deadline: Option<Instant>,
) -> Result<Box<dyn Policy + Send>> {
    config.validate(spec)?;
    let cache = cache.unwrap_or_else(shared_cache);
    let fc = config.features;
    Ok(match &config.kind {
        PolicyKind::FlatBmps { weights } => {
            Box::new(FlatBmps { deadline, ..FlatBmps::new(weights.clone(), fc, cache) })
        }
        PolicyKind::HierBmps { high, low, switching } => {
            Box::new(HierBmps { deadline, ..HierBmps::new(high.clone(), low.clone(), *switching, fc, cache) })
        }
        PolicyKind::GreedyMyopic { hierarchical } => {
            let (flat, high, low) = greedy_weights();
            let fc = FeatureConfig { flat_cost_mode: FlatCostMode::Plain, ..fc };
            if *hierarchical {
                Box::new(HierBmps::new(high, low, false, fc, cache))
            } else {
                Box::new(FlatBmps::new(flat, fc, cache))
            }
        }
        PolicyKind::Random { seed } => Box::new(RandomPolicy::new(*seed)),
        PolicyKind::Search(s) => Box::new(SearchPolicy::new(*s)),
    })
}
