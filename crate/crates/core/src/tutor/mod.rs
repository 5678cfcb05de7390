//! Tutoring sessions: trials with hidden rewards, click feedback from the
//! exact oracle, and annotated strategy demonstrations. [`http`] serves
//! this over JSON.

pub mod http;

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::belief::{observe, rollout, rollout_from, BeliefState, Computation, Phase, Trace};
use crate::env::{derive_seed, load_env, sample_instance, EnvSpec, NodeId, RewardAssignment};
use crate::error::Error;
use crate::oracle::{optimal_feedback, solve_cached, solve_exact, FeedbackRecord, OracleSolution};
use crate::policy::{make_policy, PolicyConfig, PolicyKind};

pub const DEFAULT_TRIALS: usize = 10;
pub const MAX_TRIALS: usize = 1000;

#[derive(Debug, thiserror::Error)]
pub enum TutorError {
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("trial {index} out of range (session has {trials})")]
    TrialOutOfRange { index: usize, trials: usize },
    /// Request is well-formed but not allowed in the current trial state.
    #[error("{0}")]
    Rejected(String),
    #[error(transparent)]
    Core(#[from] Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type TutorResult<T> = std::result::Result<T, TutorError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Demo,
    Feedback,
    Practice,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    pub condition: Condition,
    pub env: String,
    pub seed: u64,
    #[serde(default)]
    pub trials: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub condition: Condition,
    pub env: String,
    pub seed: u64,
    pub trial_seeds: Vec<u64>,
    /// First trial without a submitted route.
    pub trial_index: usize,
    pub score: f64,
    pub created_at: u64,
}

/// Persisted session events, one JSON object per line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "lowercase")]
pub enum Event {
    Created { id: String, condition: Condition, env: String, seed: u64, trial_seeds: Vec<u64>, created_at: u64 },
    Click { trial: usize, node: NodeId, revealed: f64 },
    Route { trial: usize, path: Vec<NodeId>, path_return: f64, rr: f64 },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub clicks: Vec<(NodeId, f64)>,
    pub route: Option<Vec<NodeId>>,
    pub path_return: Option<f64>,
    pub rr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeView {
    pub id: NodeId,
    pub is_goal: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revealed: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rules {
    pub click_cost: f64,
    pub movement: String,
}

/// What a client may see of a trial. Unrevealed rewards never appear.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialView {
    pub session: String,
    pub condition: Condition,
    pub trial: usize,
    pub trials: usize,
    pub env: String,
    pub root: NodeId,
    pub nodes: Vec<NodeView>,
    pub edges: Vec<(NodeId, NodeId)>,
    pub goals: Vec<NodeId>,
    pub rules: Rules,
    pub clicks: usize,
    pub active: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub route: Option<Vec<NodeId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rr: Option<f64>,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClickResponse {
    pub node: NodeId,
    pub revealed: f64,
    pub clicks: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<FeedbackRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RouteResponse {
    pub path: Vec<NodeId>,
    pub path_return: f64,
    pub rr: f64,
    pub score: f64,
    /// Oracle verdict on stopping to plan, in the feedback condition.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<FeedbackRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Curriculum {
    GoalOnly,
    PathOnly,
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Annotation {
    GoalSetting,
    PathPlanning,
    /// The click after which control went back to goal setting.
    Switch,
    Move,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DemoStep {
    Click { node: NodeId, value: f64, annotation: Annotation },
    Move { node: NodeId, annotation: Annotation },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoTrace {
    pub env: String,
    pub seed: u64,
    pub curriculum: Curriculum,
    /// Goal picked by the first round of goal setting.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal: Option<NodeId>,
    pub steps: Vec<DemoStep>,
    pub score: f64,
    pub switches: usize,
}

struct SessionState {
    session: Session,
    spec: Arc<EnvSpec>,
    trials: Vec<TrialRecord>,
    log: Option<PathBuf>,
}

impl SessionState {
    fn truth(&self, trial: usize) -> RewardAssignment {
        sample_instance(&self.spec, self.session.trial_seeds[trial])
    }

    fn check_trial(&self, k: usize) -> TutorResult<()> {
        if k >= self.trials.len() {
            return Err(TutorError::TrialOutOfRange { index: k, trials: self.trials.len() });
        }
        Ok(())
    }

    fn belief(&self, k: usize) -> BeliefState {
        BeliefState::with_observations(&self.spec, Phase::Flat, &self.trials[k].clicks)
    }

    fn append(&self, e: &Event) -> TutorResult<()> {
        if let Some(path) = &self.log {
            let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
            writeln!(f, "{}", serde_json::to_string(e)?)?;
        }
        Ok(())
    }

    fn apply(&mut self, e: &Event) -> TutorResult<()> {
        match e {
            Event::Created { .. } => {}
            Event::Click { trial, node, revealed } => {
                self.check_trial(*trial)?;
                self.trials[*trial].clicks.push((*node, *revealed));
            }
            Event::Route { trial, path, path_return, rr } => {
                self.check_trial(*trial)?;
                let t = &mut self.trials[*trial];
                t.route = Some(path.clone());
                t.path_return = Some(*path_return);
                t.rr = Some(*rr);
                self.session.score += rr;
                self.session.trial_index =
                    self.trials.iter().position(|t| t.route.is_none()).unwrap_or(self.trials.len());
            }
        }
        Ok(())
    }

    fn view(&self, k: usize) -> TrialView {
        let t = &self.trials[k];
        let revealed: HashMap<NodeId, f64> = t.clicks.iter().copied().collect();
        let spec = &self.spec;
        TrialView {
            session: self.session.id.clone(),
            condition: self.session.condition,
            trial: k,
            trials: self.trials.len(),
            env: self.session.env.clone(),
            root: spec.root(),
            nodes: (0..spec.node_count())
                .map(|v| NodeView { id: v, is_goal: spec.is_goal(v), revealed: revealed.get(&v).copied() })
                .collect(),
            edges: spec.edges().to_vec(),
            goals: spec.goals().to_vec(),
            rules: Rules {
                click_cost: spec.click_cost(),
                movement: "move from the root along edges to a goal; no clicks once the route is submitted".into(),
            },
            clicks: t.clicks.len(),
            active: t.route.is_none() && k == self.session.trial_index,
            route: t.route.clone(),
            rr: t.rr,
            score: self.session.score,
        }
    }
}

/// All sessions, plus the environments and oracle solutions they use.
pub struct TutorService {
    data_dir: Option<PathBuf>,
    sessions: RwLock<HashMap<String, Arc<Mutex<SessionState>>>>,
    envs: Mutex<HashMap<String, Arc<EnvSpec>>>,
    oracles: Mutex<HashMap<String, Arc<OracleSolution>>>,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl TutorService {
    /// In-memory service; nothing is persisted.
    pub fn in_memory() -> Self {
        Self { data_dir: None, sessions: RwLock::default(), envs: Mutex::default(), oracles: Mutex::default() }
    }

    /// Service persisting to `dir`, reloading every session logged there.
    pub fn open(dir: &Path) -> TutorResult<Self> {
        std::fs::create_dir_all(dir.join("sessions"))?;
        let svc = Self { data_dir: Some(dir.to_path_buf()), ..Self::in_memory() };
        let mut entries: Vec<PathBuf> = std::fs::read_dir(dir.join("sessions"))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        entries.sort();
        for path in entries {
            svc.reload(&path)?;
        }
        Ok(svc)
    }

    /// Uses `TUTOR_DATA_DIR` when set, otherwise stays in memory.
    pub fn from_env() -> TutorResult<Self> {
        match std::env::var_os("TUTOR_DATA_DIR") {
            Some(dir) => Self::open(Path::new(&dir)),
            None => Ok(Self::in_memory()),
        }
    }

    fn reload(&self, path: &Path) -> TutorResult<()> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let Some(first) = lines.next() else { return Ok(()) };
        let Event::Created { id, condition, env, seed, trial_seeds, created_at } = serde_json::from_str(first)? else {
            return Err(TutorError::Rejected(format!("{} does not start with a created event", path.display())));
        };
        let spec = self.env(&env)?;
        let n = trial_seeds.len();
        let mut st = SessionState {
            session: Session {
                id: id.clone(),
                condition,
                env,
                seed,
                trial_seeds,
                trial_index: 0,
                score: 0.0,
                created_at,
            },
            spec,
            trials: vec![TrialRecord::default(); n],
            log: Some(path.to_path_buf()),
        };
        for line in lines {
            st.apply(&serde_json::from_str(line)?)?;
        }
        self.sessions.write().unwrap().insert(id, Arc::new(Mutex::new(st)));
        Ok(())
    }

    fn env(&self, selector: &str) -> TutorResult<Arc<EnvSpec>> {
        let mut envs = self.envs.lock().unwrap();
        if let Some(e) = envs.get(selector) {
            return Ok(e.clone());
        }
        let spec = Arc::new(load_env(selector)?);
        envs.insert(selector.to_string(), spec.clone());
        Ok(spec)
    }

    /// Oracle for `spec`, solved once and cached on disk when persistent.
    pub fn oracle(&self, spec: &EnvSpec) -> TutorResult<Arc<OracleSolution>> {
        let hash = spec.env_hash();
        if let Some(o) = self.oracles.lock().unwrap().get(&hash) {
            return Ok(o.clone());
        }
        let sol = match &self.data_dir {
            Some(dir) => solve_cached(spec, &dir.join(format!("oracle-{hash}.bin")))?,
            None => solve_exact(spec)?,
        };
        let sol = Arc::new(sol);
        self.oracles.lock().unwrap().insert(hash, sol.clone());
        Ok(sol)
    }

    fn session(&self, id: &str) -> TutorResult<Arc<Mutex<SessionState>>> {
        self.sessions.read().unwrap().get(id).cloned().ok_or_else(|| TutorError::UnknownSession(id.to_string()))
    }

    pub fn create_session(&self, req: &CreateSession) -> TutorResult<Session> {
        let spec = self.env(&req.env)?;
        let n = req.trials.unwrap_or(DEFAULT_TRIALS);
        if n == 0 || n > MAX_TRIALS {
            return Err(TutorError::Rejected(format!("trials must be in 1..={MAX_TRIALS}")));
        }
        if req.condition == Condition::Feedback {
            self.oracle(&spec)?;
        }
        let id = uuid::Uuid::new_v4().simple().to_string();
        let trial_seeds: Vec<u64> = (0..n as u64).map(|k| derive_seed(req.seed, k)).collect();
        let created_at = now();
        let log = self.data_dir.as_ref().map(|d| d.join("sessions").join(format!("{id}.jsonl")));
        let st = SessionState {
            session: Session {
                id: id.clone(),
                condition: req.condition,
                env: req.env.clone(),
                seed: req.seed,
                trial_seeds,
                trial_index: 0,
                score: 0.0,
                created_at,
            },
            spec,
            trials: vec![TrialRecord::default(); n],
            log,
        };
        st.append(&Event::Created {
            id: id.clone(),
            condition: req.condition,
            env: req.env.clone(),
            seed: req.seed,
            trial_seeds: st.session.trial_seeds.clone(),
            created_at,
        })?;
        let session = st.session.clone();
        self.sessions.write().unwrap().insert(id, Arc::new(Mutex::new(st)));
        Ok(session)
    }

    pub fn get_session(&self, id: &str) -> TutorResult<Session> {
        Ok(self.session(id)?.lock().unwrap().session.clone())
    }

    pub fn get_trial(&self, id: &str, k: usize) -> TutorResult<TrialView> {
        let s = self.session(id)?;
        let st = s.lock().unwrap();
        st.check_trial(k)?;
        Ok(st.view(k))
    }

    /// Persisted record of trial `k`, for replay checks.
    pub fn trial_record(&self, id: &str, k: usize) -> TutorResult<TrialRecord> {
        let s = self.session(id)?;
        let st = s.lock().unwrap();
        st.check_trial(k)?;
        Ok(st.trials[k].clone())
    }

    fn active(st: &SessionState, k: usize) -> TutorResult<()> {
        st.check_trial(k)?;
        if st.trials[k].route.is_some() {
            return Err(TutorError::Rejected(format!("trial {k} is finished; planning cannot resume after moving")));
        }
        if k != st.session.trial_index {
            return Err(TutorError::Rejected(format!(
                "trial {k} is not active; current trial is {}",
                st.session.trial_index
            )));
        }
        Ok(())
    }

    pub fn register_click(&self, id: &str, k: usize, node: NodeId) -> TutorResult<ClickResponse> {
        let s = self.session(id)?;
        let mut st = s.lock().unwrap();
        Self::active(&st, k)?;
        if node == st.spec.root() || node >= st.spec.node_count() {
            return Err(TutorError::Rejected(format!("node {node} cannot be inspected")));
        }
        if st.trials[k].clicks.iter().any(|&(n, _)| n == node) {
            return Err(TutorError::Rejected(format!("node {node} is already revealed")));
        }
        let b = st.belief(k);
        let feedback = match st.session.condition {
            Condition::Feedback => {
                Some(optimal_feedback(&b, Computation::InspectNode(node), &*self.oracle(&st.spec)?)?)
            }
            _ => None,
        };
        let revealed = st.truth(k).value(node);
        let e = Event::Click { trial: k, node, revealed };
        st.append(&e)?;
        st.apply(&e)?;
        Ok(ClickResponse { node, revealed, clicks: st.trials[k].clicks.len(), feedback })
    }

    pub fn submit_route(&self, id: &str, k: usize, path: &[NodeId]) -> TutorResult<RouteResponse> {
        let s = self.session(id)?;
        let mut st = s.lock().unwrap();
        Self::active(&st, k)?;
        st.spec.check_path(path)?;
        let feedback = match st.session.condition {
            Condition::Feedback => {
                Some(optimal_feedback(&st.belief(k), Computation::TerminateFlat, &*self.oracle(&st.spec)?)?)
            }
            _ => None,
        };
        let truth = st.truth(k);
        let path_return = truth.path_return(path);
        let rr = crate::belief::rr_score(path_return, st.trials[k].clicks.len(), st.spec.click_cost());
        let e = Event::Route { trial: k, path: path.to_vec(), path_return, rr };
        st.append(&e)?;
        st.apply(&e)?;
        Ok(RouteResponse { path: path.to_vec(), path_return, rr, score: st.session.score, feedback })
    }

    /// Recomputes a finished trial's rr from its recorded clicks and route.
    pub fn replay_trial(&self, id: &str, k: usize) -> TutorResult<f64> {
        let s = self.session(id)?;
        let st = s.lock().unwrap();
        st.check_trial(k)?;
        let t = &st.trials[k];
        let path = t.route.as_ref().ok_or_else(|| TutorError::Rejected(format!("trial {k} is not finished")))?;
        let truth = st.truth(k);
        let mut b = crate::belief::init_belief(&st.spec, Phase::Flat);
        for &(n, v) in &t.clicks {
            b = observe(&b, &st.spec, Computation::InspectNode(n), &truth)?;
            if b.observed(n) != Some(v) {
                return Err(TutorError::Rejected(format!("recorded value of node {n} differs from the instance")));
            }
        }
        Ok(crate::belief::rr_score(truth.path_return(path), b.clicks(), st.spec.click_cost()))
    }

    /// Ground truth of a trial. Never exposed over HTTP.
    pub fn trial_truth(&self, id: &str, k: usize) -> TutorResult<RewardAssignment> {
        let s = self.session(id)?;
        let st = s.lock().unwrap();
        st.check_trial(k)?;
        Ok(st.truth(k))
    }

    pub fn get_demo(&self, env: &str, policy: &str, seed: u64, step: Curriculum) -> TutorResult<DemoTrace> {
        let spec = self.env(env)?;
        let config = demo_policy(policy)?;
        demo(&spec, env, &config, seed, step)
    }
}

/// Demo policies: a saved `PolicyConfig` file, or one of the untrained
/// policies by name.
pub fn demo_policy(policy: &str) -> TutorResult<PolicyConfig> {
    Ok(match policy {
        "greedy_hier" => PolicyConfig::new(PolicyKind::GreedyMyopic { hierarchical: true }),
        "greedy_flat" => PolicyConfig::new(PolicyKind::GreedyMyopic { hierarchical: false }),
        "random" => PolicyConfig::new(PolicyKind::Random { seed: 0 }),
        path if Path::new(path).is_file() => serde_json::from_str(&std::fs::read_to_string(path)?)?,
        other => return Err(Error::UnknownPolicy(other.to_string()).into()),
    })
}

fn annotate(trace: &Trace) -> Vec<DemoStep> {
    let hierarchical = trace.computations.iter().any(|c| c.kind == "terminate_high");
    let mut phase = if hierarchical { Annotation::GoalSetting } else { Annotation::PathPlanning };
    let mut steps = Vec::new();
    let mut pending_switch = false;
    for s in &trace.computations {
        match s.kind.as_str() {
            "switch" => {
                // The click that triggered the switch carries the mark; with
                // no such click the next step does.
                match steps.last_mut() {
                    Some(DemoStep::Click { annotation, .. }) if *annotation == Annotation::PathPlanning => {
                        *annotation = Annotation::Switch;
                    }
                    _ => pending_switch = true,
                }
                phase = Annotation::GoalSetting;
            }
            "terminate_high" => phase = Annotation::PathPlanning,
            _ => {
                if let (Some(node), Some(value)) = (s.node, s.revealed) {
                    let annotation = if std::mem::take(&mut pending_switch) { Annotation::Switch } else { phase };
                    steps.push(DemoStep::Click { node, value, annotation });
                }
            }
        }
    }
    for &node in &trace.path {
        let annotation = if std::mem::take(&mut pending_switch) { Annotation::Switch } else { Annotation::Move };
        steps.push(DemoStep::Move { node, annotation });
    }
    steps
}

fn goal_setting_value(spec: &EnvSpec, truth: &RewardAssignment, goal: NodeId, clicks: usize) -> f64 {
    let gi = spec.goal_index(goal).expect("goal");
    truth.value(goal) + crate::belief::prior_route_cost(spec, gi) - spec.click_cost() * clicks as f64
}

/// Rolls out `config` on instance `seed` and cuts the trace to the
/// curriculum step.
pub fn demo(spec: &EnvSpec, env: &str, config: &PolicyConfig, seed: u64, step: Curriculum) -> TutorResult<DemoTrace> {
    if step != Curriculum::Full && !config.is_hierarchical() {
        return Err(TutorError::Rejected(format!("{step:?} demos need a hierarchical policy")));
    }
    let truth = sample_instance(spec, seed);
    let mut policy = make_policy(config, spec, None)?;
    policy.reset(seed);
    let full = rollout(policy.as_mut(), spec, &truth)?;
    let committed = full.computations.iter().find(|c| c.kind == "terminate_high").and_then(|c| c.node);
    let (trace, score) = match step {
        Curriculum::Full => {
            let rr = full.rr;
            (full, rr)
        }
        Curriculum::GoalOnly => {
            let end =
                full.computations.iter().position(|c| c.kind == "terminate_high").expect("hierarchical trace commits");
            let mut t = full;
            t.computations.truncate(end + 1);
            t.path.clear();
            t.switches = 0;
            let clicks = t.clicked().count();
            (t, goal_setting_value(spec, &truth, committed.expect("goal"), clicks))
        }
        Curriculum::PathOnly => {
            let goal = committed.expect("hierarchical trace commits");
            let mut policy = make_policy(config, spec, None)?;
            policy.reset(seed);
            let t = rollout_from(policy.as_mut(), spec, &truth, BeliefState::committed(spec, goal)?)?;
            let rr = t.rr;
            (t, rr)
        }
    };
    let steps = annotate(&trace);
    Ok(DemoTrace {
        env: env.to_string(),
        seed,
        curriculum: step,
        goal: committed,
        steps,
        score,
        switches: trace.switches,
    })
}

/// Score of a demo recomputed from its steps alone: replays the clicks on
/// the instance and walks the moves.
pub fn replay_demo(spec: &EnvSpec, demo: &DemoTrace) -> crate::error::Result<f64> {
    let truth = sample_instance(spec, demo.seed);
    let mut b = crate::belief::init_belief(spec, Phase::Flat);
    let mut path = Vec::new();
    for s in &demo.steps {
        match s {
            DemoStep::Click { node, value, .. } => {
                b = observe(&b, spec, Computation::InspectNode(*node), &truth)?;
                if b.observed(*node) != Some(*value) {
                    return Err(Error::Session(format!("demo value of node {node} differs from the instance")));
                }
            }
            DemoStep::Move { node, .. } => path.push(*node),
        }
    }
    if demo.curriculum == Curriculum::GoalOnly {
        let goal = demo.goal.ok_or_else(|| Error::Session("goal-only demo without a goal".into()))?;
        return Ok(goal_setting_value(spec, &truth, goal, b.clicks()));
    }
    spec.check_path(&path)?;
    Ok(crate::belief::rr_score(truth.path_return(&path), b.clicks(), spec.click_cost()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::Dist;
    use crate::env::{gen_high_risk, gen_increasing_variance};
    use crate::policy::greedy_weights;

    fn odd_env(dir: &Path) -> String {
        let d = |v: &[f64]| Some(Dist::uniform(v).unwrap());
        let spec = EnvSpec::new(
            "odd",
            5,
            0,
            vec![(0, 1), (0, 2), (1, 3), (2, 4)],
            vec![None, d(&[-3.137, 4.271]), d(&[-1.913, 6.557]), d(&[-17.731, 23.889]), d(&[-12.347, 19.613])],
            vec![3, 4],
            0.75,
        )
        .unwrap();
        let path = dir.join("odd.json");
        spec.save(&path).unwrap();
        path.to_string_lossy().into_owned()
    }

    fn practice(svc: &TutorService, env: &str, seed: u64) -> Session {
        svc.create_session(&CreateSession { condition: Condition::Practice, env: env.into(), seed, trials: Some(4) })
            .unwrap()
    }

    #[test]
    fn trial_views_hide_unrevealed_values() {
        let dir = tempfile::tempdir().unwrap();
        let env = odd_env(dir.path());
        let svc = TutorService::in_memory();
        let s = practice(&svc, &env, 5);
        let spec = load_env(&env).unwrap();
        let secret: Vec<String> = spec
            .non_root()
            .flat_map(|v| spec.prior(v).unwrap().support().to_vec())
            .flat_map(|x| [format!("{x}"), format!("{}", x.abs())])
            .collect();
        let leaked = |view: &TrialView, except: &[f64]| {
            let text = serde_json::to_string(view).unwrap();
            secret
                .iter()
                .filter(|s| !except.iter().any(|e| format!("{e}") == **s || format!("{}", e.abs()) == **s))
                .any(|s| text.contains(s.as_str()))
        };
        assert!(!leaked(&svc.get_trial(&s.id, 0).unwrap(), &[]));
        let r = svc.register_click(&s.id, 0, 3).unwrap();
        let view = svc.get_trial(&s.id, 0).unwrap();
        assert!(!leaked(&view, &[r.revealed]));
        assert!(serde_json::to_string(&view).unwrap().contains(&format!("{}", r.revealed)));
        assert_eq!(view.nodes[3].revealed, Some(r.revealed));
        assert!(view.nodes.iter().filter(|n| n.id != 3).all(|n| n.revealed.is_none()));
    }

    #[test]
    fn sessions_are_deterministic_in_their_seed() {
        let svc = TutorService::in_memory();
        let (a, b, c) = (
            practice(&svc, "builtin:highrisk", 9),
            practice(&svc, "builtin:highrisk", 9),
            practice(&svc, "builtin:highrisk", 10),
        );
        assert_ne!(a.id, b.id);
        assert_eq!(a.trial_seeds, b.trial_seeds);
        for k in 0..4 {
            assert_eq!(svc.trial_truth(&a.id, k).unwrap(), svc.trial_truth(&b.id, k).unwrap());
        }
        assert_ne!(svc.trial_truth(&a.id, 0).unwrap(), svc.trial_truth(&c.id, 0).unwrap());
    }

    #[test]
    fn trial_rules_are_enforced() {
        let svc = TutorService::in_memory();
        let s = practice(&svc, "builtin:increasing2", 1);
        assert!(matches!(svc.register_click("nope", 0, 1), Err(TutorError::UnknownSession(_))));
        assert!(matches!(svc.get_trial(&s.id, 4), Err(TutorError::TrialOutOfRange { .. })));
        assert!(matches!(svc.register_click(&s.id, 1, 1), Err(TutorError::Rejected(_))));
        assert!(matches!(svc.register_click(&s.id, 0, 0), Err(TutorError::Rejected(_))));
        svc.register_click(&s.id, 0, 18).unwrap();
        assert!(matches!(svc.register_click(&s.id, 0, 18), Err(TutorError::Rejected(_))));
        assert!(matches!(svc.submit_route(&s.id, 0, &[18]), Err(TutorError::Core(Error::InvalidPath(_)))));
        let spec = load_env("builtin:increasing2").unwrap();
        let path = crate::env::enumerate_paths(&spec, Some(18)).remove(0);
        let r = svc.submit_route(&s.id, 0, &path).unwrap();
        assert!(matches!(svc.register_click(&s.id, 0, 1), Err(TutorError::Rejected(_))));
        assert!(matches!(svc.submit_route(&s.id, 0, &path), Err(TutorError::Rejected(_))));
        assert_eq!(svc.replay_trial(&s.id, 0).unwrap(), r.rr);
        let truth = svc.trial_truth(&s.id, 0).unwrap();
        assert_eq!(r.rr, truth.path_return(&path) - spec.click_cost());
        assert_eq!(svc.get_session(&s.id).unwrap().trial_index, 1);
        assert!(svc.get_trial(&s.id, 1).unwrap().active);
    }

    #[test]
    fn feedback_grades_clicks_against_the_oracle() {
        let svc = TutorService::in_memory();
        let s = svc
            .create_session(&CreateSession {
                condition: Condition::Feedback,
                env: "builtin:toy".into(),
                seed: 2,
                trials: Some(2),
            })
            .unwrap();
        let r = svc.register_click(&s.id, 0, 1).unwrap();
        let fb = r.feedback.unwrap();
        assert!(fb.is_optimal);
        assert_eq!((fb.regret, fb.penalty_ms), (0.0, 0));
        let stop = svc.submit_route(&s.id, 0, &[if r.revealed > 0.0 { 1 } else { 2 }]).unwrap();
        // With one goal seen, inspecting the other costs 1 and cannot change
        // the expected route value, so stopping is optimal either way.
        assert!(stop.feedback.unwrap().is_optimal);
        let fb = svc.submit_route(&s.id, 1, &[1]).unwrap().feedback.unwrap();
        assert!(!fb.is_optimal);
        assert!((fb.regret - 24.0).abs() < 1e-9, "{fb:?}");
        assert_eq!(fb.penalty_ms, 12_000);
        assert_eq!(fb.penalty_ms, (500.0 * fb.regret).round() as u64);
        assert!(matches!(
            svc.create_session(&CreateSession {
                condition: Condition::Feedback,
                env: "builtin:increasing5".into(),
                seed: 0,
                trials: None
            }),
            Err(TutorError::Core(Error::BeliefSpaceTooLarge { .. }))
        ));
    }

    #[test]
    fn sessions_survive_a_restart() {
        let dir = tempfile::tempdir().unwrap();
        let id = {
            let svc = TutorService::open(dir.path()).unwrap();
            let s = practice(&svc, "builtin:highrisk", 3);
            svc.register_click(&s.id, 0, 15).unwrap();
            let path = crate::env::enumerate_paths(&gen_high_risk(), Some(15)).remove(0);
            svc.submit_route(&s.id, 0, &path).unwrap();
            svc.register_click(&s.id, 1, 30).unwrap();
            s.id
        };
        let before = TutorService::open(dir.path()).unwrap();
        let s = before.get_session(&id).unwrap();
        assert_eq!(s.trial_index, 1);
        assert_eq!(before.trial_record(&id, 0).unwrap().clicks.len(), 1);
        assert_eq!(before.trial_record(&id, 1).unwrap().clicks[0].0, 30);
        assert_eq!(s.score, before.trial_record(&id, 0).unwrap().rr.unwrap());
        assert!(matches!(before.register_click(&id, 1, 30), Err(TutorError::Rejected(_))));
    }

    #[test]
    fn demos_replay_to_their_score() {
        let spec = gen_increasing_variance(2).unwrap();
        let cfg = demo_policy("greedy_hier").unwrap();
        for seed in 0..6 {
            for step in [Curriculum::GoalOnly, Curriculum::PathOnly, Curriculum::Full] {
                let d = demo(&spec, "builtin:increasing2", &cfg, seed, step).unwrap();
                assert!((replay_demo(&spec, &d).unwrap() - d.score).abs() < 1e-9, "{step:?} {seed}");
                let goal_clicks = d
                    .steps
                    .iter()
                    .filter(|s| matches!(s, DemoStep::Click { annotation: Annotation::GoalSetting, .. }))
                    .count();
                match step {
                    Curriculum::GoalOnly => {
                        assert!(d
                            .steps
                            .iter()
                            .all(|s| matches!(s, DemoStep::Click { annotation: Annotation::GoalSetting, .. })));
                    }
                    Curriculum::PathOnly => assert_eq!(goal_clicks, 0),
                    Curriculum::Full => {}
                }
            }
        }
        let flat = demo(&spec, "x", &demo_policy("greedy_flat").unwrap(), 0, Curriculum::Full).unwrap();
        assert!(flat.steps.iter().all(|s| !matches!(s, DemoStep::Click { annotation: Annotation::GoalSetting, .. })));
        assert!(demo(&spec, "x", &demo_policy("greedy_flat").unwrap(), 0, Curriculum::GoalOnly).is_err());
        assert!(matches!(demo_policy("nonsense"), Err(TutorError::Core(Error::UnknownPolicy(_)))));
    }

    #[test]
    fn switches_are_annotated() {
        let spec = gen_high_risk();
        let (_, high, low) = greedy_weights();
        let cfg = PolicyConfig::hier(high, low, true);
        let mut seen = 0;
        for seed in 0..200 {
            let d = demo(&spec, "builtin:highrisk", &cfg, seed, Curriculum::Full).unwrap();
            let marks = d
                .steps
                .iter()
                .filter(|s| {
                    matches!(
                        s,
                        DemoStep::Click { annotation: Annotation::Switch, .. }
                            | DemoStep::Move { annotation: Annotation::Switch, .. }
                    )
                })
                .count();
            assert_eq!(marks > 0, d.switches > 0, "seed {seed}");
            assert!((replay_demo(&spec, &d).unwrap() - d.score).abs() < 1e-9);
            seen += d.switches;
        }
        assert!(seen > 0);
    }
}
