//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.
//!
//! Runs with `harness = false` so the lines are always visible.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use metaplan::belief::{init_belief, termination_value, BeliefState, Computation, Level, Phase};
use metaplan::bench::{run_benchmark, time_evaluation, BenchOptions, BenchRun};
use metaplan::contraction::{
    flat_local, max_path_dist, naive_max_path_dist, path_enumeration_combinations, path_enumeration_dist,
};
use metaplan::dist::Dist;
use metaplan::env::{
    enumerate_paths, gen_branching, gen_feedback_tree, gen_high_risk, gen_increasing_variance, gen_random_small,
    sample_instance, tiny_fixtures, EnvSpec, NodeId,
};
use metaplan::features::{voi1, vpi, vpi_sub, Backend, FeatureConfig};
use metaplan::optimizer::{train_bmps, TrainMode, TrainSpec};
use metaplan::oracle::{exact_expected_rr, optimal_feedback, solve_exact};
use metaplan::policy::make_policy;
use metaplan::tutor::{demo, demo_policy, replay_demo, Condition, CreateSession, Curriculum, TutorService};

const ATOM_TOL: f64 = 1e-9;
const FEATURE_TOL: f64 = 1e-9;
const ORACLE_RATIO: f64 = 0.95;
const HIGH_RISK_SWITCHING_BAND: (f64, f64) = (35.0, 65.0);
const HIGH_RISK_FLAT_BAND: (f64, f64) = (20.0, 55.0);
const SWITCHING_REL_GAP: f64 = 0.02;
const HIER_FLAT_REL_GAP: f64 = 0.10;
const HIER_REFERENCE_MEAN: f64 = 108.79;
const HIER_REFERENCE_BAND: f64 = 0.15;
const ORDERING_MIN_SE: f64 = 3.0;
const TIMING_RATIO: f64 = 2.0;
const AVOID_RATE: f64 = 0.95;
const EPISODES_LONG: usize = 5000;
const FLAT_TIMING_BUDGET: Duration = Duration::from_secs(20);

type Outcome = Result<(bool, String), Box<dyn std::error::Error>>;

struct Suite {
    results: Vec<(String, bool)>,
}

impl Suite {
    fn check(&mut self, name: &str, f: impl FnOnce() -> Outcome) {
        let t = Instant::now();
        let (ok, detail) = match f() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        println!("{} {name}: {detail} ({:.1}s)", if ok { "PASS" } else { "FAIL" }, t.elapsed().as_secs_f64());
        self.results.push((name.to_string(), ok));
    }
}

fn note(name: &str, detail: &str) {
    println!("NOTE {name}: {detail}");
}

fn path_sum(path: &[NodeId], values: &[f64]) -> f64 {
    path.iter().map(|&v| values[v]).sum()
}

/// Joint enumeration over `random` nodes, calling `f` with the value vector
/// and its probability.
fn enumerate_joint(base: &[f64], random: &[(NodeId, Dist)], mut f: impl FnMut(&[f64], f64)) {
    let mut values = base.to_vec();
    let mut digits = vec![0usize; random.len()];
    for (n, d) in random {
        values[*n] = d.support()[0];
    }
    loop {
        let p: f64 = random.iter().zip(&digits).map(|((_, d), &i)| d.probs()[i]).product();
        f(&values, p);
        let mut pos = 0;
        loop {
            if pos == random.len() {
                return;
            }
            digits[pos] += 1;
            let (n, d) = &random[pos];
            if digits[pos] < d.len() {
                values[*n] = d.support()[digits[pos]];
                break;
            }
            digits[pos] = 0;
            values[*n] = d.support()[0];
            pos += 1;
        }
    }
}

fn contraction_criterion() -> Outcome {
    let mut worst = 0.0f64;
    let mut failures = 0;
    for seed in 0..200u64 {
        let spec = gen_random_small(12, 4, 1000 + seed)?;
        let dists: Vec<Dist> = (0..spec.node_count()).map(|v| spec.prior_or_zero(v)).collect();
        let fast = max_path_dist(spec.flat_scope(), &flat_local(&spec, &dists))?;
        let naive = naive_max_path_dist(&spec, &dists)?;
        // Independent enumeration over the paths of the environment.
        let paths = enumerate_paths(&spec, None);
        let random: Vec<(NodeId, Dist)> = spec.non_root().map(|v| (v, dists[v].clone())).collect();
        let mut pairs: Vec<(f64, f64)> = Vec::new();
        enumerate_joint(&vec![0.0; spec.node_count()], &random, |vals, p| {
            let best = paths.iter().map(|q| path_sum(q, vals)).fold(f64::NEG_INFINITY, f64::max);
            pairs.push((best, p));
        });
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut brute: Vec<(f64, f64)> = Vec::new();
        for (v, p) in pairs {
            match brute.last_mut() {
                Some(last) if (last.0 - v).abs() < 1e-9 => last.1 += p,
                _ => brute.push((v, p)),
            }
        }
        for other in [&naive.iter().collect::<Vec<_>>(), &brute] {
            let mine: Vec<(f64, f64)> = fast.iter().collect();
            if mine.len() != other.len() {
                failures += 1;
                continue;
            }
            for (a, b) in mine.iter().zip(other.iter()) {
                worst = worst.max((a.0 - b.0).abs()).max((a.1 - b.1).abs());
            }
        }
    }
    Ok((
        failures == 0 && worst <= ATOM_TOL,
        format!("200 envs, support mismatches {failures}, max atom error {worst:.2e}"),
    ))
}

struct Brute<'a> {
    spec: &'a EnvSpec,
    b: &'a BeliefState,
    paths: Vec<Vec<NodeId>>,
}

impl Brute<'_> {
    fn means(&self) -> Vec<f64> {
        (0..self.spec.node_count()).map(|v| self.b.observed(v).unwrap_or_else(|| self.spec.prior_mean(v))).collect()
    }

    fn best(&self, vals: &[f64]) -> f64 {
        self.paths.iter().map(|p| path_sum(p, vals)).fold(f64::NEG_INFINITY, f64::max)
    }

    fn expect_best(&self, nodes: &[NodeId]) -> f64 {
        let random: Vec<(NodeId, Dist)> = nodes
            .iter()
            .filter(|&&v| v != self.spec.root() && !self.b.is_observed(v))
            .map(|&v| (v, self.spec.prior(v).expect("prior").clone()))
            .collect();
        let mut acc = 0.0;
        enumerate_joint(&self.means(), &random, |vals, p| acc += p * self.best(vals));
        acc
    }

    fn now(&self) -> f64 {
        self.best(&self.means())
    }

    fn voi1(&self, c: NodeId) -> f64 {
        self.expect_best(&[c]) - self.now()
    }

    fn vpi(&self) -> f64 {
        let all: BTreeSet<NodeId> = self.paths.iter().flatten().copied().collect();
        self.expect_best(&all.into_iter().collect::<Vec<_>>()) - self.now()
    }

    fn vpi_sub(&self, c: NodeId) -> f64 {
        let on: BTreeSet<NodeId> = self.paths.iter().filter(|p| p.contains(&c)).flatten().copied().collect();
        self.expect_best(&on.into_iter().collect::<Vec<_>>()) - self.now()
    }
}

fn feature_criterion() -> Outcome {
    let mut worst = 0.0f64;
    let mut chain_violations = 0;
    let mut evaluated = 0;
    for seed in 0..100u64 {
        let spec = gen_random_small(12, 3, 5000 + seed)?;
        let truth = sample_instance(&spec, seed);
        // Observe a deterministic pseudo-random third of the nodes.
        let obs: Vec<(NodeId, f64)> =
            spec.non_root().filter(|v| (v * 7 + seed as usize) % 3 == 0).map(|v| (v, truth.value(v))).collect();
        let b = BeliefState::with_observations(&spec, Phase::Flat, &obs);
        let mut levels = vec![(Level::Flat, enumerate_paths(&spec, None))];
        if spec.is_hierarchical() {
            for &g in spec.goals() {
                levels.push((Level::Low(g), enumerate_paths(&spec, Some(g))));
            }
        }
        for (level, paths) in levels {
            let bf = Brute { spec: &spec, b: &b, paths };
            let nodes: BTreeSet<NodeId> = bf.paths.iter().flatten().copied().filter(|&v| v != spec.root()).collect();
            let v = vpi(&b, &spec, level, None, Backend::Contraction)?;
            worst = worst.max((v - bf.vpi()).abs());
            let tv = termination_value(&b, &spec, level);
            worst = worst.max((tv - bf.now()).abs());
            for &n in nodes.iter().filter(|&&n| !b.is_observed(n)) {
                let c = Computation::InspectNode(n);
                let (o, s) =
                    (voi1(&b, &spec, c, level, None), vpi_sub(&b, &spec, c, level, None, Backend::Contraction)?);
                worst = worst.max((o - bf.voi1(n)).abs()).max((s - bf.vpi_sub(n)).abs());
                if !(-FEATURE_TOL..=s + FEATURE_TOL).contains(&o) || s > v + FEATURE_TOL {
                    chain_violations += 1;
                }
                evaluated += 1;
            }
        }
    }
    Ok((
        worst <= FEATURE_TOL && chain_violations == 0,
        format!("{evaluated} computations, max error {worst:.2e}, bound-chain violations {chain_violations}"),
    ))
}

fn oracle_criterion() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (i, spec) in tiny_fixtures().iter().enumerate() {
        let sol = solve_exact(spec)?;
        let v = sol.value(&init_belief(spec, Phase::Flat))?;
        let out = train_bmps(spec, &TrainSpec::new(TrainMode::Flat, 100, 100, 40 + i as u64))?;
        let mut p = make_policy(&out.config, spec, None)?;
        let rr = exact_expected_rr(p.as_mut(), spec)?;
        ok &= rr >= ORACLE_RATIO * v;
        parts.push(format!("{} {:.1}%", spec.name(), 100.0 * rr / v));
    }
    Ok((ok, format!("exact expected RR / V: {}", parts.join(", "))))
}

struct Contexts {
    increasing: BenchRun,
    highrisk: BenchRun,
}

fn mean(run: &BenchRun, policy: &str) -> f64 {
    run.report.row(policy).map_or(f64::NAN, |r| r.mean_rr)
}

fn se(run: &BenchRun, policy: &str) -> f64 {
    run.report.row(policy).map_or(f64::NAN, |r| r.se_rr)
}

fn high_risk(ctx: &Contexts) -> Outcome {
    let r = &ctx.highrisk;
    let (sw, no, flat) = (mean(r, "hier_bmps_switching"), mean(r, "hier_bmps"), mean(r, "flat_bmps"));
    let ok = (HIGH_RISK_SWITCHING_BAND.0..=HIGH_RISK_SWITCHING_BAND.1).contains(&sw)
        && no < 0.0
        && (HIGH_RISK_FLAT_BAND.0..=HIGH_RISK_FLAT_BAND.1).contains(&flat)
        && sw > flat
        && flat > no;
    Ok((ok, format!("switching {sw:.2}, flat {flat:.2}, no switching {no:.2} over {} episodes", r.report.episodes)))
}

fn switching_gap(ctx: &Contexts) -> Outcome {
    let r = &ctx.increasing;
    let (sw, no) = (mean(r, "hier_bmps_switching"), mean(r, "hier_bmps"));
    let gap = (sw - no).abs() / no.abs();
    Ok((gap < SWITCHING_REL_GAP, format!("switching {sw:.2}, no switching {no:.2}, relative gap {:.2}%", 100.0 * gap)))
}

fn hier_vs_flat(ctx: &Contexts) -> Outcome {
    let r = &ctx.increasing;
    let (h, f) = (mean(r, "hier_bmps_switching"), mean(r, "flat_bmps"));
    let gap = (f - h).abs() / f.abs();
    Ok((gap <= HIER_FLAT_REL_GAP, format!("hierarchical {h:.2}, flat {f:.2}, relative gap {:.2}%", 100.0 * gap)))
}

fn ordering(ctx: &Contexts) -> Outcome {
    let r = &ctx.increasing;
    let bmps = ["flat_bmps", "hier_bmps_switching", "hier_bmps", "greedy_flat", "greedy_hier"];
    let search = ["backward", "bidirectional", "bfs", "dfs"];
    let mut worst = f64::INFINITY;
    let mut pairs = vec![];
    for a in bmps {
        for b in search {
            pairs.push((a, b));
        }
    }
    for b in search {
        pairs.push((b, "random"));
    }
    for (a, b) in pairs {
        let z = (mean(r, a) - mean(r, b)) / se(r, a).hypot(se(r, b));
        worst = worst.min(z);
    }
    let show = |xs: &[&str]| xs.iter().map(|p| format!("{p} {:.2}", mean(r, p))).collect::<Vec<_>>().join(", ");
    Ok((
        worst >= ORDERING_MIN_SE && r.report.episodes >= 3000,
        format!("smallest gap {worst:.1} SE; {}; {}; random {:.2}", show(&bmps), show(&search), mean(r, "random")),
    ))
}

fn timing(ctx: &Contexts) -> Outcome {
    let spec = gen_increasing_variance(2)?;
    let config = |name: &str| {
        ctx.increasing
            .report
            .configs
            .iter()
            .find(|e| e.label == name)
            .map(|e| e.config.clone())
            .expect("trained config")
    };
    let without = FeatureConfig { backend: Backend::PathEnumeration, ..FeatureConfig::default() };
    let hier = config("hier_bmps_switching");
    let hier_with = time_evaluation(&hier, &spec, 20, 3, None)?;
    let mut hier_pe = hier.clone();
    hier_pe.features = without;
    let hier_without = time_evaluation(&hier_pe, &spec, 3, 3, None)?;
    let mut flat_pe = config("flat_bmps");
    flat_pe.features = without;
    let flat_without = time_evaluation(&flat_pe, &spec, 1, 3, Some(FLAT_TIMING_BUDGET))?;
    let flat_with = time_evaluation(&config("flat_bmps"), &spec, 5, 3, None)?;

    let prior = Dist::uniform(&[-5.0, 0.0, 5.0])?;
    let tree = gen_branching(&[3, 3, 3], &prior, 1.0)?;
    let dists: Vec<Dist> = (0..tree.node_count()).map(|v| tree.prior_or_zero(v)).collect();
    let local = flat_local(&tree, &dists);
    let reps = 5;
    let t = Instant::now();
    for _ in 0..reps {
        max_path_dist(tree.flat_scope(), &local)?;
    }
    let vpi_with = t.elapsed().as_secs_f64() / reps as f64;
    let t = Instant::now();
    path_enumeration_dist(tree.flat_scope(), &local, None)?;
    let vpi_without = t.elapsed().as_secs_f64();

    let goal_combos = path_enumeration_combinations(spec.goal_scope(0), &spec_local(&spec, 0));
    let flat_combos = path_enumeration_combinations(spec.flat_scope(), &flat_local(&spec, &prior_dists(&spec)));
    note(
        "timing",
        &format!(
            "flat with contraction {:.5}s/episode; flat without contraction {} {:.1}s/episode; shared-node outcomes flat {flat_combos:.3e} vs one goal {goal_combos:.3e}",
            flat_with.seconds_per_episode,
            if flat_without.complete { "measured" } else { "lower bound" },
            flat_without.seconds_per_episode
        ),
    );
    let r1 = hier_without.seconds_per_episode / hier_with.seconds_per_episode;
    let r2 = flat_without.seconds_per_episode / hier_without.seconds_per_episode;
    let r3 = vpi_without / vpi_with;
    Ok((
        r1 >= TIMING_RATIO && r2 >= TIMING_RATIO && r3 >= TIMING_RATIO,
        format!(
            "hier with {:.5}s, hier without {:.3}s ({r1:.0}x), flat without >= {:.1}s ({r2:.0}x); branching 3x3x3 VPI {:.5}s vs {:.5}s ({r3:.0}x); {}",
            hier_with.seconds_per_episode,
            hier_without.seconds_per_episode,
            flat_without.seconds_per_episode,
            vpi_with,
            vpi_without,
            hier_with.machine
        ),
    ))
}

fn prior_dists(spec: &EnvSpec) -> Vec<Dist> {
    (0..spec.node_count()).map(|v| spec.prior_or_zero(v)).collect()
}

fn spec_local(spec: &EnvSpec, gi: usize) -> Vec<Dist> {
    let d = prior_dists(spec);
    spec.goal_scope(gi).nodes().iter().map(|&v| d[v].clone()).collect()
}

fn metacontroller(ctx: &Contexts) -> Outcome {
    let spec = gen_high_risk();
    let (mut hits, mut avoided) = (0, 0);
    let mut switches_off = 0;
    for rec in &ctx.highrisk.traces {
        if rec.policy == "hier_bmps" {
            switches_off += rec.trace.switches;
            continue;
        }
        if rec.policy != "hier_bmps_switching" {
            continue;
        }
        let mut committed = None;
        let mut disaster = None;
        for s in &rec.trace.computations {
            match s.kind.as_str() {
                "terminate_high" => committed = s.node,
                "inspect_node" => {
                    if let (Some(g), Some(n), Some(v)) = (committed, s.node, s.revealed) {
                        if v == -1500.0 && spec.goal_of(n) == spec.goal_index(g) && n + 7 == g && disaster.is_none() {
                            disaster = Some(g);
                        }
                    }
                }
                _ => {}
            }
        }
        if let Some(g) = disaster {
            hits += 1;
            avoided += usize::from(rec.trace.path.last() != Some(&g));
        }
    }
    let rate = avoided as f64 / hits.max(1) as f64;
    Ok((
        hits > 0 && rate > AVOID_RATE && switches_off == 0,
        format!(
            "avoided {avoided}/{hits} revealed disasters ({:.1}%); switches with switching off {switches_off}",
            100.0 * rate
        ),
    ))
}

fn json_numbers(v: &serde_json::Value, out: &mut Vec<f64>) {
    match v {
        serde_json::Value::Number(n) => out.extend(n.as_f64()),
        serde_json::Value::Array(xs) => xs.iter().for_each(|x| json_numbers(x, out)),
        serde_json::Value::Object(m) => m.values().for_each(|x| json_numbers(x, out)),
        _ => {}
    }
}

fn tutor_properties() -> Outcome {
    let dir = tempfile::tempdir()?;
    let svc = TutorService::open(dir.path())?;
    let mut detail = Vec::new();

    // Information hiding: nothing unrevealed, and no prior, reaches a view.
    let spec = gen_feedback_tree().with_click_cost(0.37);
    let fractional: Vec<Option<Dist>> = (0..spec.node_count())
        .map(|v| {
            spec.prior(v)
                .map(|d| Dist::new(&d.support().iter().map(|x| x + 0.123_457).collect::<Vec<_>>(), d.probs()).unwrap())
        })
        .collect();
    let odd =
        EnvSpec::new("odd", spec.node_count(), 0, spec.edges().to_vec(), fractional, spec.goals().to_vec(), 0.37)?;
    let path = dir.path().join("odd.json");
    odd.save(&path)?;
    let env = path.to_string_lossy().into_owned();
    let s = svc.create_session(&CreateSession {
        condition: Condition::Practice,
        env: env.clone(),
        seed: 8,
        trials: Some(3),
    })?;
    let mut leaks = 0;
    let mut revealed = vec![];
    for node in [None, Some(7), Some(1), Some(4)] {
        if let Some(n) = node {
            revealed.push(svc.register_click(&s.id, 0, n)?.revealed);
        }
        let mut numbers = Vec::new();
        json_numbers(&serde_json::to_value(svc.get_trial(&s.id, 0)?)?, &mut numbers);
        for v in odd.non_root() {
            for x in odd.prior(v).unwrap().support() {
                if !revealed.contains(x) && numbers.contains(x) {
                    leaks += 1;
                }
            }
        }
        // Revealed values must show up, or the scan proves nothing.
        leaks += revealed.iter().filter(|x| !numbers.contains(x)).count();
    }
    detail.push(format!("leaks {leaks}"));

    // Replay soundness on sessions and demos.
    let mut replay_errors = 0;
    let feedback_spec = gen_feedback_tree();
    let routes = enumerate_paths(&feedback_spec, None);
    let s = svc.create_session(&CreateSession {
        condition: Condition::Practice,
        env: "builtin:feedback".into(),
        seed: 1,
        trials: Some(20),
    })?;
    for k in 0..20 {
        for n in [(k % 12) + 1, ((k * 5) % 12) + 1] {
            let _ = svc.register_click(&s.id, k, n);
        }
        let r = svc.submit_route(&s.id, k, &routes[k % routes.len()])?;
        replay_errors += usize::from((svc.replay_trial(&s.id, k)? - r.rr).abs() > 1e-9);
    }
    let inc = gen_increasing_variance(2)?;
    let cfg = demo_policy("greedy_hier")?;
    for seed in 0..20 {
        for step in [Curriculum::GoalOnly, Curriculum::PathOnly, Curriculum::Full] {
            let d = demo(&inc, "builtin:increasing2", &cfg, seed, step)?;
            replay_errors += usize::from((replay_demo(&inc, &d)? - d.score).abs() > 1e-9);
        }
    }
    let reloaded = TutorService::open(dir.path())?;
    for k in 0..20 {
        replay_errors += usize::from(reloaded.trial_record(&s.id, k)? != svc.trial_record(&s.id, k)?);
    }
    detail.push(format!("replay mismatches {replay_errors}"));

    // Session determinism.
    let make = |seed| {
        svc.create_session(&CreateSession {
            condition: Condition::Demo,
            env: "builtin:highrisk".into(),
            seed,
            trials: Some(10),
        })
    };
    let (a, b, c) = (make(4)?, make(4)?, make(5)?);
    let same = (0..10).all(|k| svc.trial_truth(&a.id, k).ok() == svc.trial_truth(&b.id, k).ok())
        && svc.trial_truth(&a.id, 0)? != svc.trial_truth(&c.id, 0)?;
    detail.push(format!("deterministic {same}"));

    // Oracle-optimal clicks get zero regret and no delay.
    let sol = solve_exact(&feedback_spec)?;
    let mut nonzero = 0;
    let mut graded = 0;
    for seed in 0..10 {
        let s = svc.create_session(&CreateSession {
            condition: Condition::Feedback,
            env: "builtin:feedback".into(),
            seed,
            trials: Some(1),
        })?;
        loop {
            let rec = svc.trial_record(&s.id, 0)?;
            let b = BeliefState::with_observations(&feedback_spec, Phase::Flat, &rec.clicks);
            match sol.policy(&b)? {
                Computation::InspectNode(n) => {
                    let fb = svc.register_click(&s.id, 0, n)?.feedback.expect("feedback");
                    nonzero += usize::from(fb.regret != 0.0 || fb.penalty_ms != 0 || !fb.is_optimal);
                    graded += 1;
                }
                _ => {
                    let fb = optimal_feedback(&b, Computation::TerminateFlat, &sol)?;
                    nonzero += usize::from(fb.regret != 0.0);
                    break;
                }
            }
        }
    }
    detail.push(format!("optimal clicks with regret {nonzero}/{graded}"));
    Ok((leaks == 0 && replay_errors == 0 && same && nonzero == 0 && graded > 0, detail.join(", ")))
}

fn main() {
    let mut suite = Suite { results: Vec::new() };
    suite.check("contraction_matches_enumeration", contraction_criterion);
    suite.check("features_match_definitions", feature_criterion);
    suite.check("flat_bmps_near_oracle", oracle_criterion);

    let t = Instant::now();
    let names = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let opts = BenchOptions { episodes: EPISODES_LONG, ..BenchOptions::default() };
    let ctx = (|| -> metaplan::error::Result<Contexts> {
        Ok(Contexts {
            increasing: run_benchmark(
                "builtin:increasing2",
                &names(&[
                    "flat_bmps",
                    "hier_bmps_switching",
                    "hier_bmps",
                    "greedy_flat",
                    "greedy_hier",
                    "backward",
                    "bidirectional",
                    "bfs",
                    "dfs",
                    "random",
                ]),
                &opts,
            )?,
            highrisk: run_benchmark(
                "builtin:highrisk",
                &names(&["hier_bmps_switching", "hier_bmps", "flat_bmps"]),
                &opts,
            )?,
        })
    })();
    println!("trained and evaluated benchmark policies in {:.1}s", t.elapsed().as_secs_f64());
    match ctx {
        Ok(ctx) => {
            for run in [&ctx.increasing, &ctx.highrisk] {
                for f in &run.report.failures {
                    note(&run.report.env, &format!("{} failed: {}", f.policy, f.error));
                }
            }
            suite.check("high_risk_ordering_and_bands", || high_risk(&ctx));
            suite.check("switching_gap_two_goals", || switching_gap(&ctx));
            suite.check("hier_vs_flat_gap", || hier_vs_flat(&ctx));
            let h = mean(&ctx.increasing, "hier_bmps_switching");
            let dev = (h - HIER_REFERENCE_MEAN) / HIER_REFERENCE_MEAN;
            println!(
                "{} hier_absolute_band: hierarchical {h:.2} vs reference {HIER_REFERENCE_MEAN}, deviation {:+.2}% (band +-{:.0}%, reported)",
                if dev.abs() <= HIER_REFERENCE_BAND { "PASS" } else { "NOTE" },
                100.0 * dev,
                100.0 * HIER_REFERENCE_BAND
            );
            suite.check("policy_family_ordering", || ordering(&ctx));
            suite.check("timing_directions", || timing(&ctx));
            suite.check("metacontroller_avoids_disasters", || metacontroller(&ctx));
        }
        Err(e) => {
            for name in [
                "high_risk_ordering_and_bands",
                "switching_gap_two_goals",
                "hier_vs_flat_gap",
                "policy_family_ordering",
                "timing_directions",
                "metacontroller_avoids_disasters",
            ] {
                suite.check(name, || Err(format!("benchmark setup failed: {e}").into()));
            }
        }
    }
    suite.check("tutor_properties", tutor_properties);

    let failed: Vec<&str> = suite.results.iter().filter(|r| !r.1).map(|r| r.0.as_str()).collect();
    println!("acceptance: {}/{} criteria pass", suite.results.len() - failed.len(), suite.results.len());
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
