//! Exact solution of small flat metalevel MDPs by memoized backward
//! induction over every belief.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::belief::{rollout, BeliefState, Computation, Policy};
use crate::env::{EnvSpec, NodeId, RewardAssignment};
use crate::error::{Error, Result};

/// Largest belief space `solve_exact` accepts.
pub const MAX_BELIEFS: f64 = 1e6;
/// Largest joint outcome space `exact_expected_rr` enumerates.
pub const MAX_INSTANCES: f64 = 1e6;
/// Feedback delay per unit of regret, in milliseconds.
pub const DEFAULT_PENALTY_MS_PER_REGRET: f64 = 500.0;

const MAGIC: &[u8; 8] = b"MPORACLE";
const VERSION: u32 = 1;

/// Optimal values of every belief. Beliefs are keyed in mixed radix: digit
/// 0 means unobserved, digit k means the (k-1)-th support atom was seen.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleSolution {
    env_hash: String,
    click_cost: f64,
    nodes: Vec<NodeId>,
    atoms: Vec<Vec<f64>>,
    probs: Vec<Vec<f64>>,
    stride: Vec<usize>,
    value: Vec<f64>,
    stop: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub is_optimal: bool,
    pub optimal_computation: Computation,
    pub regret: f64,
    pub penalty_ms: u64,
}

/// Number of beliefs of the flat metalevel MDP of `spec`.
pub fn belief_space_size(spec: &EnvSpec) -> f64 {
    spec.non_root().map(|v| spec.prior(v).map_or(1.0, |d| d.len() as f64 + 1.0)).product()
}

pub fn solve_exact(spec: &EnvSpec) -> Result<OracleSolution> {
    let size = belief_space_size(spec);
    if size > MAX_BELIEFS {
        return Err(Error::BeliefSpaceTooLarge { size, cap: MAX_BELIEFS });
    }
    let nodes: Vec<NodeId> = spec.non_root().filter(|&v| spec.prior(v).is_some()).collect();
    let atoms: Vec<Vec<f64>> = nodes.iter().map(|&v| spec.prior(v).unwrap().support().to_vec()).collect();
    let probs: Vec<Vec<f64>> = nodes.iter().map(|&v| spec.prior(v).unwrap().probs().to_vec()).collect();
    let mut stride = Vec::with_capacity(nodes.len());
    let mut total = 1usize;
    for a in &atoms {
        stride.push(total);
        total *= a.len() + 1;
    }

    // Stopping value of every belief: best path by expected sums.
    let scope = spec.flat_scope();
    let slot: Vec<Option<usize>> = scope.nodes().iter().map(|v| nodes.iter().position(|n| n == v)).collect();
    let means: Vec<f64> = scope.nodes().iter().map(|&v| spec.prior_mean(v)).collect();
    let mut stop = vec![0.0; total];
    let mut vals = means.clone();
    for (key, s) in stop.iter_mut().enumerate() {
        for (l, sl) in slot.iter().enumerate() {
            if let Some(i) = *sl {
                let digit = key / stride[i] % (atoms[i].len() + 1);
                vals[l] = if digit == 0 { means[l] } else { atoms[i][digit - 1] };
            }
        }
        *s = scope.max_path_value(&vals);
    }

    // A belief's successors have strictly more observed digits and hence
    // larger keys, so one descending sweep is a valid induction order.
    let lambda = spec.click_cost();
    let mut value = vec![0.0; total];
    for key in (0..total).rev() {
        let mut best = stop[key];
        for i in 0..nodes.len() {
            let radix = atoms[i].len() + 1;
            if key / stride[i] % radix != 0 {
                continue;
            }
            let q =
                -lambda + probs[i].iter().enumerate().map(|(k, p)| p * value[key + (k + 1) * stride[i]]).sum::<f64>();
            best = best.max(q);
        }
        value[key] = best;
    }

    Ok(OracleSolution { env_hash: spec.env_hash(), click_cost: lambda, nodes, atoms, probs, stride, value, stop })
}

impl OracleSolution {
    pub fn env_hash(&self) -> &str {
        &self.env_hash
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    /// Key of a belief; only observations matter, not the phase.
    pub fn key(&self, b: &BeliefState) -> Result<usize> {
        let mut key = 0;
        for (i, &v) in self.nodes.iter().enumerate() {
            if let Some(x) = b.observed(v) {
                let k = self.atoms[i].iter().position(|a| (a - x).abs() <= 1e-9).ok_or(Error::UnsolvedBelief)?;
                key += (k + 1) * self.stride[i];
            }
        }
        Ok(key)
    }

    pub fn value(&self, b: &BeliefState) -> Result<f64> {
        Ok(self.value[self.key(b)?])
    }

    fn slot(&self, node: NodeId) -> Option<usize> {
        self.nodes.iter().position(|&v| v == node)
    }

    fn q_key(&self, key: usize, c: Computation) -> Result<f64> {
        let Some(node) = c.node() else {
            return Ok(self.stop[key]);
        };
        // Nodes without a prior are never worth inspecting; they reveal 0.
        let Some(i) = self.slot(node) else {
            return Ok(self.stop[key] - self.click_cost);
        };
        if key / self.stride[i] % (self.atoms[i].len() + 1) != 0 {
            return Err(Error::AlreadyObserved(node));
        }
        Ok(-self.click_cost
            + self.probs[i]
                .iter()
                .enumerate()
                .map(|(k, p)| p * self.value[key + (k + 1) * self.stride[i]])
                .sum::<f64>())
    }

    pub fn q(&self, b: &BeliefState, c: Computation) -> Result<f64> {
        self.q_key(self.key(b)?, c)
    }

    /// Optimal computation: termination unless some inspection is better
    /// by more than 1e-9, then the lowest such node.
    pub fn policy(&self, b: &BeliefState) -> Result<Computation> {
        let key = self.key(b)?;
        let v = self.value[key];
        if v - self.stop[key] <= 1e-9 {
            return Ok(Computation::TerminateFlat);
        }
        let mut nodes: Vec<NodeId> = self.nodes.clone();
        nodes.sort_unstable();
        for n in nodes {
            if b.is_observed(n) {
                continue;
            }
            if v - self.q_key(key, Computation::InspectNode(n))? <= 1e-9 {
                return Ok(Computation::InspectNode(n));
            }
        }
        Ok(Computation::TerminateFlat)
    }

    /// Writes the solution with a versioned header carrying the env hash.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::with_capacity(16 * self.value.len() + 256);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.env_hash.len() as u32).to_le_bytes());
        out.extend_from_slice(self.env_hash.as_bytes());
        out.extend_from_slice(&self.click_cost.to_le_bytes());
        out.extend_from_slice(&(self.nodes.len() as u32).to_le_bytes());
        for (i, &n) in self.nodes.iter().enumerate() {
            out.extend_from_slice(&(n as u32).to_le_bytes());
            out.extend_from_slice(&(self.atoms[i].len() as u32).to_le_bytes());
            for (a, p) in self.atoms[i].iter().zip(&self.probs[i]) {
                out.extend_from_slice(&a.to_le_bytes());
                out.extend_from_slice(&p.to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.value.len() as u64).to_le_bytes());
        for (v, s) in self.value.iter().zip(&self.stop) {
            out.extend_from_slice(&v.to_le_bytes());
            out.extend_from_slice(&s.to_le_bytes());
        }
        std::fs::File::create(path)?.write_all(&out)?;
        Ok(())
    }

    /// Reads a solution saved for `spec`; any header mismatch is an error.
    pub fn load(path: &Path, spec: &EnvSpec) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        let mut r = Reader { buf: &buf, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Cache("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Cache(format!("unsupported version {version}")));
        }
        let hlen = r.u32()? as usize;
        let env_hash = String::from_utf8(r.take(hlen)?.to_vec()).map_err(|_| Error::Cache("bad hash".into()))?;
        if env_hash != spec.env_hash() {
            return Err(Error::Cache("environment hash mismatch".into()));
        }
        let click_cost = r.f64()?;
        let n = r.u32()? as usize;
        let (mut nodes, mut atoms, mut probs, mut stride) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let mut total = 1usize;
        for _ in 0..n {
            nodes.push(r.u32()? as NodeId);
            let k = r.u32()? as usize;
            let (mut a, mut p) = (Vec::with_capacity(k), Vec::with_capacity(k));
            for _ in 0..k {
                a.push(r.f64()?);
                p.push(r.f64()?);
            }
            stride.push(total);
            total = total.checked_mul(k + 1).ok_or_else(|| Error::Cache("size overflow".into()))?;
            atoms.push(a);
            probs.push(p);
        }
        let count = r.u64()? as usize;
        if count != total {
            return Err(Error::Cache(format!("expected {total} beliefs, found {count}")));
        }
        let (mut value, mut stop) = (Vec::with_capacity(count), Vec::with_capacity(count));
        for _ in 0..count {
            value.push(r.f64()?);
            stop.push(r.f64()?);
        }
        if r.pos != buf.len() {
            return Err(Error::Cache("trailing bytes".into()));
        }
        Ok(Self { env_hash, click_cost, nodes, atoms, probs, stride, value, stop })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end =
            self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| Error::Cache("truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Loads a cached solution when one matches `spec`, otherwise solves and
/// writes the cache.
pub fn solve_cached(spec: &EnvSpec, path: &Path) -> Result<OracleSolution> {
    if let Ok(sol) = OracleSolution::load(path, spec) {
        return Ok(sol);
    }
    let sol = solve_exact(spec)?;
    sol.save(path)?;
    Ok(sol)
}

pub fn optimal_feedback(b: &BeliefState, chosen: Computation, sol: &OracleSolution) -> Result<FeedbackRecord> {
    feedback_with_penalty(b, chosen, sol, DEFAULT_PENALTY_MS_PER_REGRET)
}

pub fn feedback_with_penalty(
    b: &BeliefState,
    chosen: Computation,
    sol: &OracleSolution,
    ms_per_regret: f64,
) -> Result<FeedbackRecord> {
    let key = sol.key(b)?;
    let regret = (sol.value[key] - sol.q_key(key, chosen)?).max(0.0);
    Ok(FeedbackRecord {
        is_optimal: regret <= 1e-9,
        optimal_computation: sol.policy(b)?,
        regret,
        penalty_ms: (ms_per_regret * regret).round() as u64,
    })
}

/// Every joint instance of `spec` with its probability, in odometer order.
pub fn enumerate_instances(spec: &EnvSpec) -> Result<Vec<(RewardAssignment, f64)>> {
    let nodes: Vec<NodeId> = spec.non_root().filter(|&v| spec.prior(v).is_some()).collect();
    let size: f64 = nodes.iter().map(|&v| spec.prior(v).unwrap().len() as f64).product();
    if size > MAX_INSTANCES {
        return Err(Error::OutcomeSpaceTooLarge { size, cap: MAX_INSTANCES });
    }
    let mut out = Vec::with_capacity(size as usize);
    let mut digits = vec![0usize; nodes.len()];
    loop {
        let mut values = vec![0.0; spec.node_count()];
        let mut p = 1.0;
        for (i, &v) in nodes.iter().enumerate() {
            let d = spec.prior(v).unwrap();
            values[v] = d.support()[digits[i]];
            p *= d.probs()[digits[i]];
        }
        out.push((RewardAssignment { values, seed: out.len() as u64 }, p));
        let mut i = 0;
        loop {
            if i == nodes.len() {
                return Ok(out);
            }
            digits[i] += 1;
            if digits[i] < spec.prior(nodes[i]).unwrap().len() {
                break;
            }
            digits[i] = 0;
            i += 1;
        }
    }
}

/// Expected RR of a policy, exactly, by rolling it out on every instance.
/// The policy is reset with the same seed each time, so a randomized policy
/// behaves as one fixed, instance-independent strategy.
pub fn exact_expected_rr<P: Policy + ?Sized>(policy: &mut P, spec: &EnvSpec) -> Result<f64> {
    let mut total = 0.0;
    for (truth, p) in enumerate_instances(spec)? {
        policy.reset(0);
        total += p * rollout(policy, spec, &truth)?.rr;
    }
    Ok(total)
}

/// Policy that follows the oracle.
pub struct OraclePolicy<'a> {
    pub solution: &'a OracleSolution,
}

impl Policy for OraclePolicy<'_> {
    fn start_phase(&self) -> crate::belief::Phase {
        crate::belief::Phase::Flat
    }

    fn decide(&mut self, b: &BeliefState, _: &EnvSpec) -> Result<crate::belief::Decision> {
        Ok(crate::belief::Decision::Compute(self.solution.policy(b)?))
    }
}
