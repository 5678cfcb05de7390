//! Finite discrete distributions and the arithmetic used to combine node
//! rewards: sums of independent variables, maxima of independent variables
//! and probability mixtures.
//!
//! A [`Dist`] always has a strictly increasing support with strictly
//! positive probabilities summing to one. Atoms closer than
//! [`MERGE_TOL`] are merged whenever a new distribution is formed.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Values closer than this are treated as the same atom.
pub const MERGE_TOL: f64 = 1e-9;

/// Upper bound on the number of atoms any intermediate result may hold.
pub const MAX_SUPPORT: usize = 1 << 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dist {
    support: Vec<f64>,
    probs: Vec<f64>,
}

impl Dist {
    /// Builds a distribution from arbitrary (value, probability) pairs.
    ///
    /// Pairs are sorted, near-equal values merged and zero-probability
    /// atoms dropped. The probabilities must sum to one within `1e-9`.
    pub fn new(values: &[f64], probs: &[f64]) -> Result<Self> {
        if values.len() != probs.len() || values.is_empty() {
            return Err(Error::OutOfRange(format!(
                "distribution needs matching non-empty values and probs (got {} and {})",
                values.len(),
                probs.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::OutOfRange("distribution values must be finite".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::OutOfRange("probabilities must be nonnegative".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::OutOfRange(format!("probabilities sum to {total}, not 1")));
        }
        let pairs = values.iter().copied().zip(probs.iter().copied()).collect();
        let mut dist = Self::from_pairs(pairs);
        dist.renormalize();
        Ok(dist)
    }

    /// Equiprobable distribution over `values`.
    pub fn uniform(values: &[f64]) -> Result<Self> {
        let p = 1.0 / values.len().max(1) as f64;
        Self::new(values, &vec![p; values.len()])
    }

    pub fn point(value: f64) -> Self {
        Self { support: vec![value], probs: vec![1.0] }
    }

    /// Sorts and merges raw pairs. Probabilities are taken as given.
    fn from_pairs(mut pairs: Vec<(f64, f64)>) -> Self {
        pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        Self::from_sorted_pairs(pairs.into_iter())
    }

    fn from_sorted_pairs(pairs: impl Iterator<Item = (f64, f64)>) -> Self {
        let mut support: Vec<f64> = Vec::new();
        let mut probs: Vec<f64> = Vec::new();
        let mut anchor = f64::NEG_INFINITY;
        for (v, p) in pairs {
            if p <= 0.0 {
                continue;
            }
            if !support.is_empty() && v - anchor <= MERGE_TOL {
                *probs.last_mut().unwrap() += p;
            } else {
                anchor = v;
                support.push(v);
                probs.push(p);
            }
        }
        Self { support, probs }
    }

    fn renormalize(&mut self) {
        let total: f64 = self.probs.iter().sum();
        if total > 0.0 && total != 1.0 {
            self.probs.iter_mut().for_each(|p| *p /= total);
        }
    }

    fn check_cap(self) -> Result<Self> {
        if self.support.len() > MAX_SUPPORT {
            Err(Error::SupportTooLarge { size: self.support.len(), cap: MAX_SUPPORT })
        } else {
            Ok(self)
        }
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn is_point(&self) -> bool {
        self.support.len() == 1
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.support.iter().copied().zip(self.probs.iter().copied())
    }

    pub fn mean(&self) -> f64 {
        self.iter().map(|(v, p)| v * p).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.iter().map(|(v, p)| p * (v - m) * (v - m)).sum()
    }

    pub fn min(&self) -> f64 {
        self.support[0]
    }

    pub fn max_value(&self) -> f64 {
        *self.support.last().unwrap()
    }

    /// Index of the atom equal to `value` (within the merge tolerance).
    pub fn index_of(&self, value: f64) -> Option<usize> {
        let i = self.support.partition_point(|&v| v < value - MERGE_TOL);
        (i < self.support.len() && (self.support[i] - value).abs() <= MERGE_TOL).then_some(i)
    }

    pub fn shift(&self, delta: f64) -> Self {
        Self { support: self.support.iter().map(|v| v + delta).collect(), probs: self.probs.clone() }
    }

    /// `E[max(X, floor)]`.
    pub fn expected_max_with(&self, floor: f64) -> f64 {
        self.iter().map(|(v, p)| p * v.max(floor)).sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (v, p) in self.iter() {
            acc += p;
            if u < acc {
                return v;
            }
        }
        *self.support.last().unwrap()
    }

    /// Distribution of `X + Y` for independent `X ~ self`, `Y ~ other`.
    pub fn add(&self, other: &Dist) -> Result<Dist> {
        if other.is_point() {
            return Ok(self.shift(other.support[0]));
        }
        if self.is_point() {
            return Ok(other.shift(self.support[0]));
        }
        let (small, large) = if self.len() <= other.len() { (self, other) } else { (other, self) };
        let mut pairs = Vec::with_capacity(small.len() * large.len());
        for (a, pa) in small.iter() {
            for (b, pb) in large.iter() {
                pairs.push((a + b, pa * pb));
            }
        }
        Self::from_pairs(pairs).check_cap()
    }

    /// Distribution of `max(X, Y)` for independent `X ~ self`, `Y ~ other`.
    pub fn max(&self, other: &Dist) -> Result<Dist> {
        let (a, b) = (self, other);
        let (mut i, mut j) = (0, 0);
        let (mut fa, mut fb) = (0.0, 0.0);
        let mut out = Vec::with_capacity(a.len() + b.len());
        while i < a.len() || j < b.len() {
            let x = match (a.support.get(i), b.support.get(j)) {
                (Some(&u), Some(&w)) => u.min(w),
                (Some(&u), None) => u,
                (None, Some(&w)) => w,
                (None, None) => unreachable!(),
            };
            let mut pa = 0.0;
            if i < a.len() && a.support[i] - x <= MERGE_TOL {
                pa = a.probs[i];
                i += 1;
            }
            let mut pb = 0.0;
            if j < b.len() && b.support[j] - x <= MERGE_TOL {
                pb = b.probs[j];
                j += 1;
            }
            // P(A = x, B <= x) + P(A < x, B = x)
            out.push((x, pa * (fb + pb) + fa * pb));
            fa += pa;
            fb += pb;
        }
        Self::from_sorted_pairs(out.into_iter()).check_cap()
    }

    /// Probability mixture `sum_k w_k * D_k`. Weights must sum to one.
    pub fn mixture(parts: &[(Dist, f64)]) -> Result<Dist> {
        let mut pairs = Vec::with_capacity(parts.iter().map(|(d, _)| d.len()).sum());
        for (d, w) in parts {
            pairs.extend(d.iter().map(|(v, p)| (v, p * w)));
        }
        Self::from_pairs(pairs).check_cap()
    }

    /// Atomwise comparison: same support and matching probabilities.
    pub fn approx_eq(&self, other: &Dist, tol: f64) -> bool {
        self.len() == other.len()
            && self.iter().zip(other.iter()).all(|((v, p), (w, q))| (v - w).abs() <= tol && (p - q).abs() <= tol)
    }
}

/// Discretizes `Normal(mu, sigma)` into `bins` equal-probability quantile
/// cells, each represented by the conditional mean of the normal within it.
pub fn discretize_normal(mu: f64, sigma: f64, bins: usize) -> Result<Dist> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::OutOfRange(format!("sigma must be positive, got {sigma}")));
    }
    if bins == 0 {
        return Err(Error::OutOfRange("bins must be at least 1".into()));
    }
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    let edge = |k: usize| -> f64 {
        if k == 0 {
            f64::NEG_INFINITY
        } else if k == bins {
            f64::INFINITY
        } else {
            std.inverse_cdf(k as f64 / bins as f64)
        }
    };
    let density = |z: f64| if z.is_finite() { std.pdf(z) } else { 0.0 };
    // Cells are mirrored so the support is exactly symmetric about mu.
    let mut offsets = vec![0.0; bins];
    for k in 0..bins / 2 {
        let m = bins as f64 * (density(edge(k)) - density(edge(k + 1)));
        offsets[k] = m;
        offsets[bins - 1 - k] = -m;
    }
    let values: Vec<f64> = offsets.iter().map(|z| mu + sigma * z).collect();
    Dist::uniform(&values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn coin() -> Dist {
        Dist::new(&[-1.0, 1.0], &[0.5, 0.5]).unwrap()
    }

    #[test]
    fn rejects_bad_probabilities() {
        assert!(Dist::new(&[0.0, 1.0], &[0.5, 0.6]).is_err());
        assert!(Dist::new(&[0.0], &[-1.0]).is_err());
        assert!(Dist::new(&[], &[]).is_err());
    }

    #[test]
    fn construction_sorts_merges_and_drops_zero_atoms() {
        let d = Dist::new(&[3.0, 1.0, 1.0 + 1e-12, 2.0], &[0.25, 0.25, 0.25, 0.25]).unwrap();
        assert_eq!(d.support(), &[1.0, 2.0, 3.0]);
        assert_eq!(d.probs(), &[0.5, 0.25, 0.25]);
        let z = Dist::new(&[0.0, 5.0], &[1.0, 0.0]).unwrap();
        assert!(z.is_point());
    }

    #[test]
    fn add_points() {
        assert_eq!(Dist::point(2.0).add(&Dist::point(3.0)).unwrap(), Dist::point(5.0));
    }

    #[test]
    fn add_two_coins() {
        let s = coin().add(&coin()).unwrap();
        assert_eq!(s.support(), &[-2.0, 0.0, 2.0]);
        assert_eq!(s.probs(), &[0.25, 0.5, 0.25]);
    }

    #[test]
    fn max_points() {
        assert_eq!(Dist::point(1.0).max(&Dist::point(4.0)).unwrap(), Dist::point(4.0));
    }

    #[test]
    fn max_coin_and_zero() {
        let m = coin().max(&Dist::point(0.0)).unwrap();
        assert_eq!(m.support(), &[0.0, 1.0]);
        assert_eq!(m.probs(), &[0.5, 0.5]);
    }

    #[test]
    fn mixture_weights_components() {
        let m = Dist::mixture(&[(Dist::point(0.0), 0.25), (coin(), 0.75)]).unwrap();
        assert_eq!(m.support(), &[-1.0, 0.0, 1.0]);
        assert!((m.probs()[1] - 0.25).abs() < 1e-15);
        assert!((m.probs()[0] - 0.375).abs() < 1e-15);
    }

    #[test]
    fn index_of_finds_atoms() {
        let d = Dist::uniform(&[-10.0, -5.0, 5.0, 10.0]).unwrap();
        assert_eq!(d.index_of(5.0), Some(2));
        assert_eq!(d.index_of(4.0), None);
    }

    #[test]
    fn normal_single_bin_is_the_mean() {
        assert_eq!(discretize_normal(5.0, 3.0, 1).unwrap(), Dist::point(5.0));
    }

    #[test]
    fn normal_is_symmetric_with_exact_mean() {
        for sigma in [1.0, 5.0, 40.0, 120.0] {
            let d = discretize_normal(0.0, sigma, 4).unwrap();
            assert_eq!(d.len(), 4);
            assert!(d.mean().abs() < 1e-9);
            assert!((d.support()[0] + d.support()[3]).abs() < 1e-12);
            assert!(d.probs().iter().all(|p| (p - 0.25).abs() < 1e-15));
        }
    }

    #[test]
    fn normal_two_bins_match_half_normal_mean() {
        // E[Z | Z > 0] by trapezoidal quadrature of z * phi(z) / 0.5 on [0, 12].
        let steps = 200_000;
        let h = 12.0 / steps as f64;
        let f = |z: f64| z * (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut integral = 0.5 * (f(0.0) + f(12.0));
        for k in 1..steps {
            integral += f(k as f64 * h);
        }
        let half_mean = integral * h / 0.5;
        let d = discretize_normal(0.0, 1.0, 2).unwrap();
        assert!((d.support()[1] - half_mean).abs() < 1e-3);
        assert!((d.support()[1] - 0.7979).abs() < 1e-3);
        assert!((d.support()[0] + half_mean).abs() < 1e-3);
    }

    #[test]
    fn normal_rejects_nonpositive_sigma() {
        assert!(discretize_normal(0.0, 0.0, 4).is_err());
        assert!(discretize_normal(0.0, -1.0, 4).is_err());
        assert!(discretize_normal(0.0, 1.0, 0).is_err());
    }

    fn arb_dist() -> impl Strategy<Value = Dist> {
        prop::collection::vec((-20i32..20, 1u32..10), 1..5).prop_map(|atoms| {
            let total: u32 = atoms.iter().map(|a| a.1).sum();
            let values: Vec<f64> = atoms.iter().map(|a| a.0 as f64).collect();
            let probs: Vec<f64> = atoms.iter().map(|a| a.1 as f64 / total as f64).collect();
            Dist::new(&values, &probs).unwrap()
        })
    }

    proptest! {
        #[test]
        fn add_is_linear_in_mean(a in arb_dist(), b in arb_dist()) {
            let s = a.add(&b).unwrap();
            prop_assert!((s.mean() - a.mean() - b.mean()).abs() < 1e-9);
            prop_assert!((s.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn max_dominates_means(a in arb_dist(), b in arb_dist()) {
            let m = a.max(&b).unwrap();
            prop_assert!(m.mean() >= a.mean().max(b.mean()) - 1e-9);
            prop_assert!((m.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(m.support().windows(2).all(|w| w[0] < w[1]));
            prop_assert!(m.probs().iter().all(|&p| p > 0.0));
        }

        #[test]
        fn max_matches_pairwise_enumeration(a in arb_dist(), b in arb_dist()) {
            let mut pairs = Vec::new();
            for (x, p) in a.iter() {
                for (y, q) in b.iter() {
                    pairs.push(x.max(y));
                    pairs.push(p * q);
                }
            }
            let values: Vec<f64> = pairs.iter().step_by(2).copied().collect();
            let probs: Vec<f64> = pairs.iter().skip(1).step_by(2).copied().collect();
            let brute = Dist::new(&values, &probs).unwrap();
            prop_assert!(a.max(&b).unwrap().approx_eq(&brute, 1e-12));
        }
    }
}
