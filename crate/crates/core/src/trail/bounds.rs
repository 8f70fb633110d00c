//! Numeric evaluators for the level-set and intersection bounds.

use serde::{Deserialize, Serialize};

use crate::capacity::equilibrium_solve;
use crate::error::{invalid, Result};
use crate::green::{hitting_probability, GreenOracle};
use crate::lattice::LatticePoint;
use crate::moments::{ordered_path_sum, MAX_PERMUTATION_SITES};
use crate::sets::validate_sites;

/// `(c n̄)^{|Λ|} (|Λ|!)^d e^{-n̲ cap(Λ)} Σ_γ Π P_{γ(i-1)}(H(γ(i)) < ∞)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSetBound {
    pub log_value: f64,
    pub value: f64,
    pub capacity: f64,
    /// The sum over orderings of `Λ \ {0}` started at the origin.
    pub permutation_sum: f64,
    /// False when `|Λ|` exceeds the exact limit and the row-sum bound was used.
    pub exact_permutation: bool,
    pub n_max: u32,
    pub n_min: u32,
}

pub fn level_set_prob_bound(
    sites: &[LatticePoint],
    profile: &[u32],
    oracle: &GreenOracle,
    c_d: f64,
) -> Result<LevelSetBound> {
    validate_sites(sites)?;
    if profile.len() != sites.len() {
        return Err(invalid("profile", "length differs from the site list"));
    }
    if !(c_d > 0.0) {
        return Err(invalid("c_d", "must be positive"));
    }
    let n_max = *profile.iter().max().expect("nonempty");
    let n_min = *profile.iter().min().expect("nonempty");
    let capacity = equilibrium_solve(sites, oracle)?.capacity;
    let rest: Vec<LatticePoint> = sites.iter().copied().filter(|z| !z.is_origin()).collect();
    let origin = LatticePoint::origin(oracle.dim());
    let hit = |a: &LatticePoint, b: &LatticePoint| hitting_probability(a, b, oracle).probability;
    let start: Vec<f64> = rest.iter().map(|z| hit(&origin, z)).collect();
    let k = rest.len();
    let mut pair = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            if i != j {
                pair[i * k + j] = hit(&rest[i], &rest[j]);
            }
        }
    }
    let exact = k <= MAX_PERMUTATION_SITES;
    let permutation_sum = if exact {
        ordered_path_sum(&start, &pair, k)?
    } else {
        // extending a partial ordering by any unused site costs at most a full row sum
        let row = (0..k)
            .map(|i| pair[i * k..(i + 1) * k].iter().sum::<f64>())
            .fold(0.0, f64::max);
        start.iter().sum::<f64>() * row.powi(k as i32 - 1)
    };
    let size = sites.len() as f64;
    let ln_fact: f64 = (2..=sites.len()).map(|i| (i as f64).ln()).sum();
    let log_value = size * (c_d * n_max as f64).ln() + oracle.dim() as f64 * ln_fact
        - n_min as f64 * capacity
        + permutation_sum.ln();
    Ok(LevelSetBound {
        log_value,
        value: log_value.exp(),
        capacity,
        permutation_sum,
        exact_permutation: exact,
        n_max,
        n_min,
    })
}

/// The smallest `c_d` for which the bound dominates a given probability.
pub fn minimal_level_constant(probability: f64, bound_at_one: &LevelSetBound, size: usize) -> f64 {
    // the bound scales as c^{|Λ|}
    (probability.ln() - bound_at_one.log_value).exp().powf(1.0 / size as f64)
}

/// Constants of the intersection bounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntersectionConstants {
    pub dim: usize,
    /// `C_d` in the upper form.
    pub c_upper: f64,
    /// `κ_d` in the upper form.
    pub kappa: f64,
    /// `ε ∈ (0, 2/d)` in the lower form.
    pub epsilon: f64,
}

/// Ratios `(n + m) / L^{2/d}` at or above this count as the regime where
/// the upper bound is informative.
pub const REGIME_RATIO: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntersectionBounds {
    /// `L ln(C n m) + 2d ln L! - κ (n + m) L^{1-2/d}`.
    pub log_upper: f64,
    pub upper: f64,
    /// `-(n + m) L^{1-2/d+ε}`.
    pub log_lower: f64,
    pub lower: f64,
    pub regime_ratio: f64,
    pub large_regime: bool,
}

pub fn intersection_bound_evaluators(
    n: u64,
    m: u64,
    l: u64,
    c: &IntersectionConstants,
) -> Result<IntersectionBounds> {
    if n == 0 || m == 0 || l == 0 {
        return Err(invalid("n, m, L", "must all be at least 1"));
    }
    if c.dim < 3 {
        return Err(invalid("dim", "must be at least 3"));
    }
    let d = c.dim as f64;
    if !(c.epsilon > 0.0 && c.epsilon < 2.0 / d) {
        return Err(invalid("epsilon", "must lie in (0, 2/d)"));
    }
    if !(c.c_upper > 0.0 && c.kappa > 0.0) {
        return Err(invalid("constants", "C_d and kappa_d must be positive"));
    }
    let (nf, mf, lf) = (n as f64, m as f64, l as f64);
    let ln_fact: f64 = (2..=l).map(|i| (i as f64).ln()).sum();
    let log_upper = lf * (c.c_upper * nf * mf).ln() + 2.0 * d * ln_fact - c.kappa * (nf + mf) * lf.powf(1.0 - 2.0 / d);
    let log_lower = -(nf + mf) * lf.powf(1.0 - 2.0 / d + c.epsilon);
    let regime_ratio = (nf + mf) / lf.powf(2.0 / d);
    Ok(IntersectionBounds {
        log_upper,
        upper: log_upper.exp(),
        log_lower,
        lower: log_lower.exp(),
        regime_ratio,
        large_regime: regime_ratio >= REGIME_RATIO,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::OnceLock;

    fn oracle() -> &'static GreenOracle {
        static G: OnceLock<GreenOracle> = OnceLock::new();
        G.get_or_init(|| GreenOracle::solve(5, 12).unwrap())
    }

    #[test]
    fn singleton_reduces() {
        let g = oracle();
        let b = level_set_prob_bound(&[LatticePoint::origin(5)], &[7], g, 0.5).unwrap();
        let expect = 0.5 * 7.0 * (-7.0 / g.g0()).exp();
        assert!((b.value - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn nonincreasing_in_min_level() {
        let g = oracle();
        let s = [LatticePoint::origin(5), LatticePoint::unit(5, 0)];
        let mut prev = f64::INFINITY;
        for lo in 1..=10 {
            let b = level_set_prob_bound(&s, &[10, lo], g, 1.0).unwrap();
            assert!(b.value <= prev);
            prev = b.value;
        }
    }

    #[test]
    fn intersection_single_site() {
        let c = IntersectionConstants {
            dim: 5,
            c_upper: 2.0,
            kappa: 0.3,
            epsilon: 0.1,
        };
        let b = intersection_bound_evaluators(3, 4, 1, &c).unwrap();
        let expect = 2.0 * 12.0 * (-0.3f64 * 7.0).exp();
        assert!((b.upper - expect).abs() < 1e-12);
        // log-derivative in s is 2L/s - 2 kappa L^{1-2/d}, negative once s > L^{2/d}/kappa
        let mut prev = f64::INFINITY;
        for s in 6..60 {
            let u = intersection_bound_evaluators(s, s, 3, &c).unwrap().upper;
            assert!(u < prev);
            prev = u;
        }
        assert!(intersection_bound_evaluators(1, 1, 1, &IntersectionConstants { epsilon: 0.5, ..c }).is_err());
    }
}
