//! Capacity of finite sets: escape-probability Monte Carlo, the equilibrium
//! measure solve, and the uniform test-measure lower bound.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::green::{GreenOracle, SiteLookup};
use crate::lattice::{apply_move, draw_move, truncation_bias_bound, LatticePoint, StreamKey, MAX_DIM};
use crate::sets::validate_sites;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapacityMethod {
    EscapeMc,
    EquilibriumSolve,
    VariationalBound,
}

/// A capacity value with the per-site measure that produced it.
///
/// For `EscapeMc` the measure holds escape frequencies and `error` the
/// standard error of their sum; for `EquilibriumSolve` the measure is the
/// equilibrium measure and `error` the max residual of the linear system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumSolution {
    pub sites: Vec<LatticePoint>,
    pub measure: Vec<f64>,
    pub capacity: f64,
    pub method: CapacityMethod,
    pub error: f64,
    /// Upper bound on the truncation bias of `capacity` (MC only).
    pub bias_bound: f64,
    pub min_weight: f64,
    pub has_negative_weight: bool,
}

/// `G(z_i - z_j)` on `sites`.
pub fn gram_matrix(sites: &[LatticePoint], oracle: &GreenOracle) -> Result<DMatrix<f64>> {
    let n = sites.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = oracle.g0();
        for j in i + 1..n {
            let g = oracle.between(&sites[i], &sites[j])?;
            m[(i, j)] = g;
            m[(j, i)] = g;
        }
    }
    Ok(m)
}

fn check_dim(sites: &[LatticePoint]) -> Result<usize> {
    validate_sites(sites)?;
    let dim = sites[0].dim();
    if dim <= 2 {
        return Err(Error::RecurrentDimension { dim });
    }
    Ok(dim)
}

/// Estimates `Σ_z P_z(T_Λ = ∞)` with `T_Λ = inf{n > 0 : S_n ∈ Λ}`.
///
/// A walk that leaves `B(0, R)` before returning to `Λ` counts as escaped,
/// so the estimate is biased upward by at most `|Λ|` times the truncation
/// bias bound of `Λ`.
pub fn capacity_mc(
    sites: &[LatticePoint],
    replicas: u64,
    stop_radius: u32,
    seed: u64,
    oracle: &GreenOracle,
) -> Result<EquilibriumSolution> {
    let dim = check_dim(sites)?;
    if replicas == 0 {
        return Err(invalid("replicas", "must be at least 1"));
    }
    let cert = truncation_bias_bound(stop_radius, sites, oracle)?;
    let lookup = SiteLookup::new(sites);
    let r_sq = (stop_radius as i64).pow(2);
    let escapes: Vec<u64> = sites
        .iter()
        .enumerate()
        .map(|(i, z)| {
            (0..replicas)
                .into_par_iter()
                .map(|rep| {
                    let mut rng = StreamKey::new(seed, ((i as u64) << 40) | rep).rng();
                    let mut coords = [0i32; MAX_DIM];
                    coords[..dim].copy_from_slice(z.coords());
                    let mut norm_sq = z.norm_sq();
                    loop {
                        norm_sq += apply_move(&mut coords, draw_move(&mut rng, dim), dim);
                        if lookup.find(&coords[..dim], norm_sq).is_some() {
                            return 0u64;
                        }
                        if norm_sq > r_sq {
                            return 1;
                        }
                    }
                })
                .sum()
        })
        .collect();
    let n = replicas as f64;
    let measure: Vec<f64> = escapes.iter().map(|&e| e as f64 / n).collect();
    let var: f64 = measure
        .iter()
        .map(|&p| if replicas > 1 { p * (1.0 - p) / (n - 1.0) } else { 0.0 })
        .sum();
    let min_weight = measure.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(EquilibriumSolution {
        sites: sites.to_vec(),
        capacity: measure.iter().sum(),
        measure,
        method: CapacityMethod::EscapeMc,
        error: var.sqrt(),
        bias_bound: sites.len() as f64 * cert.bias_bound,
        min_weight,
        has_negative_weight: false,
    })
}

/// Solves `Σ_{z'} G(z, z') e(z') = 1` on `Λ`.
///
/// Every pairwise offset must sit at least two sites inside the oracle box.
pub fn equilibrium_solve(sites: &[LatticePoint], oracle: &GreenOracle) -> Result<EquilibriumSolution> {
    check_dim(sites)?;
    oracle.ensure_covers(sites, 2)?;
    let gram = gram_matrix(sites, oracle)?;
    let n = sites.len();
    let eig = gram.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().copied().fold(0.0f64, |a, b| a.max(b.abs()));
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, |a, b| a.min(b.abs()));
    if !(min > max * 1e-13) {
        return Err(Error::SingularGram { size: n });
    }
    let ones = DVector::from_element(n, 1.0);
    let e = gram
        .clone()
        .lu()
        .solve(&ones)
        .ok_or(Error::SingularGram { size: n })?;
    let residual = (&gram * &e - &ones).amax();
    let measure: Vec<f64> = e.iter().copied().collect();
    let min_weight = measure.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(EquilibriumSolution {
        sites: sites.to_vec(),
        capacity: measure.iter().sum(),
        measure,
        method: CapacityMethod::EquilibriumSolve,
        error: residual,
        bias_bound: 0.0,
        min_weight,
        has_negative_weight: min_weight < 0.0,
    })
}

/// Lower bound from the uniform test measure `μ = |Λ|^{-2/d}` on `Λ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariationalBound {
    /// `Σ μ / max_z Σ_{z'} G(z, z') μ(z')`.
    pub bound: f64,
    /// `max_z Σ_{z'} G(z, z') μ(z')`.
    pub c: f64,
    /// `bound / |Λ|^{1 - 2/d}`.
    pub kappa_hat: f64,
}

pub fn variational_lower_bound(sites: &[LatticePoint], oracle: &GreenOracle) -> Result<VariationalBound> {
    let dim = check_dim(sites)?;
    let gram = gram_matrix(sites, oracle)?;
    let n = sites.len() as f64;
    let mu = n.powf(-2.0 / dim as f64);
    let max_row = gram
        .row_iter()
        .map(|r| r.sum())
        .fold(f64::NEG_INFINITY, f64::max);
    let c = mu * max_row;
    let bound = n * mu / c;
    Ok(VariationalBound {
        bound,
        c,
        kappa_hat: bound / n.powf(1.0 - 2.0 / dim as f64),
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

    fn p(c: &[i32]) -> LatticePoint {
        LatticePoint::new(c).unwrap()
    }

    #[test]
    fn singleton() {
        let g = oracle();
        let s = equilibrium_solve(&[p(&[0; 5])], g).unwrap();
        assert!((s.capacity - 1.0 / g.g0()).abs() < 1e-14);
        let v = variational_lower_bound(&[p(&[0; 5])], g).unwrap();
        assert!((v.bound - 1.0 / g.g0()).abs() < 1e-14);
    }

    #[test]
    fn pair_closed_form() {
        let g = oracle();
        let e1 = p(&[1, 0, 0, 0, 0]);
        let s = equilibrium_solve(&[p(&[0; 5]), e1], g).unwrap();
        let expect = 2.0 / (g.g0() + g.value(&e1).unwrap());
        assert!((s.capacity - expect).abs() < 1e-13);
        assert!(!s.has_negative_weight);
    }

    #[test]
    fn refuses_sets_outside_box() {
        let g = oracle();
        let far = p(&[11, 0, 0, 0, 0]);
        assert!(matches!(
            equilibrium_solve(&[p(&[0; 5]), far], g),
            Err(Error::OracleBoxTooSmall { .. })
        ));
    }

    #[test]
    fn recurrent_dimension_rejected() {
        let g = oracle();
        assert!(matches!(
            capacity_mc(&[p(&[0, 0])], 10, 10, 1, g),
            Err(Error::RecurrentDimension { dim: 2 })
        ));
    }

    #[test]
    fn escape_mc_singleton() {
        let g = oracle();
        let s = capacity_mc(&[p(&[0; 5])], 20_000, 20, 9, g).unwrap();
        let exact = 1.0 / g.g0();
        assert!((s.capacity - exact).abs() <= 3.0 * s.error + s.bias_bound + 0.01);
    }
}
