//! Interpolated intersection functionals `ζ(q)`, permutation-sum moment
//! bounds, the Hölder series, and stretched-exponential tail fits.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::green::{visit_moment_sums, GreenOracle};
use crate::lattice::{simulate_replica, Horizon, LatticePoint, LocalTimeField, StreamKey};
use crate::stats::{weighted_linear_fit, ImportanceWeights, MeanEstimate};
use crate::tilt::HarmonicTilt;

/// `ζ(q) = Σ_z l(z) l̃(z)^{q-1}` for one pair of fields.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterpolatedIntersection {
    pub q: f64,
    pub value: f64,
    /// True when `d/(d-2) < q <= 2`.
    pub in_range: bool,
}

pub fn q_in_range(q: f64, dim: usize) -> bool {
    dim > 2 && q > dim as f64 / (dim as f64 - 2.0) && q <= 2.0
}

pub fn zeta(field: &LocalTimeField, tilde: &LocalTimeField, q: f64) -> InterpolatedIntersection {
    let value = field
        .iter()
        .map(|(z, &l)| {
            let lt = tilde.get(z);
            if lt == 0 {
                0.0
            } else {
                l as f64 * (lt as f64).powf(q - 1.0)
            }
        })
        .sum();
    InterpolatedIntersection {
        q,
        value,
        in_range: q_in_range(q, field.dim()),
    }
}

/// `⟨l, l̃⟩` computed exactly in integers.
pub fn intersection(field: &LocalTimeField, tilde: &LocalTimeField) -> u64 {
    let (small, large) = if field.len() <= tilde.len() {
        (field, tilde)
    } else {
        (tilde, field)
    };
    small
        .iter()
        .map(|(z, &l)| l as u64 * large.get(z) as u64)
        .sum()
}

/// Largest tuple handled by the exact subset recursion.
pub const MAX_PERMUTATION_SITES: usize = 16;

/// `Σ_π Π_i G(z_{π(i-1)}, z_{π(i)})` over all orderings of `sites`, with
/// `z_{π(0)} = 0`. Sites may repeat.
///
/// Evaluated exactly by dynamic programming over (visited subset, last
/// site) rather than by listing all `n!` orderings.
pub fn permutation_moment_bound(sites: &[LatticePoint], oracle: &GreenOracle) -> Result<f64> {
    let origin = LatticePoint::origin(oracle.dim());
    let start: Result<Vec<f64>> = sites.iter().map(|z| oracle.between(&origin, z)).collect();
    let pair = pair_table(sites, oracle)?;
    ordered_path_sum(&start?, &pair, sites.len())
}

fn pair_table(sites: &[LatticePoint], oracle: &GreenOracle) -> Result<Vec<f64>> {
    let n = sites.len();
    let mut t = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            t[i * n + j] = oracle.between(&sites[i], &sites[j])?;
        }
    }
    Ok(t)
}

/// `Σ_π start[π(1)] Π_{i>1} pair[π(i-1), π(i)]` by subset DP.
pub(crate) fn ordered_path_sum(start: &[f64], pair: &[f64], n: usize) -> Result<f64> {
    if n == 0 {
        return Ok(1.0);
    }
    if n > MAX_PERMUTATION_SITES {
        return Err(invalid(
            "sites",
            format!("at most {MAX_PERMUTATION_SITES} sites supported, got {n}"),
        ));
    }
    let full = (1usize << n) - 1;
    let mut f = vec![0.0f64; (full + 1) * n];
    for i in 0..n {
        f[(1 << i) * n + i] = start[i];
    }
    for mask in 1..=full {
        for last in 0..n {
            let v = f[mask * n + last];
            if v == 0.0 || mask & (1 << last) == 0 {
                continue;
            }
            for next in 0..n {
                if mask & (1 << next) == 0 {
                    f[(mask | 1 << next) * n + next] += v * pair[last * n + next];
                }
            }
        }
    }
    Ok(f[full * n..].iter().sum())
}

/// Monte Carlo estimate of `E[Π_i l_∞(z_i)]` from truncated walks.
pub fn mixed_moment_mc(
    sites: &[LatticePoint],
    replicas: u64,
    stop_radius: u32,
    seed: u64,
) -> Result<MeanEstimate> {
    let dim = sites
        .first()
        .ok_or_else(|| invalid("sites", "empty tuple"))?
        .dim();
    Horizon::TruncatedInfinite { stop_radius }.validate(dim)?;
    if replicas == 0 {
        return Err(invalid("replicas", "must be at least 1"));
    }
    if sites.len() == 1 {
        let (s, s2) = visit_moment_sums(dim, sites, replicas, stop_radius, seed)[0];
        return Ok(MeanEstimate::from_sums(s, s2, replicas));
    }
    let horizon = Horizon::TruncatedInfinite { stop_radius };
    let values: Vec<f64> = (0..replicas)
        .into_par_iter()
        .map(|rep| {
            let f = simulate_replica(dim, StreamKey::new(seed, rep), horizon, true)
                .expect("validated horizon");
            sites.iter().map(|z| f.get(z) as f64).product()
        })
        .collect();
    Ok(MeanEstimate::from_samples(&values))
}

/// Partial sums of `Σ_{|z| <= r} (1 + ‖z‖)^{q(2-d)}` over l¹ shells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderSeries {
    pub q: f64,
    pub dim: usize,
    pub radius: u32,
    pub partial_sum: f64,
    /// `shells[r]` is the contribution of `{|z| = r}`.
    pub shells: Vec<f64>,
    /// True iff `q(d - 2) > d`.
    pub convergent: bool,
    /// Upper bound on the sum over `|z| > radius` (convergent case only).
    pub tail_bound: Option<f64>,
}

pub fn holder_series(q: f64, dim: usize, radius: u32) -> Result<HolderSeries> {
    if radius < 1 {
        return Err(invalid("radius", "must be at least 1"));
    }
    if !(1..=crate::lattice::MAX_DIM).contains(&dim) {
        return Err(Error::InvalidDimension {
            dim,
            expected: "1..=8",
        });
    }
    let p = q * (dim as f64 - 2.0);
    let mut shells = vec![0.0; radius as usize + 1];
    let mut cur = vec![0u32; dim];
    shell_sums(0, 0, radius, p, &mut cur, &mut shells);
    let convergent = p > dim as f64;
    Ok(HolderSeries {
        q,
        dim,
        radius,
        partial_sum: shells.iter().sum(),
        shells,
        convergent,
        tail_bound: convergent.then(|| holder_tail_bound(p, dim, radius as f64)),
    })
}

fn shell_sums(pos: usize, min: u32, budget: u32, p: f64, cur: &mut [u32], shells: &mut [f64]) {
    if pos == cur.len() {
        let l1: u32 = cur.iter().sum();
        let norm = cur.iter().map(|&a| (a as f64).powi(2)).sum::<f64>().sqrt();
        shells[l1 as usize] += crate::green::orbit_size(cur) * (1.0 + norm).powf(-p);
        return;
    }
    let mut v = min;
    while v <= budget {
        cur[pos] = v;
        // remaining coordinates are at least v each
        let rest = (cur.len() - pos - 1) as u32 * v;
        if v + rest > budget {
            break;
        }
        shell_sums(pos + 1, v, budget - v, p, cur, shells);
        v += 1;
    }
}

/// Bounds `Σ_{|z| > ρ} (1 + ‖z‖)^{-p}` for `p > d`.
///
/// Uses `#{|z| = r} <= 2^d C(r+d-1, d-1) <= 2^d (r+d-1)^{d-1} / (d-1)!`,
/// `r + d - 1 <= k (1 + r/√d)` with `k = max(√d, d-1)`, `‖z‖ >= |z|/√d`,
/// and an integral comparison for the resulting decreasing summand.
pub fn holder_tail_bound(p: f64, dim: usize, rho: f64) -> f64 {
    let d = dim as f64;
    let sd = d.sqrt();
    let k = sd.max(d - 1.0);
    let fact: f64 = (1..dim).map(|i| i as f64).product();
    let c = 2f64.powi(dim as i32) * k.powf(d - 1.0) / fact;
    c * sd * (1.0 + rho / sd).powf(d - p) / (p - d)
}

/// Samples of `ζ(q)` from independent pairs of truncated walks.
pub fn zeta_samples(dim: usize, q: f64, pairs: u64, stop_radius: u32, seed: u64) -> Result<Vec<f64>> {
    let horizon = Horizon::TruncatedInfinite { stop_radius };
    horizon.validate(dim)?;
    Ok((0..pairs)
        .into_par_iter()
        .map(|i| {
            let a = simulate_replica(dim, StreamKey::new(seed, 2 * i), horizon, true)
                .expect("validated horizon");
            let b = simulate_replica(dim, StreamKey::new(seed, 2 * i + 1), horizon, true)
                .expect("validated horizon");
            zeta(&a, &b, q).value
        })
        .collect())
}

/// Samples of `ζ(q)` with each walk drawn from the defensive mixture of
/// the plain walk (share `plain_share`) and the harmonic tilt of strength
/// `theta`; returns `(values, log-likelihood ratios)`.
pub fn zeta_samples_tilted(
    oracle: &GreenOracle,
    q: f64,
    pairs: u64,
    stop_radius: u32,
    seed: u64,
    theta: f64,
    plain_share: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let tilt = HarmonicTilt::new(theta, oracle)?;
    Horizon::TruncatedInfinite { stop_radius }.validate(oracle.dim())?;
    if !(plain_share > 0.0 && plain_share <= 1.0) {
        return Err(invalid("plain_share", "must lie in (0, 1]"));
    }
    let out: Vec<(f64, f64)> = (0..pairs)
        .into_par_iter()
        .map(|i| {
            let a = tilt
                .sample_mixture(StreamKey::new(seed, 2 * i), stop_radius, plain_share)
                .expect("validated arguments");
            let b = tilt
                .sample_mixture(StreamKey::new(seed, 2 * i + 1), stop_radius, plain_share)
                .expect("validated arguments");
            (zeta(&a.field, &b.field, q).value, a.log_weight + b.log_weight)
        })
        .collect();
    Ok(out.into_iter().unzip())
}

/// One row of [`moment_bound_constant`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub n: u32,
    pub estimate: MeanEstimate,
    /// `Ĉ^n (n!)^q` with the fitted `Ĉ`.
    pub envelope: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentTable {
    pub q: f64,
    pub c_hat: f64,
    pub rows: Vec<MomentRow>,
}

/// MC estimates of `E[ζ(q)^n]`, `n <= n_max <= 4`, and the smallest `Ĉ`
/// with `E[ζ^n] <= Ĉ^n (n!)^q` on the sampled range.
pub fn moment_bound_constant(
    dim: usize,
    q: f64,
    n_max: u32,
    pairs: u64,
    stop_radius: u32,
    seed: u64,
) -> Result<MomentTable> {
    if !(1..=4).contains(&n_max) {
        return Err(invalid("n_max", "must be in 1..=4"));
    }
    let samples = zeta_samples(dim, q, pairs, stop_radius, seed)?;
    moment_table(&samples, q, n_max)
}

pub fn moment_table(samples: &[f64], q: f64, n_max: u32) -> Result<MomentTable> {
    let mut rows = Vec::new();
    let mut c_hat: f64 = 0.0;
    for n in 1..=n_max {
        let powers: Vec<f64> = samples.iter().map(|x| x.powi(n as i32)).collect();
        let est = MeanEstimate::from_samples(&powers);
        let fact: f64 = (1..=n).map(|k| k as f64).product();
        c_hat = c_hat.max((est.mean / fact.powf(q)).powf(1.0 / n as f64));
        rows.push(MomentRow {
            n,
            estimate: est,
            envelope: 0.0,
        });
    }
    for row in &mut rows {
        let fact: f64 = (1..=row.n).map(|k| k as f64).product();
        row.envelope = c_hat.powi(row.n as i32) * fact.powf(q);
    }
    Ok(MomentTable { q, c_hat, rows })
}

/// Default exponent grid `{0.30, 0.35, ..., 0.80}`.
pub fn default_exponent_grid() -> Vec<f64> {
    (0..=10).map(|i| 0.30 + 0.05 * i as f64).collect()
}

/// Minimum number of thresholds a fit needs.
pub const MIN_TAIL_THRESHOLDS: usize = 5;

/// Empirical survival table with a stretched-exponential fit
/// `log P(X > t) ≈ a - κ t^α`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    pub thresholds: Vec<f64>,
    pub survival: Vec<f64>,
    pub se: Vec<f64>,
    pub n_samples: usize,
    pub effective_samples: f64,
    pub kappa: f64,
    pub alpha: f64,
    pub intercept: f64,
    pub r2: f64,
    /// `(α, R²)` for every grid point.
    pub grid_r2: Vec<(f64, f64)>,
}

#[derive(Serialize)]
struct FitSidecar<'a> {
    kappa: f64,
    alpha: f64,
    intercept: f64,
    r2: f64,
    n_samples: usize,
    effective_samples: f64,
    grid_r2: &'a [(f64, f64)],
}

impl TailEstimate {
    /// Writes `threshold,survival,se,n_samples` rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["threshold", "survival", "se", "n_samples"])?;
        for i in 0..self.thresholds.len() {
            wtr.write_record([
                format!("{}", self.thresholds[i]),
                format!("{}", self.survival[i]),
                format!("{}", self.se[i]),
                self.n_samples.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Fit parameters as a JSON object.
    pub fn fit_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&FitSidecar {
            kappa: self.kappa,
            alpha: self.alpha,
            intercept: self.intercept,
            r2: self.r2,
            n_samples: self.n_samples,
            effective_samples: self.effective_samples,
            grid_r2: &self.grid_r2,
        })?)
    }
}

/// Fits unweighted samples.
pub fn tail_fit(samples: &[f64], exponent_grid: &[f64]) -> Result<TailEstimate> {
    tail_fit_weighted(samples, &ImportanceWeights::uniform(samples.len()), exponent_grid)
}

/// Largest relative standard error of a survival estimate kept in a fit.
pub const MAX_TAIL_RELATIVE_SE: f64 = 0.25;

/// Fits self-normalized weighted samples.
///
/// Thresholds are weighted quantiles at survival levels spaced
/// geometrically from 1/2 down to the estimated survival beyond the tenth
/// largest sample. The resolvable range keeps the
/// distinct thresholds exceeded by at least ten samples whose survival
/// estimate has relative standard error at most [`MAX_TAIL_RELATIVE_SE`].
/// Each exponent is scored by the R² of a least-squares fit of `ln S`
/// weighted by `(S / se)²`.
pub fn tail_fit_weighted(
    samples: &[f64],
    weights: &ImportanceWeights,
    exponent_grid: &[f64],
) -> Result<TailEstimate> {
    if samples.len() != weights.len() {
        return Err(invalid("weights", "length differs from samples"));
    }
    if exponent_grid.is_empty() {
        return Err(invalid("exponent_grid", "empty"));
    }
    let ess = weights.ess();
    // the estimated survival just below the tenth largest usable sample
    let mut usable: Vec<f64> = samples
        .iter()
        .zip(&weights.weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(&x, _)| x)
        .collect();
    usable.sort_by(|a, b| b.total_cmp(a));
    let floor = match usable.get(10) {
        Some(&t) => {
            let ind: Vec<f64> = samples.iter().map(|&x| if x > t { 1.0 } else { 0.0 }).collect();
            weights.estimate(&ind).mean
        }
        None => 1.0,
    };
    let levels = 24;
    let mut thresholds: Vec<f64> = Vec::new();
    if floor < 0.5 {
        for i in 0..levels {
            let p = 0.5 * (floor / 0.5).powf(i as f64 / (levels - 1) as f64);
            if let Some(t) = weights.quantile(samples, 1.0 - p) {
                thresholds.push(t);
            }
        }
    }
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    let mut table = (Vec::new(), Vec::new(), Vec::new());
    for &t in &thresholds {
        let ind: Vec<f64> = samples.iter().map(|&x| if x > t { 1.0 } else { 0.0 }).collect();
        let hits = samples
            .iter()
            .zip(&weights.weights)
            .filter(|(&x, &w)| x > t && w > 0.0)
            .count();
        let est = weights.estimate(&ind);
        if hits >= 10 && est.mean > 0.0 && est.se <= MAX_TAIL_RELATIVE_SE * est.mean {
            table.0.push(t);
            table.1.push(est.mean);
            table.2.push(est.se);
        }
    }
    let (thresholds, survival, se) = table;
    if thresholds.len() < MIN_TAIL_THRESHOLDS {
        return Err(Error::InsufficientTailResolution {
            usable: thresholds.len(),
            required: MIN_TAIL_THRESHOLDS,
        });
    }
    let log_s: Vec<f64> = survival.iter().map(|s| s.ln()).collect();
    // Var(ln S) ≈ (se / S)²
    let fit_w: Vec<f64> = survival.iter().zip(&se).map(|(s, e)| (s / e.max(1e-300)).powi(2)).collect();
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0, 0.0);
    let mut grid_r2 = Vec::with_capacity(exponent_grid.len());
    for &alpha in exponent_grid {
        let x: Vec<f64> = thresholds.iter().map(|t| t.powf(alpha)).collect();
        let (a, b, r2) = weighted_linear_fit(&x, &log_s, &fit_w);
        grid_r2.push((alpha, r2));
        if r2 > best.0 {
            best = (r2, alpha, a, b);
        }
    }
    Ok(TailEstimate {
        thresholds,
        survival,
        se,
        n_samples: samples.len(),
        effective_samples: ess,
        kappa: -best.3,
        alpha: best.1,
        intercept: best.2,
        r2: best.0,
        grid_r2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn p(c: &[i32]) -> LatticePoint {
        LatticePoint::new(c).unwrap()
    }

    #[test]
    fn zeta_small_cases() {
        let o = p(&[0; 5]);
        let a = LocalTimeField::from_counts(5, [(o, 2)]);
        let b = LocalTimeField::from_counts(5, [(o, 3)]);
        assert_eq!(zeta(&a, &b, 2.0).value, 6.0);
        assert_eq!(intersection(&a, &b), 6);
        let c = LocalTimeField::from_counts(5, [(p(&[1, 0, 0, 0, 0]), 4)]);
        assert_eq!(zeta(&a, &c, 1.8).value, 0.0);
        assert!(zeta(&a, &b, 1.8).in_range);
        assert!(!zeta(&a, &b, 5.0 / 3.0).in_range);
    }

    #[test]
    fn permutation_bound_small_cases() {
        let g = GreenOracle::solve(5, 8).unwrap();
        let z = p(&[1, 1, 0, 0, 0]);
        let b1 = permutation_moment_bound(&[z], &g).unwrap();
        assert!((b1 - g.value(&z).unwrap()).abs() < 1e-15);
        let b2 = permutation_moment_bound(&[z, z], &g).unwrap();
        assert!((b2 - 2.0 * g.value(&z).unwrap() * g.g0()).abs() < 1e-14);
        // brute force over 3! orderings
        let s = [p(&[1, 0, 0, 0, 0]), p(&[0, 2, 0, 0, 0]), p(&[1, 0, 1, 0, 0])];
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let o = p(&[0; 5]);
        let brute: f64 = perms
            .iter()
            .map(|pi| {
                let mut prev = o;
                let mut prod = 1.0;
                for &i in pi {
                    prod *= g.between(&prev, &s[i]).unwrap();
                    prev = s[i];
                }
                prod
            })
            .sum();
        assert!((permutation_moment_bound(&s, &g).unwrap() - brute).abs() < 1e-15);
        assert!(matches!(
            permutation_moment_bound(&[p(&[9, 0, 0, 0, 0])], &g),
            Err(Error::OracleBoxTooSmall { .. })
        ));
    }

    #[test]
    fn holder_series_flags_and_tail() {
        let s = holder_series(2.0, 5, 40).unwrap();
        assert!(s.convergent);
        // l¹ shells grow up to r = 4, then decay like r^{-2}
        assert!(s.shells.windows(2).skip(4).all(|w| w[1] < w[0]));
        let small = holder_series(2.0, 5, 20).unwrap();
        assert!(s.partial_sum - small.partial_sum < small.tail_bound.unwrap());
        assert!(!holder_series(5.0 / 3.0, 5, 10).unwrap().convergent);
        // shell point counts: q = 0 counts lattice points
        let count = holder_series(0.0, 3, 2).unwrap();
        assert_eq!(count.shells, vec![1.0, 6.0, 18.0]);
    }

    #[test]
    fn tail_fit_recovers_square_of_exponential() {
        let mut rng = StreamKey::new(11, 0).rng();
        let xs: Vec<f64> = (0..200_000)
            .map(|_| {
                let u: f64 = rng.random();
                (-(1.0 - u).ln()).powi(2)
            })
            .collect();
        let fit = tail_fit(&xs, &default_exponent_grid()).unwrap();
        assert!((fit.alpha - 0.5).abs() <= 0.05 + 1e-9, "alpha {}", fit.alpha);
        assert!(fit.survival.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn tail_fit_refuses_constant_samples() {
        let xs = vec![3.0; 20_000];
        assert!(matches!(
            tail_fit(&xs, &default_exponent_grid()),
            Err(Error::InsufficientTailResolution { .. })
        ));
    }

    #[test]
    fn moment_table_is_log_convex() {
        let xs: Vec<f64> = (1..=1000).map(|i| (i % 13) as f64).collect();
        let t = moment_table(&xs, 2.0, 4).unwrap();
        let m: Vec<f64> = t.rows.iter().map(|r| r.estimate.mean.ln()).collect();
        for w in m.windows(3) {
            assert!(w[1] <= 0.5 * (w[0] + w[2]) + 1e-12);
        }
        assert!(t.rows.iter().all(|r| r.estimate.mean <= r.envelope * (1.0 + 1e-12)));
    }
}
