//! Finite-volume solver for the variational rate
//! `I(Λ) = inf{‖h‖₂ : h >= 0 on Λ, ‖U_h‖ >= 1}` with
//! `U_h f = √(e^h - 1) (G - δ₀) * (f √(e^h - 1))`.
//!
//! The scale of `h` is eliminated by monotone calibration, which leaves a
//! search over directions. Directions are kept constant on the orbits of the
//! lattice symmetries that preserve `Λ`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::green::GreenOracle;
use crate::lattice::LatticePoint;
use crate::sets::{act, hyperoctahedral_group, validate_sites};

/// Power-iteration residual tolerance.
pub const POWER_TOLERANCE: f64 = 1e-10;
/// Width of the calibration window `[1, 1 + tol]`.
pub const CALIBRATION_TOLERANCE: f64 = 1e-6;
const POWER_MAX_ITERATIONS: usize = 20_000;
/// `e^{700}` is close to the largest finite double.
const MAX_EXPONENT: f64 = 700.0;

/// A nonnegative function on a finite set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileFunction {
    pub support: Vec<LatticePoint>,
    pub values: Vec<f64>,
    pub l2_norm: f64,
}

impl ProfileFunction {
    pub fn new(support: Vec<LatticePoint>, values: Vec<f64>) -> Result<Self> {
        validate_sites(&support)?;
        if values.len() != support.len() {
            return Err(invalid("values", "length differs from the support"));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(invalid("values", "profile must be finite and nonnegative"));
        }
        let l2_norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok(Self {
            support,
            values,
            l2_norm,
        })
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            support: self.support.clone(),
            values: self.values.iter().map(|v| c * v).collect(),
            l2_norm: c * self.l2_norm,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

/// `U_h` as a dense symmetric matrix on `Λ × Λ`.
#[derive(Clone, Debug, PartialEq)]
pub struct IntersectionOperator {
    pub kernel: DMatrix<f64>,
    pub norm: f64,
    pub iterations: usize,
    /// True when power iteration hit its cap and the dense eigensolver was used.
    pub used_fallback: bool,
}

/// `(G - δ₀)(x - y)` on `Λ`.
pub fn green_minus_delta(sites: &[LatticePoint], oracle: &GreenOracle) -> Result<DMatrix<f64>> {
    validate_sites(sites)?;
    oracle.ensure_covers(sites, 0)?;
    let n = sites.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = oracle.g0() - 1.0;
        for j in i + 1..n {
            let g = oracle.between(&sites[i], &sites[j])?;
            m[(i, j)] = g;
            m[(j, i)] = g;
        }
    }
    Ok(m)
}

fn weighted_kernel(base: &DMatrix<f64>, values: &[f64]) -> DMatrix<f64> {
    let g: Vec<f64> = values.iter().map(|&h| h.exp_m1().sqrt()).collect();
    let n = values.len();
    DMatrix::from_fn(n, n, |i, j| g[i] * base[(i, j)] * g[j])
}

/// Builds `U_h` and computes its norm.
pub fn build_operator(h: &ProfileFunction, oracle: &GreenOracle) -> Result<IntersectionOperator> {
    let base = green_minus_delta(&h.support, oracle)?;
    Ok(IntersectionOperator::from_kernel(weighted_kernel(&base, &h.values), POWER_TOLERANCE))
}

impl IntersectionOperator {
    pub fn from_kernel(kernel: DMatrix<f64>, tol: f64) -> Self {
        let start = DVector::from_element(kernel.nrows(), 1.0);
        let (norm, iterations, used_fallback) = operator_norm_from(&kernel, &start, tol).0;
        Self {
            kernel,
            norm,
            iterations,
            used_fallback,
        }
    }
}

/// Largest eigenvalue of a symmetric nonnegative kernel (its operator norm)
/// by power iteration to residual `tol`, falling back to a dense
/// eigendecomposition when iteration does not converge.
pub fn operator_norm(kernel: &DMatrix<f64>, tol: f64) -> (f64, usize, bool) {
    operator_norm_from(kernel, &DVector::from_element(kernel.nrows(), 1.0), tol).0
}

type NormOutcome = ((f64, usize, bool), DVector<f64>);

fn operator_norm_from(kernel: &DMatrix<f64>, start: &DVector<f64>, tol: f64) -> NormOutcome {
    let n = kernel.nrows();
    if n == 0 || kernel.iter().all(|&x| x == 0.0) {
        return ((0.0, 0, false), DVector::from_element(n, 1.0));
    }
    let mut v = start.clone();
    if v.norm() == 0.0 {
        v = DVector::from_element(n, 1.0);
    }
    v /= v.norm();
    let mut w = DVector::zeros(n);
    for it in 1..=POWER_MAX_ITERATIONS {
        kernel.mul_to(&v, &mut w);
        let lambda = v.dot(&w);
        let scale = lambda.abs().max(f64::MIN_POSITIVE);
        let residual = (&w - &v * lambda).norm();
        if residual <= tol * scale {
            return ((lambda, it, false), v);
        }
        let wn = w.norm();
        if wn == 0.0 {
            break;
        }
        v.copy_from(&w);
        v /= wn;
    }
    let eig = SymmetricEigen::new(kernel.clone());
    let (i, lambda) = eig
        .eigenvalues
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
    ((lambda, POWER_MAX_ITERATIONS, true), eig.eigenvectors.column(i).abs())
}

/// Result of calibrating a direction to the unit-norm level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub scale: f64,
    pub profile: ProfileFunction,
    /// `‖U_h‖` at the returned profile, in `[1, 1 + tol]`.
    pub norm: f64,
    pub evaluations: usize,
}

/// Finds `c` with `‖U_{c h}‖ ∈ [1, 1 + tol]`.
pub fn calibrate_scale(direction: &ProfileFunction, oracle: &GreenOracle, tol: f64) -> Result<Calibration> {
    let base = green_minus_delta(&direction.support, oracle)?;
    calibrate_with(&base, direction, tol, None)
}

fn calibrate_with(
    base: &DMatrix<f64>,
    direction: &ProfileFunction,
    tol: f64,
    guess: Option<f64>,
) -> Result<Calibration> {
    if !(tol > 0.0) {
        return Err(invalid("tol", "must be positive"));
    }
    let hmax = direction.max();
    if hmax == 0.0 {
        return Err(Error::DirectionDegenerate { max_scale: 0.0 });
    }
    let c_cap = MAX_EXPONENT / hmax;
    let mut vec = DVector::from_element(direction.values.len(), 1.0);
    let mut evaluations = 0;
    let mut norm_at = |c: f64, vec: &mut DVector<f64>| {
        evaluations += 1;
        let vals: Vec<f64> = direction.values.iter().map(|v| c * v).collect();
        let k = weighted_kernel(base, &vals);
        let ((lambda, _, _), v) = operator_norm_from(&k, vec, POWER_TOLERANCE);
        *vec = v;
        lambda
    };
    // bracket [lo, hi] with f(lo) < 1 <= f(hi)
    let mut hi = guess.unwrap_or(1.0).clamp(1e-12, c_cap);
    let mut f_hi = norm_at(hi, &mut vec);
    let (mut lo, mut f_lo);
    if f_hi >= 1.0 {
        lo = hi;
        f_lo = f_hi;
        while f_lo >= 1.0 {
            hi = lo;
            f_hi = f_lo;
            lo /= 2.0;
            if lo < 1e-300 {
                return Err(Error::DirectionDegenerate { max_scale: lo });
            }
            f_lo = norm_at(lo, &mut vec);
        }
    } else {
        lo = hi;
        f_lo = f_hi;
        while f_hi < 1.0 {
            if hi >= c_cap {
                return Err(Error::DirectionDegenerate { max_scale: hi });
            }
            lo = hi;
            f_lo = f_hi;
            hi = (hi * 2.0).min(c_cap);
            f_hi = norm_at(hi, &mut vec);
        }
    }
    // Illinois false position with a bisection safeguard
    let (mut fl, mut fh) = (f_lo - 1.0, f_hi - 1.0);
    let mut prev = 0i8;
    for _ in 0..200 {
        if f_hi <= 1.0 + tol {
            break;
        }
        let mut c = lo - fl * (hi - lo) / (fh - fl);
        if !(c > lo && c < hi) {
            c = 0.5 * (lo + hi);
        }
        if c <= lo || c >= hi {
            break;
        }
        let f = norm_at(c, &mut vec);
        if f >= 1.0 {
            hi = c;
            f_hi = f;
            fh = f - 1.0;
            if prev == 1 {
                fl /= 2.0;
            }
            prev = 1;
        } else {
            lo = c;
            fl = f - 1.0;
            if prev == -1 {
                fh /= 2.0;
            }
            prev = -1;
        }
    }
    if !(f_hi >= 1.0 && f_hi <= 1.0 + tol) {
        return Err(Error::IllConditioned {
            residual: f_hi - 1.0,
            iterations: evaluations,
            tolerance: tol,
        });
    }
    Ok(Calibration {
        scale: hi,
        profile: direction.scaled(hi),
        norm: f_hi,
        evaluations,
    })
}

/// Closed-form `I({z}) = ln(1 + 1/(G(0) - 1))`.
pub fn singleton_rate(oracle: &GreenOracle) -> f64 {
    (1.0 / (oracle.g0() - 1.0)).ln_1p()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    /// Initial relative step of the multiplicative moves.
    pub initial_step: f64,
    pub min_step: f64,
    /// Relative improvement below which a move is rejected.
    pub improvement_floor: f64,
    pub max_sweeps: usize,
    pub calibration_tol: f64,
    /// Keep directions constant on orbits of the symmetries preserving `Λ`.
    pub use_symmetry: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            initial_step: 0.5,
            min_step: 1e-4,
            improvement_floor: 1e-5,
            max_sweeps: 400,
            calibration_tol: CALIBRATION_TOLERANCE,
            use_symmetry: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub start: String,
    pub sweep: usize,
    pub step: f64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateResult {
    pub lambda_set: Vec<LatticePoint>,
    pub value: f64,
    pub argmin_profile: ProfileFunction,
    /// `‖U_h‖` at the returned profile.
    pub feasibility: f64,
    /// The single-site value every start is compared against.
    pub baseline: f64,
    /// True when no start beat the baseline by the improvement floor.
    pub stalled: bool,
    pub optimizer_trace: Vec<TraceEntry>,
}

/// Orbits of `Λ` under the signed coordinate permutations that map `Λ` to
/// itself. Falls back to singletons in dimensions above 6.
pub fn symmetry_orbits(sites: &[LatticePoint]) -> Vec<Vec<usize>> {
    let n = sites.len();
    let dim = sites[0].dim();
    let mut owner: Vec<usize> = (0..n).collect();
    if dim <= 6 {
        let index: rustc_hash::FxHashMap<LatticePoint, usize> =
            sites.iter().enumerate().map(|(i, z)| (*z, i)).collect();
        for g in hyperoctahedral_group(dim) {
            let img: Option<Vec<usize>> = sites.iter().map(|z| index.get(&act(&g, z)).copied()).collect();
            if let Some(img) = img {
                for (i, j) in img.into_iter().enumerate() {
                    // union by smallest representative
                    let (a, b) = (find(&mut owner, i), find(&mut owner, j));
                    owner[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut orbits: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for i in 0..n {
        let r = find(&mut owner, i);
        if slot[r] == usize::MAX {
            slot[r] = orbits.len();
            orbits.push(Vec::new());
        }
        orbits[slot[r]].push(i);
    }
    orbits
}

fn find(owner: &mut [usize], mut i: usize) -> usize {
    while owner[i] != i {
        owner[i] = owner[owner[i]];
        i = owner[i];
    }
    i
}

struct Problem<'a> {
    sites: &'a [LatticePoint],
    base: DMatrix<f64>,
    orbits: Vec<Vec<usize>>,
    tol: f64,
}

impl Problem<'_> {
    fn expand(&self, block: &[f64]) -> Vec<f64> {
        let mut v = vec![0.0; self.sites.len()];
        for (o, &x) in self.orbits.iter().zip(block) {
            for &i in o {
                v[i] = x;
            }
        }
        v
    }

    fn evaluate(&self, block: &[f64], guess: Option<f64>) -> Option<Calibration> {
        let dir = ProfileFunction::new(self.sites.to_vec(), self.expand(block)).ok()?;
        calibrate_with(&self.base, &dir, self.tol, guess).ok()
    }
}

fn local_search(p: &Problem, name: &str, start: Vec<f64>, cfg: &OptimizerConfig) -> Option<(Calibration, Vec<TraceEntry>)> {
    let mut x = start;
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return None;
    }
    x.iter_mut().for_each(|v| *v /= norm);
    let mut best = p.evaluate(&x, None)?;
    let mut trace = vec![TraceEntry {
        start: name.to_string(),
        sweep: 0,
        step: cfg.initial_step,
        value: best.profile.l2_norm,
    }];
    let mut step = cfg.initial_step;
    for sweep in 1..=cfg.max_sweeps {
        if step < cfg.min_step {
            break;
        }
        let mut improved = false;
        for i in 0..x.len() {
            let floor = step * x.iter().copied().fold(0.0, f64::max);
            for up in [true, false] {
                let mut y = x.clone();
                y[i] = if up { (y[i] * (1.0 + step)).max(floor) } else { y[i] / (1.0 + step) };
                if y[i] == x[i] {
                    continue;
                }
                let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
                y.iter_mut().for_each(|v| *v /= ny);
                if let Some(c) = p.evaluate(&y, Some(best.scale)) {
                    if c.profile.l2_norm < best.profile.l2_norm * (1.0 - cfg.improvement_floor) {
                        best = c;
                        x = y;
                        improved = true;
                        break;
                    }
                }
            }
        }
        if !improved {
            step /= 2.0;
        }
        trace.push(TraceEntry {
            start: name.to_string(),
            sweep,
            step,
            value: best.profile.l2_norm,
        });
    }
    Some((best, trace))
}

/// Minimizes `‖h‖₂` over profiles with `‖U_h‖ ∈ [1, 1 + tol]`.
pub fn minimize_rate(sites: &[LatticePoint], oracle: &GreenOracle, cfg: &OptimizerConfig) -> Result<RateResult> {
    minimize_rate_with_starts(sites, oracle, cfg, &[])
}

/// As [`minimize_rate`], with extra starting profiles (for example the
/// optimum on a smaller set, extended by zero).
pub fn minimize_rate_with_starts(
    sites: &[LatticePoint],
    oracle: &GreenOracle,
    cfg: &OptimizerConfig,
    extra: &[ProfileFunction],
) -> Result<RateResult> {
    validate_sites(sites)?;
    let base = green_minus_delta(sites, oracle)?;
    let orbits = if cfg.use_symmetry {
        symmetry_orbits(sites)
    } else {
        (0..sites.len()).map(|i| vec![i]).collect()
    };
    let p = Problem {
        sites,
        base,
        orbits,
        tol: cfg.calibration_tol,
    };
    let k = p.orbits.len();
    let average = |v: &[f64]| -> Vec<f64> {
        p.orbits
            .iter()
            .map(|o| o.iter().map(|&i| v[i]).sum::<f64>() / o.len() as f64)
            .collect()
    };

    let mut starts: Vec<(String, Vec<f64>)> = vec![("uniform".into(), vec![1.0; k])];
    let eig = SymmetricEigen::new(p.base.clone());
    let top = eig
        .eigenvalues
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a })
        .0;
    let v: Vec<f64> = eig.eigenvectors.column(top).iter().map(|x| x.abs()).collect();
    starts.push(("top_eigenvector".into(), average(&v)));
    // a point mass on the orbit nearest the origin
    let nearest = (0..k)
        .min_by_key(|&o| (sites[p.orbits[o][0]].norm_sq(), p.orbits[o].len()))
        .expect("nonempty");
    let mut peak = vec![0.0; k];
    peak[nearest] = 1.0;
    starts.push(("peak".into(), peak));
    for (i, h) in extra.iter().enumerate() {
        let mut v = vec![0.0; sites.len()];
        for (z, &x) in h.support.iter().zip(&h.values) {
            if let Some(j) = sites.iter().position(|s| s == z) {
                v[j] = x;
            }
        }
        starts.push((format!("extra_{i}"), average(&v)));
    }

    let runs: Vec<Option<(Calibration, Vec<TraceEntry>)>> = starts
        .par_iter()
        .map(|(name, x)| local_search(&p, name, x.clone(), cfg))
        .collect();
    let mut trace = Vec::new();
    let mut best: Option<Calibration> = None;
    for (c, t) in runs.into_iter().flatten() {
        trace.extend(t);
        let better = match &best {
            None => true,
            Some(b) => {
                let key = |c: &Calibration| c.profile.l2_norm;
                key(&c) < key(b) || (key(&c) == key(b) && c.profile.values < b.profile.values)
            }
        };
        if better {
            best = Some(c);
        }
    }
    let baseline = singleton_rate(oracle);
    let best = best.ok_or(Error::DirectionDegenerate { max_scale: 0.0 })?;
    let stalled = best.profile.l2_norm >= baseline * (1.0 - cfg.improvement_floor);
    let (profile, feasibility) = if stalled && best.profile.l2_norm > baseline {
        // fall back to the single-site optimum
        let mut v = vec![0.0; sites.len()];
        v[p.orbits[nearest][0]] = 1.0;
        let c = calibrate_with(&p.base, &ProfileFunction::new(sites.to_vec(), v)?, cfg.calibration_tol, None)?;
        (c.profile, c.norm)
    } else {
        (best.profile, best.norm)
    };
    Ok(RateResult {
        lambda_set: sites.to_vec(),
        value: profile.l2_norm,
        argmin_profile: profile,
        feasibility,
        baseline,
        stalled,
        optimizer_trace: trace,
    })
}

/// Finite-volume surrogate slopes of the log tail probabilities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatePrediction {
    pub xi: f64,
    /// `-I √ξ` for the self-intersection tail.
    pub self_slope: f64,
    /// `-2 I √ξ` for the intersection tail.
    pub intersection_slope: f64,
}

pub fn rate_predictions(rate: &RateResult, xi_grid: &[f64]) -> Result<Vec<RatePrediction>> {
    xi_grid
        .iter()
        .map(|&xi| {
            if !(xi > 0.0) {
                return Err(invalid("xi", "must be positive"));
            }
            let s = -rate.value * xi.sqrt();
            Ok(RatePrediction {
                xi,
                self_slope: s,
                intersection_slope: 2.0 * s,
            })
        })
        .collect()
}
