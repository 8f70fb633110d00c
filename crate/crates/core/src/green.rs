//! Green's function of the lazy walk.
//!
//! [`GreenOracle`] tabulates `G(z) = E_0[l_∞(z)]` on the box `‖z‖∞ <= B` by
//! solving `(I - P) G = δ_0` with zero exterior values. Only one
//! representative per hypercubic orbit is stored (sorted absolute
//! coordinates), which shrinks the `d = 5`, `B = 40` system from `81^5`
//! unknowns to about 1.2 million. Weighting each orbit equation by the
//! orbit size makes the reduced operator symmetric positive definite, and it
//! is solved by Jacobi-preconditioned conjugate gradients.
//!
//! Values outside the table are never silently extrapolated: callers either
//! get `None` from [`GreenOracle::value`] or explicitly ask for the radial
//! envelope, an upper bound of the form `A(r) r^{2-d}` calibrated on the
//! inner quarter of the table.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lattice::{
    apply_move, draw_move, post_exit_visit_bound, LatticePoint, StreamKey, MAX_DIM,
};
use crate::stats::MeanEstimate;

/// Residual tolerance of the box solve.
pub const SOLVE_TOLERANCE: f64 = 1e-12;

const MAX_CG_ITERATIONS: usize = 50_000;

/// Binomial coefficients `C(n, k)` for `n <= n_max`, `k <= k_max`.
#[derive(Clone, Debug)]
struct Binomial {
    k_max: usize,
    table: Vec<u64>,
}

impl Binomial {
    fn new(n_max: usize, k_max: usize) -> Self {
        let mut table = vec![0u64; (n_max + 1) * (k_max + 1)];
        for n in 0..=n_max {
            table[n * (k_max + 1)] = 1;
            for k in 1..=k_max.min(n) {
                let a = table[(n - 1) * (k_max + 1) + k - 1];
                let b = if k <= n - 1 {
                    table[(n - 1) * (k_max + 1) + k]
                } else {
                    0
                };
                table[n * (k_max + 1) + k] = a + b;
            }
        }
        Self { k_max, table }
    }

    #[inline]
    fn get(&self, n: usize, k: usize) -> u64 {
        self.table[n * (self.k_max + 1) + k]
    }
}

/// Index of hypercubic orbits inside the box `‖z‖∞ <= radius`.
#[derive(Clone, Debug)]
struct OrbitIndex {
    dim: usize,
    radius: u32,
    binom: Binomial,
}

impl OrbitIndex {
    fn new(dim: usize, radius: u32) -> Self {
        Self {
            dim,
            radius,
            binom: Binomial::new(radius as usize + dim, dim),
        }
    }

    fn len(&self) -> usize {
        self.binom.get(self.radius as usize + self.dim, self.dim) as usize
    }

    /// Rank of a nondecreasing sequence of absolute coordinates.
    #[inline]
    fn rank_sorted(&self, sorted: &[u32]) -> usize {
        sorted
            .iter()
            .enumerate()
            .map(|(i, &a)| self.binom.get(a as usize + i, i + 1) as usize)
            .sum()
    }

    /// Sorted absolute coordinates of `z`, or `None` outside the box.
    #[inline]
    fn canonical(&self, coords: &[i32]) -> Option<[u32; MAX_DIM]> {
        let mut a = [0u32; MAX_DIM];
        for (slot, &c) in a.iter_mut().zip(coords) {
            let v = c.unsigned_abs();
            if v > self.radius {
                return None;
            }
            *slot = v;
        }
        a[..self.dim].sort_unstable();
        Some(a)
    }

    fn rank(&self, coords: &[i32]) -> Option<usize> {
        self.canonical(coords)
            .map(|a| self.rank_sorted(&a[..self.dim]))
    }

    /// All canonical points ordered by rank.
    fn points(&self) -> Vec<[u32; MAX_DIM]> {
        let mut out = vec![[0u32; MAX_DIM]; self.len()];
        let mut cur = [0u32; MAX_DIM];
        self.fill(0, 0, &mut cur, &mut out);
        out
    }

    fn fill(&self, pos: usize, min: u32, cur: &mut [u32; MAX_DIM], out: &mut [[u32; MAX_DIM]]) {
        if pos == self.dim {
            let r = self.rank_sorted(&cur[..self.dim]);
            out[r] = *cur;
            return;
        }
        for v in min..=self.radius {
            cur[pos] = v;
            self.fill(pos + 1, v, cur, out);
        }
    }
}

/// Number of lattice points in the hypercubic orbit of a canonical point.
pub(crate) fn orbit_size(sorted: &[u32]) -> f64 {
    let d = sorted.len();
    let nonzero = sorted.iter().filter(|&&a| a != 0).count();
    let mut size = (1u64 << nonzero) as f64 * factorial(d);
    let mut i = 0;
    while i < d {
        let mut j = i;
        while j < d && sorted[j] == sorted[i] {
            j += 1;
        }
        size /= factorial(j - i);
        i = j;
    }
    size
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Reduced operator `W (2d I - M)` in CSR form, where `M` sums the `2d`
/// non-lazy neighbours by orbit and `W` holds orbit sizes.
struct ReducedOperator {
    two_d: f64,
    weight: Vec<f64>,
    row_ptr: Vec<u32>,
    col: Vec<u32>,
    mult: Vec<f64>,
}

impl ReducedOperator {
    fn build(index: &OrbitIndex, points: &[[u32; MAX_DIM]]) -> Self {
        let d = index.dim;
        let n = points.len();
        let mut weight = Vec::with_capacity(n);
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col = Vec::with_capacity(n * 2 * d);
        let mut mult = Vec::with_capacity(n * 2 * d);
        row_ptr.push(0u32);
        let mut scratch: Vec<(u32, f64)> = Vec::with_capacity(2 * d);
        for p in points {
            weight.push(orbit_size(&p[..d]));
            scratch.clear();
            for axis in 0..d {
                for delta in [1i64, -1] {
                    let v = p[axis] as i64 + delta;
                    let v = v.unsigned_abs() as u32;
                    if v > index.radius {
                        continue;
                    }
                    let mut q = *p;
                    q[axis] = v;
                    q[..d].sort_unstable();
                    let r = index.rank_sorted(&q[..d]) as u32;
                    match scratch.iter_mut().find(|(c, _)| *c == r) {
                        Some(entry) => entry.1 += 1.0,
                        None => scratch.push((r, 1.0)),
                    }
                }
            }
            for &(c, m) in &scratch {
                col.push(c);
                mult.push(m);
            }
            row_ptr.push(col.len() as u32);
        }
        Self {
            two_d: 2.0 * d as f64,
            weight,
            row_ptr,
            col,
            mult,
        }
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.par_iter_mut().enumerate().for_each(|(i, yi)| {
            let (a, b) = (self.row_ptr[i] as usize, self.row_ptr[i + 1] as usize);
            let mut s = 0.0;
            for k in a..b {
                s += self.mult[k] * x[self.col[k] as usize];
            }
            *yi = self.weight[i] * (self.two_d * x[i] - s);
        });
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct SolveOutcome {
    values: Vec<f64>,
    residual: f64,
    iterations: usize,
}

fn solve_box(dim: usize, radius: u32, tolerance: f64) -> Result<(OrbitIndex, Vec<[u32; MAX_DIM]>, SolveOutcome)> {
    let index = OrbitIndex::new(dim, radius);
    let points = index.points();
    let op = ReducedOperator::build(&index, &points);
    let n = points.len();
    let scale = 2.0 * dim as f64 + 1.0;
    let diag: Vec<f64> = op.weight.iter().map(|w| w * op.two_d).collect();

    // Pointwise residual of (I - P) G = δ_0.
    let eq_residual = |r: &[f64]| -> f64 {
        r.iter()
            .zip(&op.weight)
            .map(|(ri, wi)| (ri / (wi * scale)).abs())
            .fold(0.0, f64::max)
    };

    let mut b = vec![0.0; n];
    b[0] = scale; // orbit of the origin has size 1
    let mut x = vec![0.0; n];
    let mut r = b.clone();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(a, d)| a / d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut residual = eq_residual(&r);
    let mut iterations = 0;
    while iterations < MAX_CG_ITERATIONS {
        if residual <= tolerance {
            // confirm against the true residual before accepting
            op.apply(&x, &mut ap);
            for i in 0..n {
                r[i] = b[i] - ap[i];
            }
            residual = eq_residual(&r);
            if residual <= tolerance {
                break;
            }
            for i in 0..n {
                z[i] = r[i] / diag[i];
            }
            p.copy_from_slice(&z);
            rz = dot(&r, &z);
        }
        op.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        iterations += 1;
        if iterations % 200 == 0 {
            op.apply(&x, &mut ap);
            for i in 0..n {
                r[i] = b[i] - ap[i];
            }
        }
        residual = eq_residual(&r);
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    if residual > tolerance {
        return Err(Error::IllConditioned {
            residual,
            iterations,
            tolerance,
        });
    }
    Ok((
        index,
        points,
        SolveOutcome {
            values: x,
            residual,
            iterations,
        },
    ))
}

/// Radial upper envelope `sup_{‖x‖ >= r} G(x) <= A(r) r^{2-d}`.
#[derive(Clone, Debug)]
struct Envelope {
    /// `(norm, max ratio over entries with norm >= this one)`, ascending.
    shells: Vec<(f64, f64)>,
    cap: f64,
    g0: f64,
    dim: usize,
}

impl Envelope {
    fn build(dim: usize, radius: u32, g0: f64, points: &[[u32; MAX_DIM]], values: &[f64], err: f64) -> Self {
        // The truncation error is roughly uniform over the box, so only the
        // inner quarter is used where it stays small relative to G.
        let inner = (radius as f64 / 4.0).max(1.0);
        let mut entries: Vec<(f64, f64)> = points
            .iter()
            .zip(values)
            .filter(|(p, _)| p[dim - 1] > 0)
            .map(|(p, &g)| {
                let n = p[..dim].iter().map(|&a| (a as f64) * (a as f64)).sum::<f64>().sqrt();
                (n, (g + err) * n.powi(dim as i32 - 2))
            })
            .filter(|(n, _)| *n <= inner)
            .collect();
        entries.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut running = 0.0f64;
        for e in entries.iter_mut().rev() {
            running = running.max(e.1);
            e.1 = running;
        }
        Self {
            shells: entries,
            cap: (radius as f64 / 8.0).max(1.0),
            g0,
            dim,
        }
    }

    fn constant(&self, r: f64) -> f64 {
        let r = r.min(self.cap);
        let idx = self.shells.partition_point(|(n, _)| *n < r);
        if idx < self.shells.len() {
            self.shells[idx].1
        } else {
            self.shells.last().map(|s| s.1).unwrap_or(self.g0)
        }
    }

    fn value(&self, r: f64) -> f64 {
        if r < 1.0 {
            return self.g0;
        }
        (self.constant(r) * r.powi(2 - self.dim as i32)).min(self.g0)
    }
}

/// Tabulated lazy-walk Green's function on `‖z‖∞ <= box_radius`.
#[derive(Clone, Debug)]
pub struct GreenOracle {
    dim: usize,
    box_radius: u32,
    index: OrbitIndex,
    values: Vec<f64>,
    boundary_error_bound: f64,
    tolerance: f64,
    residual: f64,
    iterations: usize,
    envelope: Envelope,
}

/// `z -> G(z)^θ`, tabulated inside the box and from the envelope outside.
#[derive(Clone, Debug)]
pub struct PoweredGreen<'a> {
    oracle: &'a GreenOracle,
    theta: f64,
    table: Vec<f64>,
}

impl PoweredGreen<'_> {
    #[inline]
    pub fn get(&self, z: &LatticePoint) -> f64 {
        match self.oracle.index.rank(z.coords()) {
            Some(r) => self.table[r],
            None => self.oracle.envelope.value(z.norm()).powf(self.theta),
        }
    }
}

/// Header summary of an oracle, as exported.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    pub dim: usize,
    pub box_radius: u32,
    pub tolerance: f64,
    pub residual: f64,
    pub iterations: usize,
    pub boundary_error_bound: f64,
    pub g0: f64,
}

impl GreenOracle {
    /// Solves on the box of radius `B` and on `B / 2`; the difference of the
    /// two values at the origin is recorded as the boundary error bound.
    pub fn solve(dim: usize, box_radius: u32) -> Result<Self> {
        if !(3..=MAX_DIM).contains(&dim) {
            return Err(Error::InvalidDimension {
                dim,
                expected: "3..=8 (transient)",
            });
        }
        if box_radius < 4 {
            return Err(invalid("box_radius", "must be at least 4"));
        }
        let (index, points, outcome) = solve_box(dim, box_radius, SOLVE_TOLERANCE)?;
        let (_, _, coarse) = solve_box(dim, box_radius / 2, SOLVE_TOLERANCE)?;
        let boundary_error_bound = (outcome.values[0] - coarse.values[0]).abs();
        Ok(Self::assemble(
            dim,
            box_radius,
            index,
            &points,
            outcome.values,
            boundary_error_bound,
            SOLVE_TOLERANCE,
            outcome.residual,
            outcome.iterations,
        ))
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        dim: usize,
        box_radius: u32,
        index: OrbitIndex,
        points: &[[u32; MAX_DIM]],
        values: Vec<f64>,
        boundary_error_bound: f64,
        tolerance: f64,
        residual: f64,
        iterations: usize,
    ) -> Self {
        let envelope = Envelope::build(dim, box_radius, values[0], points, &values, boundary_error_bound);
        Self {
            dim,
            box_radius,
            index,
            values,
            boundary_error_bound,
            tolerance,
            residual,
            iterations,
            envelope,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn box_radius(&self) -> u32 {
        self.box_radius
    }

    pub fn boundary_error_bound(&self) -> f64 {
        self.boundary_error_bound
    }

    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn summary(&self) -> OracleSummary {
        OracleSummary {
            dim: self.dim,
            box_radius: self.box_radius,
            tolerance: self.tolerance,
            residual: self.residual,
            iterations: self.iterations,
            boundary_error_bound: self.boundary_error_bound,
            g0: self.g0(),
        }
    }

    /// `G(0)`, the expected number of visits to the starting point.
    pub fn g0(&self) -> f64 {
        self.values[0]
    }

    /// `G(z)` if `z` lies in the table.
    pub fn value(&self, z: &LatticePoint) -> Option<f64> {
        debug_assert_eq!(z.dim(), self.dim);
        self.index.rank(z.coords()).map(|r| self.values[r])
    }

    /// `G(z)` if `z` lies in the table, otherwise an error naming the
    /// required box.
    pub fn require(&self, z: &LatticePoint) -> Result<f64> {
        self.value(z).ok_or(Error::OracleBoxTooSmall {
            required: z.sup_norm(),
            available: self.box_radius as i64,
        })
    }

    /// `G(x - y)`.
    pub fn between(&self, x: &LatticePoint, y: &LatticePoint) -> Result<f64> {
        self.require(&(*y - *x))
    }

    /// `G(z)` from the table, or the radial envelope outside it.
    pub fn value_or_envelope(&self, z: &LatticePoint) -> f64 {
        self.value(z)
            .unwrap_or_else(|| self.envelope.value(z.norm()))
    }

    /// `G^θ` with the table powers precomputed.
    pub fn powered(&self, theta: f64) -> PoweredGreen<'_> {
        PoweredGreen {
            oracle: self,
            theta,
            table: self.values.iter().map(|g| g.powf(theta)).collect(),
        }
    }

    /// Upper bound on `sup_{‖x‖ >= r} G(x)`.
    pub fn radial_envelope(&self, r: f64) -> f64 {
        self.envelope.value(r)
    }

    /// Envelope constant `A(r)` with `G(x) <= A(r) ‖x‖^{2-d}` for `‖x‖ >= r`.
    pub fn envelope_constant(&self, r: f64) -> f64 {
        self.envelope.constant(r.max(1.0))
    }

    /// Checks that every pairwise offset of `sites` (and each site itself)
    /// stays `padding` inside the table.
    pub fn ensure_covers(&self, sites: &[LatticePoint], padding: u32) -> Result<()> {
        let usable = self.box_radius as i64 - padding as i64;
        let mut worst = 0i64;
        for (i, a) in sites.iter().enumerate() {
            worst = worst.max(a.sup_norm());
            for b in &sites[i + 1..] {
                worst = worst.max((*a - *b).sup_norm());
            }
        }
        if worst > usable {
            return Err(Error::OracleBoxTooSmall {
                required: worst,
                available: usable,
            });
        }
        Ok(())
    }

    /// Canonical table entries `(sorted absolute coordinates, orbit size, G)`.
    pub fn entries(&self) -> impl Iterator<Item = (Vec<u32>, f64, f64)> + '_ {
        self.index
            .points()
            .into_iter()
            .zip(self.values.iter().copied())
            .map(move |(p, g)| {
                let c = p[..self.dim].to_vec();
                let w = orbit_size(&c);
                (c, w, g)
            })
    }

    /// `Σ_{‖z‖∞ <= B} G(z)²` together with an upper bound on the sum over
    /// the complement of the box.
    pub fn green_square_series(&self) -> (f64, f64) {
        let sum: f64 = self.entries().map(|(_, w, g)| w * g * g).sum();
        (sum, self.square_tail_bound(self.box_radius as f64 + 1.0))
    }

    /// Upper bound on `Σ_{‖z‖ >= rho} G(z)²` from the envelope (`d >= 5`).
    pub fn square_tail_bound(&self, rho: f64) -> f64 {
        let d = self.dim as f64;
        if self.dim < 5 {
            return f64::INFINITY;
        }
        let h = d.sqrt() / 2.0;
        let u0 = (rho - 2.0 * h).max(1.0);
        let a = self.envelope_constant(rho);
        a * a * unit_sphere_area(self.dim) * (1.0 + h / u0).powf(d - 1.0) * u0.powf(4.0 - d)
            / (d - 4.0)
    }

    /// Asymptotic bound on the intersection local time missed when both
    /// walks are stopped on leaving `B(0, R)`: twice the largest value of
    /// `G * G` on the exit shell, with `G * G(y) ~ A² c_Riesz ‖y‖^{4-d}`
    /// inflated by 25% for lattice corrections.
    pub fn intersection_truncation_bound(&self, stop_radius: u32) -> f64 {
        if self.dim < 5 {
            return f64::INFINITY;
        }
        let r = stop_radius as f64;
        let a = self.envelope_constant(r);
        2.0 * 1.25 * a * a * riesz_constant(self.dim) * r.powf(4.0 - self.dim as f64)
    }

    /// Writes the table as text: a header, then one canonical point per line.
    pub fn export<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# ilt green oracle v1")?;
        writeln!(w, "dim {}", self.dim)?;
        writeln!(w, "box_radius {}", self.box_radius)?;
        writeln!(w, "tolerance {:e}", self.tolerance)?;
        writeln!(w, "residual {:e}", self.residual)?;
        writeln!(w, "iterations {}", self.iterations)?;
        writeln!(w, "boundary_error_bound {:e}", self.boundary_error_bound)?;
        writeln!(w, "values {}", self.values.len())?;
        for (p, g) in self.index.points().iter().zip(&self.values) {
            for a in &p[..self.dim] {
                write!(w, "{a} ")?;
            }
            writeln!(w, "{g:e}")?;
        }
        Ok(())
    }

    /// Reads a table written by [`GreenOracle::export`].
    pub fn import<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let mut next = |key: &str| -> Result<String> {
            loop {
                let line = lines
                    .next()
                    .ok_or_else(|| Error::Parse(format!("missing `{key}`")))??;
                if line.starts_with('#') || line.trim().is_empty() {
                    continue;
                }
                let (k, v) = line
                    .split_once(' ')
                    .ok_or_else(|| Error::Parse(format!("bad header line `{line}`")))?;
                if k != key {
                    return Err(Error::Parse(format!("expected `{key}`, found `{k}`")));
                }
                return Ok(v.trim().to_string());
            }
        };
        let parse_err = |k: &str| Error::Parse(format!("bad value for `{k}`"));
        let dim: usize = next("dim")?.parse().map_err(|_| parse_err("dim"))?;
        let box_radius: u32 = next("box_radius")?.parse().map_err(|_| parse_err("box_radius"))?;
        let tolerance: f64 = next("tolerance")?.parse().map_err(|_| parse_err("tolerance"))?;
        let residual: f64 = next("residual")?.parse().map_err(|_| parse_err("residual"))?;
        let iterations: usize = next("iterations")?.parse().map_err(|_| parse_err("iterations"))?;
        let err: f64 = next("boundary_error_bound")?
            .parse()
            .map_err(|_| parse_err("boundary_error_bound"))?;
        let count: usize = next("values")?.parse().map_err(|_| parse_err("values"))?;
        if !(3..=MAX_DIM).contains(&dim) {
            return Err(Error::InvalidDimension {
                dim,
                expected: "3..=8",
            });
        }
        let index = OrbitIndex::new(dim, box_radius);
        if count != index.len() {
            return Err(Error::Parse(format!(
                "table has {count} entries, expected {}",
                index.len()
            )));
        }
        let mut values = vec![f64::NAN; count];
        for _ in 0..count {
            let line = lines
                .next()
                .ok_or_else(|| Error::Parse("truncated table".into()))??;
            let mut it = line.split_whitespace();
            let mut coords = [0i32; MAX_DIM];
            for c in coords.iter_mut().take(dim) {
                *c = it
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::Parse(format!("bad table line `{line}`")))?;
            }
            let g: f64 = it
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Parse(format!("bad table line `{line}`")))?;
            let rank = index
                .rank(&coords[..dim])
                .ok_or_else(|| Error::Parse(format!("point outside box in `{line}`")))?;
            values[rank] = g;
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::Parse("table has duplicate or missing entries".into()));
        }
        let points = index.points();
        Ok(Self::assemble(
            dim, box_radius, index, &points, values, err, tolerance, residual, iterations,
        ))
    }
}

/// Surface area of the unit sphere in `R^d`.
pub fn unit_sphere_area(d: usize) -> f64 {
    2.0 * std::f64::consts::PI.powf(d as f64 / 2.0) / gamma_half(d)
}

/// `Γ(n / 2)` for a positive integer `n`.
pub fn gamma_half(n: usize) -> f64 {
    assert!(n > 0);
    if n % 2 == 0 {
        factorial(n / 2 - 1)
    } else {
        let mut g = std::f64::consts::PI.sqrt();
        let mut k = 1;
        while k < n {
            g *= k as f64 / 2.0;
            k += 2;
        }
        g
    }
}

/// `∫ |x|^{2-d} |y-x|^{2-d} dx = c |y|^{4-d}` in `R^d`, `d >= 5`.
pub fn riesz_constant(d: usize) -> f64 {
    std::f64::consts::PI.powf(d as f64 / 2.0) * gamma_half(d - 4) / gamma_half(d - 2).powi(2)
}

/// Monte Carlo estimate of `G(z)` with its truncation certificate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GreenEstimate {
    pub site: LatticePoint,
    pub estimate: MeanEstimate,
    pub stop_radius: u32,
    /// Upper bound on `G(z) - E[l_truncated(z)]`.
    pub bias_bound: f64,
}

/// Estimates `G(z)` for each site in `sites` from the same set of walks.
pub fn green_mc_sites(
    sites: &[LatticePoint],
    replicas: u64,
    stop_radius: u32,
    seed: u64,
    oracle: &GreenOracle,
) -> Result<Vec<GreenEstimate>> {
    let dim = oracle.dim();
    if replicas == 0 {
        return Err(invalid("replicas", "must be at least 1"));
    }
    crate::lattice::Horizon::TruncatedInfinite { stop_radius }.validate(dim)?;
    let sums = visit_moment_sums(dim, sites, replicas, stop_radius, seed);
    Ok(sites
        .iter()
        .zip(sums)
        .map(|(z, (s, s2))| GreenEstimate {
            site: *z,
            estimate: MeanEstimate::from_sums(s, s2, replicas),
            stop_radius,
            bias_bound: post_exit_visit_bound(stop_radius, std::slice::from_ref(z), oracle),
        })
        .collect())
}

/// Single-site convenience wrapper around [`green_mc_sites`].
pub fn green_mc(
    z: LatticePoint,
    replicas: u64,
    stop_radius: u32,
    seed: u64,
    oracle: &GreenOracle,
) -> Result<GreenEstimate> {
    Ok(green_mc_sites(&[z], replicas, stop_radius, seed, oracle)?.remove(0))
}

/// Per-site `(Σ l, Σ l²)` over truncated walks from the origin.
pub(crate) fn visit_moment_sums(
    dim: usize,
    sites: &[LatticePoint],
    replicas: u64,
    stop_radius: u32,
    seed: u64,
) -> Vec<(u128, u128)> {
    const CHUNK: u64 = 4096;
    let lookup = SiteLookup::new(sites);
    let chunks = replicas.div_ceil(CHUNK);
    let partial: Vec<Vec<(u128, u128)>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![(0u128, 0u128); sites.len()];
            let mut counts = vec![0u32; sites.len()];
            for rep in c * CHUNK..((c + 1) * CHUNK).min(replicas) {
                counts.iter_mut().for_each(|x| *x = 0);
                let mut rng = StreamKey::new(seed, rep).rng();
                truncated_walk(dim, stop_radius, &mut rng, |coords, norm_sq| {
                    if let Some(i) = lookup.find(coords, norm_sq) {
                        counts[i] += 1;
                    }
                });
                for (a, &k) in acc.iter_mut().zip(&counts) {
                    a.0 += k as u128;
                    a.1 += (k as u128) * (k as u128);
                }
            }
            acc
        })
        .collect();
    let mut total = vec![(0u128, 0u128); sites.len()];
    for part in partial {
        for (t, p) in total.iter_mut().zip(part) {
            t.0 += p.0;
            t.1 += p.1;
        }
    }
    total
}

/// Runs one walk from the origin until `‖S‖ > R`, calling `visit` with the
/// coordinates and squared norm at every time (time 0 included).
#[inline]
pub(crate) fn truncated_walk<R: rand::Rng + ?Sized>(
    dim: usize,
    stop_radius: u32,
    rng: &mut R,
    mut visit: impl FnMut(&[i32], i64),
) {
    let mut coords = [0i32; MAX_DIM];
    let mut norm_sq = 0i64;
    let r_sq = (stop_radius as i64).pow(2);
    visit(&coords[..dim], 0);
    while norm_sq <= r_sq {
        let mv = draw_move(rng, dim);
        norm_sq += apply_move(&mut coords, mv, dim);
        visit(&coords[..dim], norm_sq);
    }
}

/// Fast membership test for a small target set.
pub(crate) struct SiteLookup {
    max_norm_sq: i64,
    map: rustc_hash::FxHashMap<[i32; MAX_DIM], usize>,
}

impl SiteLookup {
    pub(crate) fn new(sites: &[LatticePoint]) -> Self {
        let mut map = rustc_hash::FxHashMap::default();
        let mut max_norm_sq = -1;
        for (i, z) in sites.iter().enumerate() {
            let mut key = [0i32; MAX_DIM];
            key[..z.dim()].copy_from_slice(z.coords());
            map.insert(key, i);
            max_norm_sq = max_norm_sq.max(z.norm_sq());
        }
        Self { max_norm_sq, map }
    }

    #[inline]
    pub(crate) fn find(&self, coords: &[i32], norm_sq: i64) -> Option<usize> {
        if norm_sq > self.max_norm_sq {
            return None;
        }
        let mut key = [0i32; MAX_DIM];
        key[..coords.len()].copy_from_slice(coords);
        self.map.get(&key).copied()
    }
}

/// `P_{z1}(H(z2) < ∞) = G(z2 - z1) / G(0)` and the scaled ratio
/// `P ‖z2 - z1‖^{d-2}` used for asymptotic checks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HittingProbability {
    pub probability: f64,
    pub scaled_ratio: f64,
    /// True when the offset lies outside the table and the envelope was used.
    pub from_envelope: bool,
}

pub fn hitting_probability(z1: &LatticePoint, z2: &LatticePoint, oracle: &GreenOracle) -> HittingProbability {
    if z1 == z2 {
        return HittingProbability {
            probability: 1.0,
            scaled_ratio: 0.0,
            from_envelope: false,
        };
    }
    let off = *z2 - *z1;
    let (g, from_envelope) = match oracle.value(&off) {
        Some(g) => (g, false),
        None => (oracle.value_or_envelope(&off), true),
    };
    let p = (g / oracle.g0()).min(1.0);
    HittingProbability {
        probability: p,
        scaled_ratio: p * off.norm().powi(oracle.dim() as i32 - 2),
        from_envelope,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(c: &[i32]) -> LatticePoint {
        LatticePoint::new(c).unwrap()
    }

    #[test]
    fn orbit_ranks_are_a_bijection() {
        let idx = OrbitIndex::new(4, 6);
        let pts = idx.points();
        assert_eq!(pts.len(), 210); // C(10, 4)
        for (r, q) in pts.iter().enumerate() {
            assert_eq!(idx.rank_sorted(&q[..4]), r);
            assert!(q[..4].windows(2).all(|w| w[0] <= w[1]));
        }
        let total: f64 = pts.iter().map(|q| orbit_size(&q[..4])).sum();
        assert_eq!(total, 13f64.powi(4));
    }

    #[test]
    fn small_box_values_are_symmetric_and_harmonic() {
        let g = GreenOracle::solve(3, 8).unwrap();
        let e1 = p(&[1, 0, 0]);
        let v = g.value(&e1).unwrap();
        assert_eq!(v, g.value(&p(&[-1, 0, 0])).unwrap());
        assert_eq!(v, g.value(&p(&[0, 1, 0])).unwrap());
        assert_eq!(v, g.value(&p(&[0, 0, -1])).unwrap());
        // harmonic off the origin
        for z in [p(&[1, 2, 0]), p(&[3, -1, 2]), p(&[0, 0, 5])] {
            let mean: f64 = z.lazy_neighbors().map(|y| g.value(&y).unwrap()).sum::<f64>() / 7.0;
            assert!((mean - g.value(&z).unwrap()).abs() < 1e-10);
        }
        let at0: f64 = p(&[0, 0, 0]).lazy_neighbors().map(|y| g.value(&y).unwrap()).sum::<f64>() / 7.0;
        assert!((g.g0() - at0 - 1.0).abs() < 1e-10);
        assert!(g.value(&p(&[9, 0, 0])).is_none());
    }

    #[test]
    fn export_import_roundtrip() {
        let g = GreenOracle::solve(5, 6).unwrap();
        let mut buf = Vec::new();
        g.export(&mut buf).unwrap();
        let back = GreenOracle::import(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back.summary(), g.summary());
        let z = p(&[1, 2, 0, -3, 1]);
        assert_eq!(back.value(&z), g.value(&z));
        assert!(GreenOracle::import(std::io::Cursor::new(b"dim 5\n".to_vec())).is_err());
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(matches!(GreenOracle::solve(2, 8), Err(Error::InvalidDimension { .. })));
        assert!(matches!(GreenOracle::solve(5, 3), Err(Error::InvalidParameter { .. })));
    }

    #[test]
    fn gamma_and_sphere() {
        assert!((gamma_half(1) - std::f64::consts::PI.sqrt()).abs() < 1e-12);
        assert!((gamma_half(6) - 2.0).abs() < 1e-12);
        assert!((unit_sphere_area(3) - 4.0 * std::f64::consts::PI).abs() < 1e-12);
        assert!((unit_sphere_area(5) - 8.0 * std::f64::consts::PI.powi(2) / 3.0).abs() < 1e-9);
        assert!((riesz_constant(5) - 39.478).abs() < 1e-2);
    }

    #[test]
    fn hitting_self_is_one() {
        let g = GreenOracle::solve(5, 6).unwrap();
        let z = p(&[1, 0, 0, 0, 0]);
        assert_eq!(hitting_probability(&z, &z, &g).probability, 1.0);
    }
}
