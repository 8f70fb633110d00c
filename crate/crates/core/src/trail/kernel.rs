//! The embedded chain of successive visits to `Λ`.
//!
//! `q(x, y) = P_x(T_Λ < ∞, S_{T_Λ} = y)` with `T_Λ` the first positive entry
//! time. It is computed from the Green oracle: a walk started outside `Λ`
//! enters at `y` with probability `hm(x', y) = Σ_z G_ΛΛ^{-1}(y, z) G(z, x')`,
//! and one lazy step links the two.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capacity::gram_matrix;
use crate::error::{invalid, Error, Result};
use crate::green::{truncated_walk, GreenOracle, SiteLookup};
use crate::lattice::{apply_move, draw_move, post_exit_visit_bound, LatticePoint, StreamKey, MAX_DIM};
use crate::sets::validate_sites;
use crate::stats::MeanEstimate;

/// Transition kernel of the successive-visit chain on `Λ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HittingKernel {
    pub sites: Vec<LatticePoint>,
    /// Row-major `q(x, y)`.
    pub q: Vec<f64>,
    /// `P_x(T_Λ = ∞)`.
    pub escape: Vec<f64>,
    /// `P_0(H_Λ < ∞, S_{H_Λ} = z)` with `H_Λ` the first entry at time `>= 0`.
    pub entry: Vec<f64>,
}

impl HittingKernel {
    pub fn build(sites: &[LatticePoint], oracle: &GreenOracle) -> Result<Self> {
        validate_sites(sites)?;
        let dim = sites[0].dim();
        if dim != oracle.dim() {
            return Err(Error::InvalidDimension {
                dim,
                expected: "the oracle dimension",
            });
        }
        let mut with_origin = sites.to_vec();
        let origin = LatticePoint::origin(dim);
        if !sites.contains(&origin) {
            with_origin.push(origin);
        }
        oracle.ensure_covers(&with_origin, 2)?;
        let n = sites.len();
        let chol = gram_matrix(sites, oracle)?
            .cholesky()
            .ok_or(Error::SingularGram { size: n })?;
        let harmonic = |x: &LatticePoint| -> Result<DVector<f64>> {
            let mut g = DVector::zeros(n);
            for (i, z) in sites.iter().enumerate() {
                g[i] = oracle.between(x, z)?;
            }
            Ok(chol.solve(&g))
        };
        let p = 1.0 / (2 * dim + 1) as f64;
        let mut q = vec![0.0; n * n];
        for (i, x) in sites.iter().enumerate() {
            let row = &mut q[i * n..(i + 1) * n];
            for nb in x.lazy_neighbors() {
                if let Some(j) = sites.iter().position(|s| *s == nb) {
                    row[j] += p;
                } else {
                    for (r, h) in row.iter_mut().zip(harmonic(&nb)?.iter()) {
                        *r += p * h.max(0.0);
                    }
                }
            }
        }
        let escape = (0..n)
            .map(|i| (1.0 - q[i * n..(i + 1) * n].iter().sum::<f64>()).max(0.0))
            .collect();
        let entry = match sites.iter().position(|s| *s == origin) {
            Some(j) => (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect(),
            None => harmonic(&origin)?.iter().map(|h| h.max(0.0)).collect(),
        };
        Ok(Self {
            sites: sites.to_vec(),
            q,
            escape,
            entry,
        })
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.q[x * self.sites.len() + y]
    }

    /// `Σ_x P_x(T_Λ = ∞)`, which is `cap(Λ)`.
    pub fn capacity(&self) -> f64 {
        self.escape.iter().sum()
    }

    /// `P_0(H_Λ < ∞)`.
    pub fn entry_probability(&self) -> f64 {
        self.entry.iter().sum()
    }

    /// Probability of one visit sequence `σ`, entry and escape included.
    pub fn sequence_probability(&self, seq: &[usize]) -> f64 {
        let (Some(&first), Some(&last)) = (seq.first(), seq.last()) else {
            return 0.0;
        };
        let steps: f64 = seq.windows(2).map(|w| self.get(w[0], w[1])).product();
        self.entry[first] * steps * self.escape[last]
    }

    /// Draws a visit sequence that covers `Λ`: the chain runs conditioned
    /// on not escaping until every site is seen, then escapes with its
    /// natural probability. Returns `None` if a row has no mass to continue.
    pub fn sample_covering_sequence<R: Rng + ?Sized>(&self, rng: &mut R, max_len: usize) -> Option<Vec<usize>> {
        let n = self.sites.len();
        let mut seen = vec![false; n];
        let mut cur = pick(&self.entry, rng)?;
        seen[cur] = true;
        let mut left = n - 1;
        let mut seq = vec![cur];
        while seq.len() < max_len {
            let row = &self.q[cur * n..(cur + 1) * n];
            if left == 0 && rng.random::<f64>() < self.escape[cur] / (self.escape[cur] + row.iter().sum::<f64>()) {
                break;
            }
            cur = pick(row, rng)?;
            if !std::mem::replace(&mut seen[cur], true) {
                left -= 1;
            }
            seq.push(cur);
        }
        (left == 0).then_some(seq)
    }
}

fn pick<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Option<usize> {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return None;
    }
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return Some(i);
        }
        u -= w;
    }
    weights.iter().rposition(|&w| w > 0.0)
}

/// `P(l_∞(z) = n(z) for all z ∈ Λ)` for the walk from the origin, summed
/// over all visit sequences with the given profile by dynamic programming.
pub fn profile_probability(kernel: &HittingKernel, profile: &[u32]) -> Result<f64> {
    let n = kernel.len();
    check_profile(profile, n)?;
    // mixed-radix index of the remaining visits
    let radix: Vec<usize> = profile.iter().map(|&c| c as usize + 1).collect();
    let states: usize = radix.iter().product();
    if states.saturating_mul(n) > 50_000_000 {
        return Err(invalid("profile", "too many visit states"));
    }
    let mut stride = vec![1usize; n];
    for i in 1..n {
        stride[i] = stride[i - 1] * radix[i - 1];
    }
    // f[rem * n + cur]: probability of finishing from `cur` with `rem` visits left
    let mut f = vec![0.0f64; states * n];
    for rem in 0..states {
        let left: Vec<usize> = (0..n).map(|i| rem / stride[i] % radix[i]).collect();
        for cur in 0..n {
            let mut v = if rem == 0 { kernel.escape[cur] } else { 0.0 };
            for y in 0..n {
                if left[y] > 0 {
                    v += kernel.get(cur, y) * f[(rem - stride[y]) * n + y];
                }
            }
            f[rem * n + cur] = v;
        }
    }
    let full: usize = (0..n).map(|i| profile[i] as usize * stride[i]).sum();
    Ok((0..n)
        .map(|z| kernel.entry[z] * f[(full - stride[z]) * n + z])
        .sum())
}

/// The same probability as [`profile_probability`] by listing every
/// sequence with the given profile. Only for small profiles.
pub fn profile_probability_enumerated(kernel: &HittingKernel, profile: &[u32]) -> Result<(f64, usize)> {
    let n = kernel.len();
    check_profile(profile, n)?;
    let t: u32 = profile.iter().sum();
    if t > 12 {
        return Err(invalid("profile", "enumeration limited to 12 visits"));
    }
    let mut left = profile.to_vec();
    let mut seq = Vec::with_capacity(t as usize);
    let mut total = 0.0;
    let mut count = 0;
    enumerate_profile(kernel, &mut left, &mut seq, t as usize, &mut total, &mut count);
    Ok((total, count))
}

fn enumerate_profile(
    k: &HittingKernel,
    left: &mut [u32],
    seq: &mut Vec<usize>,
    t: usize,
    total: &mut f64,
    count: &mut usize,
) {
    if seq.len() == t {
        *total += k.sequence_probability(seq);
        *count += 1;
        return;
    }
    for y in 0..left.len() {
        if left[y] > 0 {
            left[y] -= 1;
            seq.push(y);
            enumerate_profile(k, left, seq, t, total, count);
            seq.pop();
            left[y] += 1;
        }
    }
}

fn check_profile(profile: &[u32], n: usize) -> Result<()> {
    if profile.len() != n {
        return Err(invalid("profile", "length differs from the site list"));
    }
    if profile.iter().any(|&c| c == 0) {
        return Err(invalid("profile", "every site needs at least one visit"));
    }
    Ok(())
}

/// Monte Carlo estimate of the exact-profile probability from truncated
/// walks, with the truncation bias bound `Σ_z E[visits to z after exit]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProfileEstimate {
    pub estimate: MeanEstimate,
    pub bias_bound: f64,
}

pub fn profile_probability_mc(
    sites: &[LatticePoint],
    profile: &[u32],
    replicas: u64,
    stop_radius: u32,
    seed: u64,
    oracle: &GreenOracle,
) -> Result<ProfileEstimate> {
    validate_sites(sites)?;
    check_profile(profile, sites.len())?;
    if replicas == 0 {
        return Err(invalid("replicas", "must be at least 1"));
    }
    let dim = sites[0].dim();
    let lookup = SiteLookup::new(sites);
    let hits: u64 = (0..replicas)
        .into_par_iter()
        .map(|rep| {
            let mut rng = StreamKey::new(seed, rep).rng();
            let mut counts = vec![0u32; sites.len()];
            truncated_walk(dim, stop_radius, &mut rng, |c, ns| {
                if let Some(i) = lookup.find(c, ns) {
                    counts[i] += 1;
                }
            });
            u64::from(counts == profile)
        })
        .sum();
    Ok(ProfileEstimate {
        estimate: MeanEstimate::bernoulli(hits, replicas),
        bias_bound: post_exit_visit_bound(stop_radius, sites, oracle),
    })
}

/// Monte Carlo estimate of `q(x, ·)` and of the escape probability for every
/// `x ∈ Λ`. Escape is counted when the walk leaves `B(0, R)`, which biases it
/// upward by at most the post-exit visit bound of `Λ`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KernelEstimate {
    pub q: Vec<MeanEstimate>,
    pub escape: Vec<MeanEstimate>,
    pub bias_bound: f64,
}

pub fn hitting_kernel_mc(
    sites: &[LatticePoint],
    replicas: u64,
    stop_radius: u32,
    seed: u64,
    oracle: &GreenOracle,
) -> Result<KernelEstimate> {
    validate_sites(sites)?;
    if replicas == 0 {
        return Err(invalid("replicas", "must be at least 1"));
    }
    let n = sites.len();
    let dim = sites[0].dim();
    let lookup = SiteLookup::new(sites);
    let r_sq = (stop_radius as i64).pow(2);
    let mut q = Vec::with_capacity(n * n);
    let mut escape = Vec::with_capacity(n);
    for (i, x) in sites.iter().enumerate() {
        let landing: Vec<Option<usize>> = (0..replicas)
            .into_par_iter()
            .map(|rep| {
                let mut rng = StreamKey::new(seed, ((i as u64) << 40) | rep).rng();
                let mut coords = [0i32; MAX_DIM];
                coords[..dim].copy_from_slice(x.coords());
                let mut norm_sq = x.norm_sq();
                loop {
                    norm_sq += apply_move(&mut coords, draw_move(&mut rng, dim), dim);
                    if let Some(j) = lookup.find(&coords[..dim], norm_sq) {
                        return Some(j);
                    }
                    if norm_sq > r_sq {
                        return None;
                    }
                }
            })
            .collect();
        let mut counts = vec![0u64; n + 1];
        for l in landing {
            counts[l.unwrap_or(n)] += 1;
        }
        q.extend(counts[..n].iter().map(|&c| MeanEstimate::bernoulli(c, replicas)));
        escape.push(MeanEstimate::bernoulli(counts[n], replicas));
    }
    Ok(KernelEstimate {
        q,
        escape,
        bias_bound: post_exit_visit_bound(stop_radius, sites, oracle),
    })
}

/// Dense `q` as a matrix, for callers that want linear algebra on it.
pub fn kernel_matrix(kernel: &HittingKernel) -> DMatrix<f64> {
    let n = kernel.len();
    DMatrix::from_row_slice(n, n, &kernel.q)
}
