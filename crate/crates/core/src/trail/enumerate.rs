//! Exhaustive and sampled checks of the trail construction and the
//! counting inequalities behind it.

use rayon::prelude::*;
use rustc_hash::{FxHashMap, FxHashSet};
use serde::{Deserialize, Serialize};

use super::extract::{extract_trail_stock, loop_transfer_sides, stocked_occupation};
use super::kernel::HittingKernel;
use super::occupation::{multinomial_count_bound, EdgeOccupation};
use crate::error::{invalid, Result};
use crate::green::GreenOracle;
use crate::lattice::{LatticePoint, StreamKey};
use crate::sets::{act, hyperoctahedral_group, l1_ball, random_connected_set, SignedPermutation};

/// Outcome of a batch of checks.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub sets: usize,
    pub instances: usize,
    pub violations: usize,
    /// Largest `rhs / lhs` seen (at most 1 when nothing is violated).
    pub worst_ratio: f64,
    /// Up to ten violation messages.
    pub examples: Vec<String>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.violations == 0 && self.instances > 0
    }

    fn merge(mut self, other: Self) -> Self {
        self.sets += other.sets;
        self.instances += other.instances;
        self.violations += other.violations;
        self.worst_ratio = self.worst_ratio.max(other.worst_ratio);
        for e in other.examples {
            if self.examples.len() < 10 {
                self.examples.push(e);
            }
        }
        self
    }

    fn fail(&mut self, msg: String) {
        self.violations += 1;
        if self.examples.len() < 10 {
            self.examples.push(msg);
        }
    }
}

fn canonical(set: &[LatticePoint], group: &[SignedPermutation]) -> Vec<LatticePoint> {
    group
        .iter()
        .map(|g| {
            let mut img: Vec<LatticePoint> = set.iter().map(|z| act(g, z)).collect();
            img.sort_unstable();
            img
        })
        .min()
        .expect("group is nonempty")
}

/// Subsets of the l¹ ball `B(0, r)` that contain the origin and have at most
/// `max_size` sites, one per orbit of the signed permutation group.
pub fn canonical_origin_sets(dim: usize, r: i64, max_size: usize) -> Vec<Vec<LatticePoint>> {
    let ball = l1_ball(dim, r);
    let group = hyperoctahedral_group(dim);
    let mut layer = vec![vec![LatticePoint::origin(dim)]];
    let mut all = layer.clone();
    for _ in 1..max_size {
        let next: FxHashSet<Vec<LatticePoint>> = layer
            .par_iter()
            .flat_map_iter(|s| {
                ball.iter()
                    .filter(|z| !s.contains(z))
                    .map(|z| {
                        let mut t = s.clone();
                        t.push(*z);
                        canonical(&t, &group)
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
        let mut next: Vec<_> = next.into_iter().collect();
        next.sort_unstable();
        all.extend_from_slice(&next);
        layer = next;
    }
    all
}

/// Every distinct `(z_1, ℰ)` produced by a visit sequence of length at most
/// `max_len` over `k` labels that uses every label.
pub fn covering_patterns(k: usize, max_len: usize) -> Vec<(usize, Vec<u32>)> {
    let mut out: FxHashSet<(usize, Vec<u32>)> = FxHashSet::default();
    for first in 0..k {
        // states (current, counts) already expanded
        let mut seen: FxHashSet<(usize, Vec<u32>)> = FxHashSet::default();
        let mut stack = vec![(first, vec![0u32; k * k], 1usize)];
        while let Some((cur, counts, len)) = stack.pop() {
            if !seen.insert((cur, counts.clone())) {
                continue;
            }
            if covers(&counts, k, first) {
                out.insert((first, counts.clone()));
            }
            if len == max_len {
                continue;
            }
            for y in 0..k {
                let mut c = counts.clone();
                c[cur * k + y] += 1;
                stack.push((y, c, len + 1));
            }
        }
    }
    let mut v: Vec<_> = out.into_iter().collect();
    v.sort_unstable();
    v
}

fn covers(counts: &[u32], k: usize, first: usize) -> bool {
    (0..k).all(|z| z == first || (0..k).any(|x| counts[x * k + z] > 0))
}

/// End site implied by flow conservation.
fn last_of(counts: &[u32], k: usize, first: usize) -> usize {
    (0..k)
        .find(|&z| {
            let inflow: u32 = (0..k).map(|x| counts[x * k + z]).sum::<u32>() + u32::from(z == first);
            let outflow: u32 = counts[z * k..(z + 1) * k].iter().sum();
            inflow > outflow
        })
        .unwrap_or(first)
}

/// Runs extraction and its checks on one occupation.
pub fn check_occupation(occ: &EdgeOccupation, report: &mut CheckReport) {
    report.instances += 1;
    match extract_trail_stock(occ) {
        Ok(ts) => {
            if let Err(e) = ts.check(occ) {
                report.fail(format!("{:?}: {e}", occ.sites()));
            }
            for c in &ts.levels {
                report.worst_ratio = report.worst_ratio.max(c.rhs / c.lhs);
                if !c.holds() {
                    report.fail(format!(
                        "{:?} level {}: {} < {}",
                        occ.sites(),
                        c.level,
                        c.lhs,
                        c.rhs
                    ));
                }
            }
            let (l, r) = loop_transfer_sides(occ, &ts);
            if l > r {
                report.fail(format!("{:?}: loop transfer {l} > {r}", occ.sites()));
            }
        }
        Err(e) => report.fail(format!("{:?}: {e}", occ.sites())),
    }
}

/// The trail inequality, stock invariants and loop transfer for every
/// covering occupation of length at most `max_len` on every canonical
/// origin-anchored subset of `B(0, r)` of at most `max_size` sites.
pub fn exhaustive_trail_check(dim: usize, r: i64, max_size: usize, max_len: usize) -> CheckReport {
    let sets = canonical_origin_sets(dim, r, max_size);
    let patterns: Vec<Vec<(usize, Vec<u32>)>> = (0..=max_size).map(|k| covering_patterns(k, max_len)).collect();
    sets.par_iter()
        .map(|s| {
            let k = s.len();
            let mut rep = CheckReport {
                sets: 1,
                ..Default::default()
            };
            for (first, counts) in &patterns[k] {
                let last = last_of(counts, k, *first);
                let occ = EdgeOccupation::from_counts(s, counts.clone(), *first, last).expect("shape");
                check_occupation(&occ, &mut rep);
            }
            rep
        })
        .reduce(CheckReport::default, CheckReport::merge)
}

/// Trail checks on occupations drawn from the successive-visit chain, on
/// sets of `size` sites alternating between random connected sets and
/// scattered subsets of `[-2, 2]^d`. Each set serves `per_set` sequences.
pub fn sampled_trail_check(
    oracle: &GreenOracle,
    size: usize,
    instances: usize,
    per_set: usize,
    seed: u64,
) -> Result<CheckReport> {
    if per_set == 0 || size < 2 {
        return Err(invalid("per_set", "need at least one sequence per set of two or more sites"));
    }
    let dim = oracle.dim();
    let n_sets = instances.div_ceil(per_set);
    let reports: Result<Vec<CheckReport>> = (0..n_sets)
        .into_par_iter()
        .map(|i| {
            let mut rng = StreamKey::new(seed, i as u64).rng();
            let sites = if i % 2 == 0 {
                random_connected_set(dim, size, &mut rng)
            } else {
                scattered_set(dim, size, 2, &mut rng)
            };
            let kernel = HittingKernel::build(&sites, oracle)?;
            let mut rep = CheckReport {
                sets: 1,
                ..Default::default()
            };
            let count = per_set.min(instances - i * per_set);
            let mut drawn = 0;
            while drawn < count {
                let Some(seq) = kernel.sample_covering_sequence(&mut rng, 100_000) else {
                    continue;
                };
                drawn += 1;
                let occ = EdgeOccupation::from_sequence(&sites, &seq)?;
                check_occupation(&occ, &mut rep);
            }
            Ok(rep)
        })
        .collect();
    Ok(reports?
        .into_iter()
        .fold(CheckReport::default(), CheckReport::merge))
}

fn scattered_set<R: rand::Rng + ?Sized>(dim: usize, size: usize, half: i32, rng: &mut R) -> Vec<LatticePoint> {
    let mut set: Vec<LatticePoint> = Vec::with_capacity(size);
    while set.len() < size {
        let c: Vec<i32> = (0..dim).map(|_| rng.random_range(-half..=half)).collect();
        let z = LatticePoint::new(&c).expect("valid dimension");
        if !set.contains(&z) {
            set.push(z);
        }
    }
    set.sort_unstable();
    set
}

/// Number of visit sequences of length `t` over `m` labels sharing each
/// `(z_1, ℰ)`, compared with the multinomial bound. The first site must be
/// part of the key: `a b a` and `b a b` have the same `ℰ`.
pub fn exhaustive_multinomial_check(max_t: usize, max_m: usize) -> CheckReport {
    let mut report = CheckReport::default();
    for m in 1..=max_m {
        let sites: Vec<LatticePoint> = (0..m).map(|i| LatticePoint::unit(3, 0).scale(i as i32)).collect();
        for t in 1..=max_t {
            report.sets += 1;
            let mut groups: FxHashMap<(usize, Vec<u32>), u64> = FxHashMap::default();
            let total = m.pow(t as u32);
            for code in 0..total {
                let mut seq = Vec::with_capacity(t);
                let mut c = code;
                for _ in 0..t {
                    seq.push(c % m);
                    c /= m;
                }
                let occ = EdgeOccupation::from_sequence(&sites, &seq).expect("nonempty");
                *groups.entry((occ.first(), occ.counts().to_vec())).or_insert(0) += 1;
            }
            for ((first, counts), n) in groups {
                report.instances += 1;
                let last = last_of(&counts, m, first);
                let occ = EdgeOccupation::from_counts(&sites, counts, first, last).expect("shape");
                let bound = multinomial_count_bound(&occ);
                let ratio = n as f64 / bound.to_string().parse::<f64>().unwrap_or(f64::INFINITY);
                report.worst_ratio = report.worst_ratio.max(ratio);
                if num_bigint::BigUint::from(n) > bound {
                    report.fail(format!("t={t} m={m} first={first}: {n} sequences > bound {bound}"));
                }
            }
        }
    }
    report
}

/// Preimage counts of `ℰ -> ℰ_S` for fixed `(z_1, z_t)` on the canonical
/// sets of at most `max_size` sites, compared with `(N-1)^N`.
pub fn exhaustive_degeneracy_check(dim: usize, r: i64, max_size: usize, max_len: usize) -> CheckReport {
    let sets = canonical_origin_sets(dim, r, max_size);
    let mut report = CheckReport::default();
    for s in sets.iter().filter(|s| s.len() >= 2) {
        let k = s.len();
        report.sets += 1;
        let limit = ((k - 1) as u64).pow(k as u32);
        let mut groups: FxHashMap<(usize, usize, Vec<u32>), u64> = FxHashMap::default();
        for (first, counts) in covering_patterns(k, max_len) {
            let last = last_of(&counts, k, first);
            let occ = EdgeOccupation::from_counts(s, counts, first, last).expect("shape");
            match extract_trail_stock(&occ) {
                Ok(ts) => {
                    *groups
                        .entry((first, last, stocked_occupation(&occ, &ts)))
                        .or_insert(0) += 1;
                }
                Err(e) => report.fail(format!("{s:?}: {e}")),
            }
        }
        for (_, n) in groups {
            report.instances += 1;
            report.worst_ratio = report.worst_ratio.max(n as f64 / limit as f64);
            if n > limit {
                report.fail(format!("{s:?}: {n} preimages > {limit}"));
            }
        }
    }
    report
}
