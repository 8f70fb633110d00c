//! Extraction of a Λ-trail and an ℰ-stock from an edge occupation.
//!
//! The construction walks the coalescence hierarchy from `Λ_2` up to
//! `Λ_N`. At each level the merged cluster `ψ` is split back into
//! `a_k, ã_k`: stocked edges through `ψ` are reassigned to whichever part
//! carries occupation, one new stocked edge `e_k*` is added out of a vertex
//! without outgoing stock, and `ψ` is replaced in the trail by the two parts.
//! The inequality
//! `N!/(N-k+1)! Π d_k(e)^{S_k(e)} >= Π_{e∈T_k} d_k(e)` is checked at every
//! level.

use num_bigint::BigUint;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use super::coalesce::{coalesce, CoalescenceHierarchy};
use super::occupation::{multinomial, EdgeOccupation};
use crate::error::{Error, Result};
use crate::lattice::LatticePoint;

/// Both sides of the trail inequality at one level.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelCertificate {
    pub level: usize,
    /// `N!/(N-k+1)! Π d_k(e)^{S_k(e)}`.
    pub lhs: f64,
    /// `Π_{e∈T_k} d_k(e)`.
    pub rhs: f64,
    /// True when the splice used the factor `N-k+2`.
    pub case_two: bool,
}

impl LevelCertificate {
    pub fn holds(&self) -> bool {
        self.lhs >= self.rhs * (1.0 - 1e-12)
    }
}

/// A Λ-trail with its stock and certificate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrailStock {
    pub sites: Vec<LatticePoint>,
    /// Site indices in trail order, starting at `z_1`.
    pub trail: Vec<usize>,
    /// Stocked edges `(from, to, amount)` by site index.
    pub stock: Vec<(usize, usize, u32)>,
    /// Certificate at every level `2..=N`; the last entry is the final
    /// inequality `N! Π d(e)^{S(e)} >= Π_{e∈T} d(e)`.
    pub levels: Vec<LevelCertificate>,
}

impl TrailStock {
    pub fn lhs(&self) -> f64 {
        self.levels.last().map_or(1.0, |c| c.lhs)
    }

    pub fn rhs(&self) -> f64 {
        self.levels.last().map_or(1.0, |c| c.rhs)
    }

    /// True when the inequality holds at every level.
    pub fn certified(&self) -> bool {
        self.levels.iter().all(LevelCertificate::holds)
    }

    pub fn stock_of(&self, from: usize, to: usize) -> u32 {
        self.stock
            .iter()
            .find(|(a, b, _)| *a == from && *b == to)
            .map_or(0, |s| s.2)
    }

    /// Trail edges as site-index pairs.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.trail.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// Checks the structural invariants against the occupation it came from:
    /// trail self-avoiding, covering, starting at `z_1`; stock bounded by
    /// `ℰ`, zero on loops, total `N - 1`, one stocked out-edge per vertex.
    pub fn check(&self, occ: &EdgeOccupation) -> std::result::Result<(), String> {
        let n = self.sites.len();
        let mut seen = vec![false; n];
        for &v in &self.trail {
            if std::mem::replace(&mut seen[v], true) {
                return Err(format!("trail revisits site {v}"));
            }
        }
        if self.trail.len() != n {
            return Err("trail does not cover the set".into());
        }
        if self.trail[0] != occ.first() {
            return Err("trail does not start at the first visited site".into());
        }
        let mut total = 0;
        let mut out = vec![0; n];
        for &(a, b, s) in &self.stock {
            if a == b && s > 0 {
                return Err(format!("stock on loop ({a},{a})"));
            }
            if s > occ.count(a, b) {
                return Err(format!("stock {s} exceeds occupation on ({a},{b})"));
            }
            if s > 0 {
                out[a] += 1;
            }
            total += s as usize;
        }
        if total != n - 1 {
            return Err(format!("stock total {total}, expected {}", n - 1));
        }
        if let Some(z) = out.iter().position(|&c| c > 1) {
            return Err(format!("site {z} has {} stocked out-edges", out[z]));
        }
        Ok(())
    }
}

/// `ℰ_k(c, c')`: occupation summed over cluster members.
fn cluster_count(h: &CoalescenceHierarchy, occ: &EdgeOccupation, c: usize, c2: usize) -> u32 {
    let mut s = 0;
    for &x in h.members(c) {
        for &y in h.members(c2) {
            s += occ.count(x, y);
        }
    }
    s
}

/// Builds the trail and stock of `occ` and certifies the inequality.
pub fn extract_trail_stock(occ: &EdgeOccupation) -> Result<TrailStock> {
    occ.check_consistency()?;
    let n = occ.len();
    if n == 1 {
        return Ok(TrailStock {
            sites: occ.sites().to_vec(),
            trail: vec![0],
            stock: Vec::new(),
            levels: Vec::new(),
        });
    }
    let h = coalesce(occ.sites())?;
    let z1 = occ.first();
    let contains = |c: usize, i: usize| h.members(c).contains(&i);
    let dist = |c: usize, c2: usize| h.distance(c, c2);
    let count = |c: usize, c2: usize| cluster_count(&h, occ, c, c2);

    // level 2
    let m2 = h.merge_at(2);
    let (head, other) = if contains(m2.a, z1) {
        (m2.a, m2.b)
    } else {
        (m2.b, m2.a)
    };
    if count(head, other) == 0 {
        return Err(Error::NotPathRealizable(
            "the first cluster never leads to the second".into(),
        ));
    }
    let mut trail = vec![head, other];
    let mut stock: FxHashMap<(usize, usize), u32> = FxHashMap::default();
    stock.insert((head, other), 1);
    let mut levels = Vec::with_capacity(n - 1);
    levels.push(certify(&h, n, 2, &trail, &stock, false));

    for k in 3..=n {
        let m = *h.merge_at(k);
        let (a, b, psi) = (m.a, m.b, m.merged);

        // split stocked edges through ψ
        let mut next: FxHashMap<(usize, usize), u32> = FxHashMap::default();
        for (&(u, v), &s) in &stock {
            let key = if u == psi {
                let pick = pick_part(a, b, |x| count(x, v) > 0, |x| dist(x, v)).ok_or_else(|| {
                    Error::InconsistentOccupation(format!("stocked edge out of cluster {psi} has no occupation"))
                })?;
                (pick, v)
            } else if v == psi {
                let pick = pick_part(a, b, |y| count(u, y) > 0, |y| dist(u, y)).ok_or_else(|| {
                    Error::InconsistentOccupation(format!("stocked edge into cluster {psi} has no occupation"))
                })?;
                (u, pick)
            } else {
                (u, v)
            };
            *next.entry(key).or_insert(0) += s;
        }
        stock = next;

        // e_k*: a non-loop occupied edge out of a vertex without stock
        let level = h.level(k);
        let mut stocked = FxHashMap::default();
        for &(u, _) in stock.keys() {
            stocked.insert(u, ());
        }
        let mut best: Option<(i64, usize, usize, usize, usize)> = None;
        for &x in &level {
            if stocked.contains_key(&x) {
                continue;
            }
            for &y in &level {
                if x == y || count(x, y) == 0 {
                    continue;
                }
                let key = (h.distance_sq(x, y), h.members(x)[0], h.members(y)[0], x, y);
                if best.map_or(true, |b| (key.0, key.1, key.2) < (b.0, b.1, b.2)) {
                    best = Some(key);
                }
            }
        }
        let (_, _, _, ex, ey) = best.ok_or_else(|| {
            Error::NotPathRealizable(format!("no vertex of level {k} can carry the new stock"))
        })?;
        *stock.entry((ex, ey)).or_insert(0) += 1;

        // splice ψ out of the trail
        let pos = trail.iter().position(|&c| c == psi).expect("ψ is on the trail");
        let last = pos + 1 == trail.len();
        let (pair, case_two) = if pos == 0 {
            let (first, second) = if contains(a, z1) { (a, b) } else { (b, a) };
            let next_v = trail[1];
            // Case 2 when the head part is also the one nearest to the successor
            let case_two = !last && dist(first, next_v) < dist(second, next_v);
            ([first, second], case_two)
        } else if last {
            let prev = trail[pos - 1];
            if dist(prev, b) < dist(prev, a) {
                ([b, a], false)
            } else {
                ([a, b], false)
            }
        } else {
            let (prev, succ) = (trail[pos - 1], trail[pos + 1]);
            let cost = |x: usize, y: usize| dist(prev, x) * dist(x, y) * dist(y, succ);
            let order = if cost(b, a) < cost(a, b) { [b, a] } else { [a, b] };
            let old = dist(prev, psi) * dist(psi, succ);
            let case_two = cost(order[0], order[1]) > old * dist(a, b) * (1.0 + 1e-12);
            (order, case_two)
        };
        trail.splice(pos..=pos, pair);
        levels.push(certify(&h, n, k, &trail, &stock, case_two));
    }

    let mut stock_sites: Vec<(usize, usize, u32)> = stock
        .iter()
        .filter(|(_, &s)| s > 0)
        .map(|(&(u, v), &s)| (h.members(u)[0], h.members(v)[0], s))
        .collect();
    stock_sites.sort_unstable();
    Ok(TrailStock {
        sites: occ.sites().to_vec(),
        trail: trail.iter().map(|&c| h.members(c)[0]).collect(),
        stock: stock_sites,
        levels,
    })
}

/// Chooses between the two halves of a split cluster: only parts passing
/// `ok` qualify, and the one at larger pseudo-distance wins (ties to `a`).
fn pick_part(a: usize, b: usize, ok: impl Fn(usize) -> bool, d: impl Fn(usize) -> f64) -> Option<usize> {
    match (ok(a), ok(b)) {
        (true, true) => Some(if d(b) > d(a) { b } else { a }),
        (true, false) => Some(a),
        (false, true) => Some(b),
        (false, false) => None,
    }
}

fn certify(
    h: &CoalescenceHierarchy,
    n: usize,
    k: usize,
    trail: &[usize],
    stock: &FxHashMap<(usize, usize), u32>,
    case_two: bool,
) -> LevelCertificate {
    // N!/(N-k+1)! = N (N-1) ... (N-k+2)
    let mut lhs: f64 = ((n - k + 2)..=n).map(|i| i as f64).product();
    for (&(u, v), &s) in stock {
        lhs *= h.distance(u, v).powi(s as i32);
    }
    let rhs = trail.windows(2).map(|w| h.distance(w[0], w[1])).product();
    LevelCertificate {
        level: k,
        lhs,
        rhs,
        case_two,
    }
}

/// `ℰ_S`: stocked edges are removed and turned into loops at their tail.
pub fn stocked_occupation(occ: &EdgeOccupation, ts: &TrailStock) -> Vec<u32> {
    let n = occ.len();
    let mut counts = occ.counts().to_vec();
    for &(a, b, s) in &ts.stock {
        counts[a * n + b] -= s;
        counts[a * n + a] += s;
    }
    counts
}

/// Both sides of the loop-transfer inequality
/// `Π_z multinomial(ℰ(z,·)) <= n̄^N Π_z multinomial(ℰ_S(z,·))`.
pub fn loop_transfer_sides(occ: &EdgeOccupation, ts: &TrailStock) -> (BigUint, BigUint) {
    let n = occ.len();
    let es = stocked_occupation(occ, ts);
    let n_bar = (0..n).map(|z| occ.visits(z)).max().unwrap_or(0);
    let mut lhs = BigUint::from(1u32);
    let mut rhs = BigUint::from(n_bar).pow(n as u32);
    for z in 0..n {
        lhs *= multinomial(&occ.counts()[z * n..(z + 1) * n]);
        rhs *= multinomial(&es[z * n..(z + 1) * n]);
    }
    (lhs, rhs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(c: &[i32]) -> LatticePoint {
        LatticePoint::new(c).unwrap()
    }

    #[test]
    fn two_sites() {
        let s = [p(&[0, 0, 0, 0, 0]), p(&[2, 0, 0, 0, 0])];
        let occ = EdgeOccupation::from_sequence(&s, &[0, 1]).unwrap();
        let ts = extract_trail_stock(&occ).unwrap();
        assert_eq!(ts.trail, vec![0, 1]);
        assert_eq!(ts.stock, vec![(0, 1, 1)]);
        assert_eq!(ts.lhs(), 2.0 * 2.0);
        assert_eq!(ts.rhs(), 2.0);
        assert!(ts.certified());
        ts.check(&occ).unwrap();
    }

    #[test]
    fn starts_at_first_visit() {
        let s = [p(&[0, 0, 0]), p(&[1, 0, 0]), p(&[5, 0, 0]), p(&[5, 1, 0])];
        let occ = EdgeOccupation::from_sequence(&s, &[2, 2, 0, 1, 0, 3, 1]).unwrap();
        let ts = extract_trail_stock(&occ).unwrap();
        assert_eq!(ts.trail[0], 2);
        assert!(ts.certified());
        ts.check(&occ).unwrap();
        let (l, r) = loop_transfer_sides(&occ, &ts);
        assert!(l <= r);
    }

    #[test]
    fn inconsistent_input_rejected() {
        let s = [p(&[0, 0, 0]), p(&[1, 0, 0])];
        let occ = EdgeOccupation::from_counts(&s, vec![1, 0, 0, 0], 0, 0).unwrap();
        assert!(matches!(
            extract_trail_stock(&occ),
            Err(Error::InconsistentOccupation(_))
        ));
    }

    #[test]
    fn stocked_occupation_preserves_out_degrees() {
        let s = [p(&[0, 0, 0]), p(&[1, 0, 0]), p(&[0, 2, 0])];
        let occ = EdgeOccupation::from_sequence(&s, &[1, 0, 2, 2, 0, 1]).unwrap();
        let ts = extract_trail_stock(&occ).unwrap();
        let es = stocked_occupation(&occ, &ts);
        for z in 0..3 {
            let a: u32 = occ.counts()[z * 3..z * 3 + 3].iter().sum();
            let b: u32 = es[z * 3..z * 3 + 3].iter().sum();
            assert_eq!(a, b);
        }
    }
}
