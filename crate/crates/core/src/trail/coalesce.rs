//! Single-linkage coalescence of a finite set.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::lattice::LatticePoint;
use crate::sets::validate_sites;

/// One merge `e_k = (a_k, ã_k) -> ψ_{k-1}`, identified by cluster ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Merge {
    /// Level `k` before the merge.
    pub level: usize,
    pub a: usize,
    pub b: usize,
    pub merged: usize,
    /// `d_k(a_k, ã_k)²` (squared to stay exact).
    pub distance_sq: i64,
}

/// The hierarchy `Λ_N ⊃ ... ⊃ Λ_1`.
///
/// Clusters live in an arena: ids `0..N` are the singletons `{z_i}` and each
/// merge appends one cluster. Sites are ordered as given; ties between
/// minimal pairs go to the lexicographically smallest pair of sites.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoalescenceHierarchy {
    sites: Vec<LatticePoint>,
    clusters: Vec<Vec<usize>>,
    merges: Vec<Merge>,
}

/// Merges the closest pair of clusters until one remains.
pub fn coalesce(sites: &[LatticePoint]) -> Result<CoalescenceHierarchy> {
    validate_sites(sites)?;
    let n = sites.len();
    if n < 2 {
        return Err(invalid("sites", "coalescence needs at least two sites"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| sites[i]);
    let mut owner: Vec<usize> = (0..n).collect();
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut merges = Vec::with_capacity(n - 1);
    for level in (2..=n).rev() {
        let mut best: Option<(i64, usize, usize)> = None;
        for (pi, &i) in order.iter().enumerate() {
            for &j in &order[pi + 1..] {
                if owner[i] == owner[j] {
                    continue;
                }
                let d = (sites[i] - sites[j]).norm_sq();
                if best.map_or(true, |(bd, _, _)| d < bd) {
                    best = Some((d, i, j));
                }
            }
        }
        let (distance_sq, i, j) = best.expect("at least two clusters remain");
        let (a, b) = (owner[i], owner[j]);
        let merged = clusters.len();
        let mut members: Vec<usize> = clusters[a].iter().chain(&clusters[b]).copied().collect();
        members.sort_unstable();
        for &m in &members {
            owner[m] = merged;
        }
        clusters.push(members);
        merges.push(Merge {
            level,
            a,
            b,
            merged,
            distance_sq,
        });
    }
    Ok(CoalescenceHierarchy {
        sites: sites.to_vec(),
        clusters,
        merges,
    })
}

impl CoalescenceHierarchy {
    pub fn sites(&self) -> &[LatticePoint] {
        &self.sites
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn members(&self, cluster: usize) -> &[usize] {
        &self.clusters[cluster]
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    /// The merge `e_k` performed at level `k` (`2 <= k <= N`).
    pub fn merge_at(&self, k: usize) -> &Merge {
        &self.merges[self.sites.len() - k]
    }

    /// Cluster ids of `Λ_k`, ordered by their smallest member.
    pub fn level(&self, k: usize) -> Vec<usize> {
        let n = self.sites.len();
        assert!((1..=n).contains(&k));
        let mut alive = vec![true; self.clusters.len()];
        alive[n + (n - k)..].iter_mut().for_each(|x| *x = false);
        for m in &self.merges[..n - k] {
            alive[m.a] = false;
            alive[m.b] = false;
        }
        let mut ids: Vec<usize> = (0..n + (n - k)).filter(|&c| alive[c]).collect();
        ids.sort_by_key(|&c| self.clusters[c][0]);
        ids
    }

    /// `d_k(c, c')²`: the smallest squared distance between members.
    pub fn distance_sq(&self, c: usize, c2: usize) -> i64 {
        let mut best = i64::MAX;
        for &x in &self.clusters[c] {
            for &y in &self.clusters[c2] {
                best = best.min((self.sites[x] - self.sites[y]).norm_sq());
            }
        }
        best
    }

    pub fn distance(&self, c: usize, c2: usize) -> f64 {
        (self.distance_sq(c, c2) as f64).sqrt()
    }

    /// Id of the cluster of `Λ_k` containing site `i`.
    pub fn cluster_of(&self, i: usize, k: usize) -> usize {
        let n = self.sites.len();
        let mut c = i;
        for m in &self.merges[..n - k] {
            if m.a == c || m.b == c {
                c = m.merged;
            }
        }
        c
    }
}
