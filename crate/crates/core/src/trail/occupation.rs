//! Edge occupations of a path restricted to a finite set.

use num_bigint::BigUint;
use num_traits::One;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid, Error, Result};
use crate::lattice::LatticePoint;
use crate::sets::validate_sites;

/// Counts of oriented consecutive-visit pairs `(z, x)` of a path's visits
/// to `Λ`, loops included, with the first and last visited sites.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct EdgeOccupation {
    sites: Vec<LatticePoint>,
    counts: Vec<u32>,
    first: usize,
    last: usize,
}

impl EdgeOccupation {
    /// Builds the occupation of a sequence of site indices (the path's
    /// successive visits to `Λ`).
    pub fn from_sequence(sites: &[LatticePoint], seq: &[usize]) -> Result<Self> {
        let n = sites.len();
        let (&first, &last) = match (seq.first(), seq.last()) {
            (Some(f), Some(l)) => (f, l),
            _ => return Err(Error::PathMissesSet),
        };
        if seq.iter().any(|&i| i >= n) {
            return Err(invalid("sequence", "site index out of range"));
        }
        let mut counts = vec![0u32; n * n];
        for w in seq.windows(2) {
            counts[w[0] * n + w[1]] += 1;
        }
        Ok(Self {
            sites: sites.to_vec(),
            counts,
            first,
            last,
        })
    }

    /// Builds an occupation from explicit counts; no consistency check.
    pub fn from_counts(sites: &[LatticePoint], counts: Vec<u32>, first: usize, last: usize) -> Result<Self> {
        let n = sites.len();
        if counts.len() != n * n || first >= n || last >= n {
            return Err(invalid("counts", "shape does not match the site list"));
        }
        Ok(Self {
            sites: sites.to_vec(),
            counts,
            first,
            last,
        })
    }

    pub fn sites(&self) -> &[LatticePoint] {
        &self.sites
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn first(&self) -> usize {
        self.first
    }

    pub fn last(&self) -> usize {
        self.last
    }

    pub fn count(&self, from: usize, to: usize) -> u32 {
        self.counts[from * self.sites.len() + to]
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn out_degree(&self, z: usize) -> u32 {
        let n = self.sites.len();
        self.counts[z * n..(z + 1) * n].iter().sum()
    }

    pub fn in_degree(&self, z: usize) -> u32 {
        let n = self.sites.len();
        (0..n).map(|x| self.counts[x * n + z]).sum()
    }

    /// `n(z) = Σ_x ℰ(z, x) + 1{z = z_t}`.
    pub fn visits(&self, z: usize) -> u32 {
        self.out_degree(z) + u32::from(z == self.last)
    }

    /// Total number of visits `t`.
    pub fn total_visits(&self) -> u32 {
        self.counts.iter().sum::<u32>() + 1
    }

    /// Checks that the counts come from a single path from `z_1` to `z_t`
    /// that visits every site: in-flow plus the start equals out-flow plus
    /// the end at every site.
    pub fn check_consistency(&self) -> Result<()> {
        for z in 0..self.sites.len() {
            let inflow = self.in_degree(z) + u32::from(z == self.first);
            let outflow = self.out_degree(z) + u32::from(z == self.last);
            if inflow != outflow {
                return Err(Error::InconsistentOccupation(format!(
                    "site {:?}: {inflow} arrivals but {outflow} departures",
                    self.sites[z]
                )));
            }
            if outflow == 0 {
                return Err(Error::InconsistentOccupation(format!(
                    "site {:?} is never visited",
                    self.sites[z]
                )));
            }
        }
        Ok(())
    }

    /// Checks `visits(z) = n(z)` for a prescribed profile.
    pub fn check_profile(&self, profile: &[u32]) -> Result<()> {
        if profile.len() != self.sites.len() {
            return Err(invalid("profile", "length differs from the site list"));
        }
        for (z, &n) in profile.iter().enumerate() {
            if self.visits(z) != n {
                return Err(Error::InconsistentOccupation(format!(
                    "site {:?}: {} visits, profile asks for {n}",
                    self.sites[z],
                    self.visits(z)
                )));
            }
        }
        Ok(())
    }
}

/// Restricts a lattice path to its visits to `Λ` and counts edges.
pub fn edge_occupation(path: &[LatticePoint], sites: &[LatticePoint]) -> Result<EdgeOccupation> {
    validate_sites(sites)?;
    let seq: Vec<usize> = path
        .iter()
        .filter_map(|z| sites.iter().position(|s| s == z))
        .collect();
    EdgeOccupation::from_sequence(sites, &seq)
}

/// `Π_z (Σ_x ℰ(z,x))! / Π_x ℰ(z,x)!`.
pub fn multinomial_count_bound(occ: &EdgeOccupation) -> BigUint {
    let n = occ.len();
    let mut total = BigUint::one();
    for z in 0..n {
        total *= multinomial(&occ.counts[z * n..(z + 1) * n]);
    }
    total
}

/// `(Σ k_i)! / Π k_i!` computed as a product of binomials.
pub fn multinomial(parts: &[u32]) -> BigUint {
    let mut out = BigUint::one();
    let mut acc = 0u64;
    for &k in parts {
        for j in 1..=k as u64 {
            acc += 1;
            out *= acc;
            out /= j;
        }
    }
    out
}

#[derive(Serialize, Deserialize)]
struct OccupationJson {
    sites: Vec<LatticePoint>,
    first: LatticePoint,
    last: LatticePoint,
    /// `[from, to, count]` for every nonzero count.
    counts: Vec<(LatticePoint, LatticePoint, u32)>,
}

impl Serialize for EdgeOccupation {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let n = self.sites.len();
        let counts = (0..n * n)
            .filter(|&k| self.counts[k] > 0)
            .map(|k| (self.sites[k / n], self.sites[k % n], self.counts[k]))
            .collect();
        OccupationJson {
            sites: self.sites.clone(),
            first: self.sites[self.first],
            last: self.sites[self.last],
            counts,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for EdgeOccupation {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let j = OccupationJson::deserialize(d)?;
        let idx = |z: &LatticePoint| {
            j.sites
                .iter()
                .position(|s| s == z)
                .ok_or_else(|| D::Error::custom(format!("site {z:?} not in site list")))
        };
        let n = j.sites.len();
        let mut counts = vec![0u32; n * n];
        for (a, b, c) in &j.counts {
            counts[idx(a)? * n + idx(b)?] += c;
        }
        Ok(Self {
            first: idx(&j.first)?,
            last: idx(&j.last)?,
            sites: j.sites,
            counts,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(c: &[i32]) -> LatticePoint {
        LatticePoint::new(c).unwrap()
    }

    #[test]
    fn single_visit() {
        let z = p(&[1, 0, 0]);
        let occ = edge_occupation(&[p(&[0, 0, 0]), z, p(&[2, 0, 0])], &[z]).unwrap();
        assert!(occ.counts().iter().all(|&c| c == 0));
        assert_eq!((occ.first(), occ.last()), (0, 0));
        assert_eq!(occ.visits(0), 1);
    }

    #[test]
    fn alternating_path() {
        let (a, b) = (p(&[1, 0, 0]), p(&[0, 1, 0]));
        let o = p(&[0, 0, 0]);
        let occ = edge_occupation(&[o, a, o, b, o, a, b], &[a, b]).unwrap();
        assert_eq!(occ.count(0, 1), 2);
        assert_eq!(occ.count(1, 0), 1);
        assert_eq!((occ.first(), occ.last()), (0, 1));
        occ.check_consistency().unwrap();
        occ.check_profile(&[2, 2]).unwrap();
    }

    #[test]
    fn missing_set_is_an_error() {
        let a = p(&[1, 0, 0]);
        assert!(matches!(
            edge_occupation(&[p(&[0, 0, 0])], &[a]),
            Err(Error::PathMissesSet)
        ));
    }

    #[test]
    fn multinomials() {
        let sites = [p(&[0, 0, 0]), p(&[1, 0, 0]), p(&[2, 0, 0])];
        // z -> a once, z -> b once
        let occ = EdgeOccupation::from_sequence(&sites, &[0, 1, 0, 2]).unwrap();
        // site 0 has out-edges (0,1), (0,2): 2!/(1!1!) = 2; site 1 has (1,0): 1
        assert_eq!(multinomial_count_bound(&occ), BigUint::from(2u32));
        let line = EdgeOccupation::from_sequence(&sites, &[0, 1, 2]).unwrap();
        assert_eq!(multinomial_count_bound(&line), BigUint::one());
        assert_eq!(multinomial(&[2, 3, 1]), BigUint::from(60u32));
    }

    #[test]
    fn inconsistent_counts_detected() {
        let sites = [p(&[0, 0, 0]), p(&[1, 0, 0])];
        let occ = EdgeOccupation::from_counts(&sites, vec![0, 2, 0, 0], 0, 1).unwrap();
        assert!(matches!(occ.check_consistency(), Err(Error::InconsistentOccupation(_))));
    }

    #[test]
    fn json_roundtrip() {
        let sites = [p(&[0, 0, 0]), p(&[1, 0, 0]), p(&[1, 1, 0])];
        let occ = EdgeOccupation::from_sequence(&sites, &[2, 0, 0, 1, 2]).unwrap();
        let s = serde_json::to_string(&occ).unwrap();
        let back: EdgeOccupation = serde_json::from_str(&s).unwrap();
        assert_eq!(back, occ);
    }
}
