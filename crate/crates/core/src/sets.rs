//! Finite subsets of `Z^d`: generators and JSON site lists.

use std::path::Path;

use rand::Rng;
use rustc_hash::FxHashSet;

use crate::error::{invalid, Result};
use crate::lattice::LatticePoint;

/// Grows a connected set of `size` sites from the origin by repeatedly
/// adding a uniformly chosen nearest neighbour of the current set.
pub fn random_connected_set<R: Rng + ?Sized>(dim: usize, size: usize, rng: &mut R) -> Vec<LatticePoint> {
    let origin = LatticePoint::origin(dim);
    let mut set = vec![origin];
    let mut members: FxHashSet<LatticePoint> = FxHashSet::default();
    members.insert(origin);
    let mut frontier: Vec<LatticePoint> = Vec::new();
    let mut in_frontier: FxHashSet<LatticePoint> = FxHashSet::default();
    let push_neighbors = |z: LatticePoint,
                          members: &FxHashSet<LatticePoint>,
                          frontier: &mut Vec<LatticePoint>,
                          in_frontier: &mut FxHashSet<LatticePoint>| {
        for y in z.lazy_neighbors() {
            if !members.contains(&y) && in_frontier.insert(y) {
                frontier.push(y);
            }
        }
    };
    push_neighbors(origin, &members, &mut frontier, &mut in_frontier);
    while set.len() < size {
        let i = rng.random_range(0..frontier.len());
        let z = frontier.swap_remove(i);
        in_frontier.remove(&z);
        members.insert(z);
        set.push(z);
        push_neighbors(z, &members, &mut frontier, &mut in_frontier);
    }
    set.sort_unstable();
    set
}

/// `{0, .., side-1}^d`.
pub fn cube(dim: usize, side: i32) -> Vec<LatticePoint> {
    let mut out = Vec::new();
    let mut c = vec![0i32; dim];
    loop {
        out.push(LatticePoint::new(&c).expect("valid dimension"));
        let mut i = 0;
        loop {
            if i == dim {
                out.sort_unstable();
                return out;
            }
            c[i] += 1;
            if c[i] < side {
                break;
            }
            c[i] = 0;
            i += 1;
        }
    }
}

/// The l¹ ball `{z : |z| <= r}`.
pub fn l1_ball(dim: usize, r: i64) -> Vec<LatticePoint> {
    let mut out = vec![LatticePoint::origin(dim)];
    let mut shell = vec![LatticePoint::origin(dim)];
    let mut seen: FxHashSet<LatticePoint> = shell.iter().copied().collect();
    for _ in 0..r {
        let mut next = Vec::new();
        for z in &shell {
            for y in z.lazy_neighbors() {
                if seen.insert(y) {
                    next.push(y);
                }
            }
        }
        out.extend_from_slice(&next);
        shell = next;
    }
    out.sort_unstable();
    out
}

/// Checks that a site list is nonempty, of one dimension, and free of
/// duplicates.
pub fn validate_sites(sites: &[LatticePoint]) -> Result<()> {
    let first = sites
        .first()
        .ok_or_else(|| invalid("sites", "site list is empty"))?;
    if sites.iter().any(|z| z.dim() != first.dim()) {
        return Err(invalid("sites", "sites have mixed dimensions"));
    }
    let distinct: FxHashSet<_> = sites.iter().collect();
    if distinct.len() != sites.len() {
        return Err(invalid("sites", "site list has duplicates"));
    }
    Ok(())
}

/// Reads a JSON array of coordinate arrays.
pub fn read_sites(path: &Path) -> Result<Vec<LatticePoint>> {
    let text = std::fs::read_to_string(path)?;
    let sites: Vec<LatticePoint> = serde_json::from_str(&text)?;
    validate_sites(&sites)?;
    Ok(sites)
}

pub fn write_sites(path: &Path, sites: &[LatticePoint]) -> Result<()> {
    std::fs::write(path, serde_json::to_string(sites)?)?;
    Ok(())
}

/// `z -> (s_i z_{p(i)})_i` as `(p, s)`.
pub type SignedPermutation = (Vec<usize>, Vec<i32>);

/// All `2^d d!` signed coordinate permutations.
pub fn hyperoctahedral_group(dim: usize) -> Vec<SignedPermutation> {
    let mut perms = Vec::new();
    permutations(&mut (0..dim).collect(), 0, &mut perms);
    let mut out = Vec::with_capacity(perms.len() << dim);
    for p in perms {
        for signs in 0..1u32 << dim {
            let s = (0..dim).map(|i| if signs >> i & 1 == 1 { -1 } else { 1 }).collect();
            out.push((p.clone(), s));
        }
    }
    out
}

fn permutations(v: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
    if k == v.len() {
        out.push(v.clone());
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permutations(v, k + 1, out);
        v.swap(k, i);
    }
}

pub fn act(g: &SignedPermutation, z: &LatticePoint) -> LatticePoint {
    let c: Vec<i32> = (0..z.dim()).map(|i| g.1[i] * z.coords()[g.0[i]]).collect();
    LatticePoint::new(&c).expect("same dimension")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::StreamKey;

    #[test]
    fn random_sets_are_connected_and_distinct() {
        let mut rng = StreamKey::new(3, 0).rng();
        for size in [1, 8, 27, 64] {
            let set = random_connected_set(5, size, &mut rng);
            assert_eq!(set.len(), size);
            validate_sites(&set).unwrap();
            assert!(set.contains(&LatticePoint::origin(5)));
            // connectivity by flood fill
            let members: FxHashSet<_> = set.iter().copied().collect();
            let mut seen = FxHashSet::default();
            let mut stack = vec![LatticePoint::origin(5)];
            seen.insert(stack[0]);
            while let Some(z) = stack.pop() {
                for y in z.lazy_neighbors() {
                    if members.contains(&y) && seen.insert(y) {
                        stack.push(y);
                    }
                }
            }
            assert_eq!(seen.len(), size);
        }
    }

    #[test]
    fn ball_and_cube_sizes() {
        assert_eq!(l1_ball(5, 1).len(), 11);
        assert_eq!(l1_ball(5, 2).len(), 61);
        assert_eq!(l1_ball(5, 3).len(), 231);
        assert_eq!(cube(5, 2).len(), 32);
        assert_eq!(cube(3, 3).len(), 27);
    }

    #[test]
    fn json_roundtrip() {
        let dir = std::env::temp_dir().join(format!("ilt-sites-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("s.json");
        let sites = cube(3, 2);
        write_sites(&path, &sites).unwrap();
        assert_eq!(read_sites(&path).unwrap(), sites);
        std::fs::write(&path, "[[0,0,0],[0,0,0]]").unwrap();
        assert!(read_sites(&path).is_err());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
