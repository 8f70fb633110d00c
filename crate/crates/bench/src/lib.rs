//! Shared fixtures for the benchmarks.

use ilt_core::sets::random_connected_set;
use ilt_core::{LatticePoint, StreamKey};

/// A connected set of `size` sites in `Z^5`, fixed by `seed`.
pub fn connected_set(size: usize, seed: u64) -> Vec<LatticePoint> {
    random_connected_set(5, size, &mut StreamKey::new(seed, 0).rng())
}

/// A lazy path through `sites` that revisits each site a few times.
pub fn looping_path(sites: &[LatticePoint], rounds: usize) -> Vec<LatticePoint> {
    let mut path = Vec::with_capacity(sites.len() * rounds);
    for r in 0..rounds {
        for (i, z) in sites.iter().enumerate() {
            path.push(*z);
            if (i + r) % 3 == 0 {
                path.push(*z);
            }
        }
    }
    path
}
