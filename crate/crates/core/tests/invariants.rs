use std::sync::OnceLock;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ilt_core::capacity::equilibrium_solve;
use ilt_core::lattice::simulate_local_times;
use ilt_core::moments::{intersection, zeta};
use ilt_core::sets::{act, hyperoctahedral_group, random_connected_set};
use ilt_core::trail::extract_trail_stock;
use ilt_core::{EdgeOccupation, GreenOracle, Horizon, LatticePoint};

fn oracle() -> &'static GreenOracle {
    static G: OnceLock<GreenOracle> = OnceLock::new();
    G.get_or_init(|| GreenOracle::solve(5, 12).unwrap())
}

fn site() -> impl Strategy<Value = LatticePoint> {
    prop::collection::vec(-6i32..=6, 5).prop_map(|c| LatticePoint::new(&c).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn green_is_hypercubic_symmetric(z in site(), g in 0usize..3840) {
        let g = &hyperoctahedral_group(5)[g];
        let a = oracle().value(&z).unwrap();
        let b = oracle().value(&act(g, &z)).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a);
        prop_assert!(a <= oracle().g0());
    }

    #[test]
    fn local_times_count_every_step(seed in any::<u64>(), n in 0u64..200) {
        let f = simulate_local_times(5, seed, Horizon::Finite(n)).unwrap();
        prop_assert_eq!(f.total(), n + 1);
        let g = simulate_local_times(5, seed ^ 1, Horizon::Finite(n)).unwrap();
        prop_assert_eq!(zeta(&f, &g, 2.0).value, intersection(&f, &g) as f64);
        prop_assert!(f.get(&LatticePoint::origin(5)) >= 1);
    }

    #[test]
    fn capacity_is_monotone_and_subadditive(size in 2usize..12, cut in 1usize..11, seed in any::<u64>()) {
        let set = random_connected_set(5, size, &mut ChaCha8Rng::seed_from_u64(seed));
        let cut = cut.min(size - 1);
        let g = oracle();
        let whole = equilibrium_solve(&set, g).unwrap();
        let (a, b) = (equilibrium_solve(&set[..cut], g).unwrap(), equilibrium_solve(&set[cut..], g).unwrap());
        prop_assert!((whole.capacity - whole.measure.iter().sum::<f64>()).abs() < 1e-9);
        prop_assert!(a.capacity <= whole.capacity + 1e-8 && b.capacity <= whole.capacity + 1e-8);
        prop_assert!(whole.capacity <= a.capacity + b.capacity + 1e-8);
    }

    #[test]
    fn trail_stock_is_certified(size in 1usize..6, seq in prop::collection::vec(0usize..6, 1..14), seed in any::<u64>()) {
        let sites = random_connected_set(5, size, &mut ChaCha8Rng::seed_from_u64(seed));
        let mut seq: Vec<usize> = seq.into_iter().map(|i| i % size).collect();
        // every site must be visited
        for i in 0..size {
            if !seq.contains(&i) {
                seq.push(i);
            }
        }
        let occ = EdgeOccupation::from_sequence(&sites, &seq).unwrap();
        prop_assert_eq!(occ.counts().iter().sum::<u32>() as usize, seq.len() - 1);
        prop_assert_eq!(occ.total_visits() as usize, seq.len());
        let ts = extract_trail_stock(&occ).unwrap();
        prop_assert!(ts.certified());
        prop_assert!(ts.check(&occ).is_ok(), "{:?}", ts.check(&occ));
    }
}
