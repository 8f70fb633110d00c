use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use ilt_bench::{connected_set, looping_path};
use ilt_core::capacity::equilibrium_solve;
use ilt_core::lattice::simulate_replica;
use ilt_core::rate::{green_minus_delta, operator_norm, POWER_TOLERANCE};
use ilt_core::sets::cube;
use ilt_core::trail::{edge_occupation, extract_trail_stock};
use ilt_core::{GreenOracle, Horizon, StreamKey};

fn green(c: &mut Criterion) {
    c.bench_function("green_solve_d5_b8", |b| b.iter(|| GreenOracle::solve(5, black_box(8)).unwrap()));
}

fn walks(c: &mut Criterion) {
    let horizon = Horizon::TruncatedInfinite { stop_radius: 20 };
    let mut stream = 0;
    c.bench_function("truncated_walk_d5_r20", |b| {
        b.iter(|| {
            stream += 1;
            simulate_replica(5, StreamKey::new(1, stream), horizon, true).unwrap()
        })
    });
}

fn capacity(c: &mut Criterion) {
    let g = GreenOracle::solve(5, 12).unwrap();
    let set = connected_set(32, 3);
    c.bench_function("equilibrium_solve_32", |b| b.iter(|| equilibrium_solve(black_box(&set), &g).unwrap()));
}

fn trail(c: &mut Criterion) {
    let set = connected_set(8, 5);
    let occ = edge_occupation(&looping_path(&set, 4), &set).unwrap();
    c.bench_function("trail_stock_8", |b| b.iter(|| extract_trail_stock(black_box(&occ)).unwrap()));
}

fn rate(c: &mut Criterion) {
    let g = GreenOracle::solve(5, 12).unwrap();
    let kernel = green_minus_delta(&cube(5, 2)[..27], &g).unwrap();
    c.bench_function("operator_norm_27", |b| b.iter(|| operator_norm(black_box(&kernel), POWER_TOLERANCE)));
}

criterion_group!(benches, green, walks, capacity, trail, rate);
criterion_main!(benches);
