// SPDX-License-Identifier: Apache-2.0

//! Per-seed trajectories through the rayon map against the sequential map.

use criterion::{criterion_group, criterion_main, Criterion};

use heatflow::experiments::runner::disordered_hamiltonian;
use heatflow::lattice::VectorPotentialSpec;
use heatflow::par::{map_collect, map_collect_seq};
use heatflow::quasifree::{simulate_trajectory, TrajectoryOptions};

fn heat(seed: &u64) -> f64 {
    let h = disordered_hamiltonian(1, 12.0, *seed, 1.0).unwrap();
    let spec = VectorPotentialSpec::bump(1, 0.2, 4.0, 0.0, 2.0);
    let mut opts = TrajectoryOptions::new(&spec, spec.t1);
    opts.step = 2.0 / 100.0;
    simulate_trajectory(&h, &spec, 1.0, &opts).unwrap().last().q_rel
}

fn bench(c: &mut Criterion) {
    let seeds: Vec<u64> = (0..8).collect();
    let mut g = c.benchmark_group("per_seed_trajectories");
    g.sample_size(10);
    g.bench_function("parallel", |b| b.iter(|| map_collect(&seeds, heat)));
    g.bench_function("sequential", |b| b.iter(|| map_collect_seq(&seeds, heat)));
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
