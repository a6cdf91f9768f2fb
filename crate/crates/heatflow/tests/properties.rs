// SPDX-License-Identifier: Apache-2.0

mod common;

use proptest::prelude::*;

use common::*;
use heatflow::fock::{car_matrices, monomial_operator, multicommutator, relative_entropy_fock, quasi_free_density};
use heatflow::lattice::*;
use heatflow::linalg::{conjugate, hermiticity_defect, max_abs_diff, CMatrix};
use heatflow::onebody::*;
use heatflow::quasifree::*;
use heatflow::trees::*;

fn small_config() -> impl Strategy<Value = (usize, f64, f64, u64)> {
    (1usize..=2, 1.0f64..3.5, 0.0f64..2.0, any::<u64>())
        .prop_filter("box size", |(d, l, _, _)| *d == 1 || *l < 2.5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn site_index_roundtrip(dim in 1usize..=3, half in 0.5f64..4.0, k in any::<prop::sample::Index>()) {
        let b = LatticeBox::new(dim, half).unwrap();
        let i = k.index(b.len());
        prop_assert_eq!(b.index(&b.site(i)), Some(i));
        prop_assert_eq!(b.len(), (2 * half.floor() as usize + 1).pow(dim as u32));
    }

    #[test]
    fn hamiltonian_spectrum_bounds((dim, half, lambda, seed) in small_config()) {
        let b = LatticeBox::new(dim, half).unwrap();
        let h = hamiltonian(&b, &sample_disorder(&b, seed), lambda).unwrap();
        let e = heatflow::linalg::Eigh::new(h.entries());
        let top = 4.0 * dim as f64 + lambda + 1e-10;
        prop_assert!(e.values.iter().all(|&v| v >= -lambda - 1e-10 && v <= top));
    }

    #[test]
    fn peierls_is_hermitian(dim in 1usize..=2, eta in -1.0f64..1.0, l in 0.5f64..3.0, t in -0.5f64..2.5) {
        let b = LatticeBox::new(dim, 3.0).unwrap();
        let spec = VectorPotentialSpec::bump(dim, eta, l, 0.0, 2.0);
        let p = peierls_laplacian(&b, &spec, t).unwrap();
        prop_assert!(hermiticity_defect(p.entries()) <= 1e-12);
        if !(0.0..=2.0).contains(&t) || t == 0.0 || t == 2.0 {
            prop_assert_eq!(max_abs_diff(p.entries(), laplacian(&b).entries()), 0.0);
        }
    }

    #[test]
    fn propagators_stay_unitary((dim, half, lambda, seed) in small_config(), eta in -0.5f64..0.5, t in 0.0f64..3.0) {
        let b = LatticeBox::new(dim, half).unwrap();
        let h = hamiltonian(&b, &sample_disorder(&b, seed), lambda).unwrap();
        prop_assert!(free_propagator(&h, t).unwrap().defect() <= 1e-10);
        let spec = VectorPotentialSpec::bump(dim, eta, 1.5, 0.0, 2.0);
        prop_assert!(driven_propagator(&h, &spec, 0.0, t, 0.02).unwrap().defect() <= 1e-10);
    }

    #[test]
    fn free_group_law((dim, half, lambda, seed) in small_config(), s in -2.0f64..2.0, t in -2.0f64..2.0) {
        let b = LatticeBox::new(dim, half).unwrap();
        let h = hamiltonian(&b, &sample_disorder(&b, seed), lambda).unwrap();
        let a = free_propagator(&h, s).unwrap().compose(&free_propagator(&h, t).unwrap());
        let c = free_propagator(&h, s + t).unwrap();
        prop_assert!(max_abs_diff(a.entries(), c.entries()) <= 1e-11);
    }

    #[test]
    fn fermi_symbol_is_a_symbol((dim, half, lambda, seed) in small_config(), beta in 0.05f64..5.0) {
        let b = LatticeBox::new(dim, half).unwrap();
        let h = hamiltonian(&b, &sample_disorder(&b, seed), lambda).unwrap();
        let d = fermi_symbol(&h, beta).unwrap();
        prop_assert!(hermiticity_defect(d.entries()) <= 1e-13);
        prop_assert!(d.eigenvalues().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn first_law_for_random_unitaries(seed in any::<u64>(), beta in 0.2f64..3.0, lambda in 0.0f64..2.0) {
        let mut r = rng(seed);
        let h = disordered(1, 3.0, lambda, seed);
        let d = fermi_symbol(&h, beta).unwrap();
        let u = random_unitary(h.len(), &mut r);
        let dt = conjugate(&u, d.entries());
        let q = quasifree_relative_entropy(&dt, d.entries()).unwrap() / beta;
        let s = internal_energy_increment(&dt, d.entries(), h.entries());
        prop_assert!((q - s).abs() <= 1e-10 * (1.0 + s.abs()));
        prop_assert!(s >= -1e-10);
    }

    #[test]
    fn relative_entropy_nonnegative(seed in any::<u64>(), n in 1usize..8) {
        let mut r = rng(seed);
        let a = random_symbol(n, 1e-4, &mut r);
        let b = random_symbol(n, 1e-4, &mut r);
        prop_assert!(quasifree_relative_entropy(&a, &b).unwrap() >= -1e-10);
    }

    #[test]
    fn relative_entropy_oracle(seed in any::<u64>(), n in 1usize..=5) {
        let mut r = rng(seed);
        let a = random_symbol(n, 0.02, &mut r);
        let b = random_symbol(n, 0.02, &mut r);
        let q = quasifree_relative_entropy(&a, &b).unwrap();
        let f = relative_entropy_fock(&quasi_free_density(&a).unwrap(), &quasi_free_density(&b).unwrap());
        prop_assert!((q - f).abs() <= 1e-8 * (1.0 + q.abs()));
    }

    #[test]
    fn restriction_spectrum(seed in any::<u64>(), beta in 0.1f64..4.0) {
        let h = disordered(2, 2.0, 1.0, seed);
        let d = fermi_symbol(&h, beta).unwrap();
        let sub = LatticeBox::new(2, 1.0).unwrap();
        let r = restrict_symbol(&d, &sub).unwrap();
        prop_assert!(SymbolMatrix::new(&sub, r.entries().clone()).is_ok());
    }

    #[test]
    fn wick_on_normal_order_is_a_determinant(seed in any::<u64>(), m in 1usize..=3) {
        let mut r = rng(seed);
        let n = 5;
        let d = random_symbol(n, 0.01, &mut r);
        let f: Vec<_> = (0..m).map(|_| random_vector(n, &mut r)).collect();
        let g: Vec<_> = (0..m).map(|_| random_vector(n, &mut r)).collect();
        let mut factors: Vec<Factor> = f.iter().cloned().map(Factor::creation).collect();
        factors.extend(g.iter().rev().cloned().map(Factor::annihilation));
        let w = wick_expectation(&d, &Monomial::new(factors).unwrap());
        let det = determinant_expectation(&d, &f, &g);
        prop_assert!((w - det).norm() <= 1e-10 * (1.0 + det.norm()));
    }

    #[test]
    fn envelope_translation_invariant(
        pts in prop::collection::vec((-5i64..5, -5i64..5), 2..6),
        shift in (-10i64..10, -10i64..10),
        eps in 0.1f64..2.0,
    ) {
        let a: Vec<Vec<i64>> = pts.iter().map(|&(x, y)| vec![x, y]).collect();
        let b: Vec<Vec<i64>> = pts.iter().map(|&(x, y)| vec![x + shift.0, y + shift.1]).collect();
        let va = tree_decay_envelope(eps, &a).unwrap();
        let vb = tree_decay_envelope(eps, &b).unwrap();
        prop_assert!((va - vb).abs() <= 1e-14 * va.max(1.0));
        prop_assert!(va > 0.0);
    }

    #[test]
    fn signs_and_reduced_lengths(lengths in prop::collection::vec(prop::sample::select(vec![2usize, 4]), 2..=4)) {
        let total: usize = lengths.iter().sum();
        for t in expand_skeleton(&lengths).unwrap() {
            prop_assert!(t.sign == 1 || t.sign == -1);
            prop_assert_eq!(t.reduced.len(), total - 2 * (lengths.len() - 1));
            let mut slots: Vec<_> = t.contraction.iter().flat_map(|&(a, b)| [a, b]).collect();
            slots.extend(t.reduced.iter().copied());
            slots.sort();
            let before = slots.len();
            slots.dedup();
            prop_assert_eq!(slots.len(), before);
            prop_assert_eq!(before, total);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn tree_reconstruction(seed in any::<u64>(), order in 2usize..=4, n_sites in 3usize..=5) {
        let mut r = rng(seed);
        let cars = car_matrices(n_sites).unwrap();
        let monos: Vec<Monomial> = (0..order)
            .map(|_| Monomial::bilinear(random_vector(n_sites, &mut r), random_vector(n_sites, &mut r)))
            .collect();
        let dim = cars[0].dim();
        let mut acc = CMatrix::zeros(dim, dim);
        for t in expand_multicommutator(&monos).unwrap() {
            let c = t.scalar(&monos) * f64::from(t.sign);
            acc += monomial_operator(&cars, &t.reduced_monomial(&monos)).unwrap().entries() * c;
        }
        let ops: Vec<_> = monos.iter().map(|m| monomial_operator(&cars, m).unwrap()).collect();
        let direct = multicommutator(&ops).unwrap();
        prop_assert!(max_abs_diff(&acc, direct.entries()) <= 1e-10);
    }

    #[test]
    fn trajectory_invariants(
        (dim, half, lambda, seed) in small_config(),
        eta in -0.4f64..0.4,
        l in 0.5f64..2.0,
        beta in 0.3f64..3.0,
    ) {
        let b = LatticeBox::new(dim, half).unwrap();
        let h = hamiltonian(&b, &sample_disorder(&b, seed), lambda).unwrap();
        let spec = VectorPotentialSpec::bump(dim, eta, l, 0.0, 1.0);
        let mut opts = TrajectoryOptions::new(&spec, 2.0);
        opts.record_every = 20;
        let traj = simulate_trajectory(&h, &spec, beta, &opts).unwrap();
        prop_assert!(traj.min_internal_energy() >= -1e-10);
        let scale = traj.points.iter().map(|p| p.s.abs()).fold(0.0, f64::max);
        prop_assert!(traj.max_first_law_residual() <= 1e-8 * (1.0 + scale));
        prop_assert!(traj.max_balance_residual() <= 1e-6);
        let off = traj.at(1.0).q_rel;
        for p in traj.points.iter().filter(|p| p.t >= 1.0) {
            prop_assert!((p.q_rel - off).abs() <= 1e-8);
        }
    }
}
