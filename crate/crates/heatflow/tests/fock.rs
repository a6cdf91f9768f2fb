// SPDX-License-Identifier: Apache-2.0

mod common;

use num_complex::Complex64;

use common::*;
use heatflow::fock::*;
use heatflow::lattice::*;
use heatflow::linalg::{conjugate, hermiticity_defect, max_abs, max_abs_diff, CMatrix, Eigh};
use heatflow::onebody::*;
use heatflow::quasifree::*;
use heatflow::HeatError;

fn anticommutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a * b + b * a
}

#[test]
fn car_relations() {
    for n in 1..=7 {
        let cars = car_matrices(n).unwrap();
        let dim = 1 << n;
        let id = CMatrix::identity(dim, dim);
        for x in 0..n {
            let ax = cars[x].entries();
            assert_eq!(max_abs(&(ax * ax)), 0.0);
            for y in 0..n {
                let ay = cars[y].entries();
                let ac = anticommutator(ax, &ay.adjoint());
                let expect = if x == y { id.clone() } else { CMatrix::zeros(dim, dim) };
                assert!(max_abs_diff(&ac, &expect) <= 1e-13);
                assert!(max_abs(&anticommutator(ax, ay)) <= 1e-13);
            }
        }
    }
}

#[test]
fn site_guard() {
    assert!(matches!(car_matrices(0), Err(HeatError::ResourceLimit(_))));
    assert!(matches!(
        car_matrices(MAX_FOCK_SITES + 1),
        Err(HeatError::ResourceLimit(_))
    ));
    let b = LatticeBox::new(1, 7.0).unwrap();
    assert!(second_quantize(&laplacian(&b)).is_err());
}

#[test]
fn number_operator_spectrum() {
    let n = 5;
    let num = number_operator(n).unwrap();
    let mut counts = vec![0usize; n + 1];
    for v in Eigh::new(num.entries()).values {
        let k = v.round();
        assert!((v - k).abs() < 1e-12);
        counts[k as usize] += 1;
    }
    let binom = [1, 5, 10, 10, 5, 1];
    assert_eq!(counts, binom);
}

#[test]
fn second_quantized_diagonal_is_subset_sums() {
    let diag = [0.3, -1.2, 2.5, 0.7];
    let m = CMatrix::from_fn(4, 4, |i, j| {
        if i == j { Complex64::new(diag[i], 0.0) } else { Complex64::new(0.0, 0.0) }
    });
    let op = second_quantize_matrix(&m).unwrap();
    let mut got = Eigh::new(op.entries()).values;
    got.sort_by(f64::total_cmp);
    let mut expect: Vec<f64> = (0..16usize)
        .map(|s| (0..4).filter(|x| s & (1 << x) != 0).map(|x| diag[x]).sum())
        .collect();
    expect.sort_by(f64::total_cmp);
    for (a, b) in got.iter().zip(&expect) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn second_quantized_hamiltonian_conserves_number() {
    let h = disordered(2, 1.0, 1.0, 3);
    let big = second_quantize(&h).unwrap();
    assert!(hermiticity_defect(big.entries()) <= 1e-12);
    let num = number_operator(h.len()).unwrap();
    let c = big.entries() * num.entries() - num.entries() * big.entries();
    assert!(max_abs(&c) <= 1e-12);
}

#[test]
fn gibbs_state_properties() {
    let h = disordered(1, 2.0, 1.0, 4);
    let big = second_quantize(&h).unwrap();
    let rho = gibbs_state(&big, 1.3).unwrap();
    let tr: Complex64 = rho.entries().trace();
    assert!((tr.re - 1.0).abs() < 1e-12 && tr.im.abs() < 1e-14);
    let d = fermi_symbol(&h, 1.3).unwrap();
    assert!(max_abs_diff(&rho.two_point(), d.entries()) <= 1e-10);
    let hot = gibbs_state(&big, 1e-12).unwrap();
    let mixed = CMatrix::identity(32, 32) * Complex64::new(1.0 / 32.0, 0.0);
    assert!(max_abs_diff(hot.entries(), &mixed) < 1e-12);
    assert!(gibbs_state(&big, 0.0).is_err());
}

#[test]
fn gibbs_two_point_equals_fermi_symbol_randomly() {
    let mut r = rng(17);
    use rand::Rng;
    for _ in 0..6 {
        let beta = r.random_range(0.2..3.0);
        let lambda = r.random_range(0.0..2.0);
        let seed = r.random_range(0..1000);
        let dim = r.random_range(1..=2);
        let h = disordered(dim, 1.0, lambda, seed);
        let rho = gibbs_state(&second_quantize(&h).unwrap(), beta).unwrap();
        let d = fermi_symbol(&h, beta).unwrap();
        assert!(max_abs_diff(&rho.two_point(), d.entries()) <= 1e-10);
    }
}

#[test]
fn quasi_free_density_reproduces_its_symbol() {
    let mut r = rng(2);
    let d = random_symbol(4, 0.05, &mut r);
    let rho = quasi_free_density(&d).unwrap();
    assert!(max_abs_diff(&rho.two_point(), &d) < 1e-12);
}

#[test]
fn gibbs_state_is_stationary_without_field() {
    let h = disordered(1, 2.0, 1.0, 5);
    let spec = VectorPotentialSpec::bump(1, 0.0, 2.0, 0.0, 2.0);
    let rho = gibbs_state(&second_quantize(&h).unwrap(), 1.0).unwrap();
    let v = evolve_many_body(&h, &spec, 0.0, 2.0, 0.01).unwrap();
    assert!(max_abs_diff(rho.evolve(&v).entries(), rho.entries()) < 1e-12);
}

#[test]
fn many_body_evolution_matches_symbol_evolution() {
    // boxes have odd side lengths; five sites is the nearest to four
    let b = LatticeBox::new(1, 2.0).unwrap();
    let h = hamiltonian(&b, &sample_disorder(&b, 6), 1.0).unwrap();
    let spec = VectorPotentialSpec::bump(1, 0.6, 1.0, 0.0, 2.0);
    let beta = 1.0;
    let rho = gibbs_state(&second_quantize(&h).unwrap(), beta).unwrap();
    let v = evolve_many_body(&h, &spec, 0.0, 2.0, 0.005).unwrap();
    let rho_t = rho.evolve(&v);
    let mut before = rho.eigenvalues();
    let mut after = rho_t.eigenvalues();
    before.sort_by(f64::total_cmp);
    after.sort_by(f64::total_cmp);
    for (a, b) in before.iter().zip(&after) {
        assert!((a - b).abs() < 1e-10);
    }
    let dt = evolved_symbol(&h, &spec, beta, 2.0, 0.005).unwrap();
    assert!(max_abs_diff(&rho_t.two_point(), dt.entries()) <= 1e-9);
}

#[test]
fn relative_entropy_cases() {
    let h = disordered(1, 1.0, 1.0, 7);
    let big = second_quantize(&h).unwrap();
    let g = gibbs_state(&big, 1.0).unwrap();
    assert!(relative_entropy_fock(&g, &g).abs() < 1e-12);

    let dim = 8;
    let pure = |k: usize| {
        let mut m = CMatrix::zeros(dim, dim);
        m[(k, k)] = Complex64::new(1.0, 0.0);
        DensityMatrix::new(3, m).unwrap()
    };
    assert_eq!(relative_entropy_fock(&pure(0), &pure(1)), f64::INFINITY);
    assert!(relative_entropy_fock(&pure(2), &pure(2)).abs() < 1e-14);

    // beta * energy increment for a unitarily rotated Gibbs state
    let mut r = rng(8);
    for &beta in &[0.5, 2.0] {
        let g = gibbs_state(&big, beta).unwrap();
        let u = random_unitary(dim, &mut r);
        let rho = DensityMatrix::new(3, conjugate(&u, g.entries())).unwrap();
        let de = rho.expectation(&big).re - g.expectation(&big).re;
        let s = relative_entropy_fock(&rho, &g);
        assert!((s - beta * de).abs() <= 1e-9, "beta {beta}");
    }
}

#[test]
fn quasifree_relative_entropy_equals_fock() {
    let mut r = rng(9);
    for n in [2usize, 4, 6] {
        let d1 = random_symbol(n, 0.02, &mut r);
        let d2 = random_symbol(n, 0.02, &mut r);
        let s_q = quasifree_relative_entropy(&d1, &d2).unwrap();
        let s_f = relative_entropy_fock(
            &quasi_free_density(&d1).unwrap(),
            &quasi_free_density(&d2).unwrap(),
        );
        assert!((s_q - s_f).abs() <= 1e-8, "n = {n}: {s_q} vs {s_f}");
    }
}

#[test]
fn restricted_fock_entropy_is_monotone() {
    let b = LatticeBox::new(1, 3.0).unwrap();
    let h = hamiltonian(&b, &sample_disorder(&b, 3), 1.0).unwrap();
    let spec = VectorPotentialSpec::bump(1, 0.5, 2.0, 0.0, 2.0);
    let d = fermi_symbol(&h, 1.0).unwrap();
    let dt = evolved_symbol(&h, &spec, 1.0, 2.0, 0.01).unwrap();
    let mut prev = 0.0;
    for idx in [vec![2, 3], vec![1, 2, 3, 4], vec![0, 1, 2, 3, 4, 5]] {
        let a = quasi_free_density(&restrict_matrix(dt.entries(), &idx)).unwrap();
        let b = quasi_free_density(&restrict_matrix(d.entries(), &idx)).unwrap();
        let s = relative_entropy_fock(&a, &b);
        assert!(s >= prev - 1e-10, "{} sites", idx.len());
        prev = s;
    }
    assert!(prev > 0.0);
}

#[test]
fn multicommutator_cases() {
    let cars = car_matrices(3).unwrap();
    let a = cars[0].adjoint().mul(&cars[1]);
    let b = cars[2].adjoint().mul(&cars[0]);
    let c2 = multicommutator(&[a.clone(), b.clone()]).unwrap();
    let expect = a.entries() * b.entries() - b.entries() * a.entries();
    assert!(max_abs_diff(c2.entries(), &expect) == 0.0);
    let id = FockOperator::identity(3).unwrap();
    let z = multicommutator(&[id, a.clone(), b.clone()]).unwrap();
    assert_eq!(max_abs(z.entries()), 0.0);
    let small = car_matrices(2).unwrap();
    assert!(multicommutator(&[a.clone(), small[0].clone()]).is_err());
    assert!(multicommutator(&[a]).is_err());
}

#[test]
fn many_body_trajectory_matches_quasifree() {
    let b = LatticeBox::new(1, 2.0).unwrap();
    let h = hamiltonian(&b, &sample_disorder(&b, 1), 0.5).unwrap();
    let spec = VectorPotentialSpec::bump(1, 0.3, 2.0, 0.0, 2.0);
    let mut opts = TrajectoryOptions::new(&spec, 3.0);
    opts.record_every = 25;
    for &beta in &[0.5, 2.0] {
        let q = simulate_trajectory(&h, &spec, beta, &opts).unwrap();
        let f = simulate_many_body_trajectory(&h, &spec, beta, &opts).unwrap();
        assert_eq!(q.points.len(), f.points.len());
        for (a, b) in q.points.iter().zip(&f.points) {
            assert_eq!(a.t, b.t);
            assert!((a.s - b.s).abs() <= 1e-9);
            assert!((a.p - b.p).abs() <= 1e-9);
            assert!((a.work - b.work).abs() <= 1e-9);
            assert!((a.q_rel - b.q_rel).abs() <= 1e-9);
        }
        assert!(f.max_first_law_residual() <= 1e-9 * (1.0 + f.last().s.abs()));
        assert!(f.max_balance_residual() <= 1e-6);
    }
}

#[test]
fn entropy_is_invariant_along_the_evolution() {
    let b = LatticeBox::new(1, 2.0).unwrap();
    let h = hamiltonian(&b, &sample_disorder(&b, 2), 1.0).unwrap();
    let spec = VectorPotentialSpec::bump(1, 0.5, 2.0, 0.0, 2.0);
    let g = gibbs_state(&second_quantize(&h).unwrap(), 1.0).unwrap();
    for &t in &[0.5, 1.0, 2.0] {
        let v = evolve_many_body(&h, &spec, 0.0, t, 0.01).unwrap();
        let rho = g.evolve(&v);
        assert!((rho.von_neumann_entropy() - g.von_neumann_entropy()).abs() < 1e-10);
    }
}

#[test]
fn density_matrix_validation() {
    let bad = CMatrix::identity(4, 4);
    assert!(DensityMatrix::new(2, bad).is_err());
    assert!(FockOperator::new(2, CMatrix::identity(3, 3)).is_err());
}
