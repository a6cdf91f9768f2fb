// SPDX-License-Identifier: Apache-2.0
#![allow(dead_code)]

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use heatflow::lattice::{hamiltonian, sample_disorder, HermitianOperator, LatticeBox};
use heatflow::linalg::{CMatrix, CVector, Eigh};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_hermitian(n: usize, r: &mut ChaCha8Rng) -> CMatrix {
    let a = CMatrix::from_fn(n, n, |_, _| {
        Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0))
    });
    (&a + a.adjoint()) * Complex64::new(0.5, 0.0)
}

pub fn random_unitary(n: usize, r: &mut ChaCha8Rng) -> CMatrix {
    Eigh::new(&random_hermitian(n, r)).exp_i(1.7)
}

/// Symbol with spectrum inside `[lo, 1 - lo]`.
pub fn random_symbol(n: usize, lo: f64, r: &mut ChaCha8Rng) -> CMatrix {
    let u = random_unitary(n, r);
    let diag = CMatrix::from_fn(n, n, |i, j| {
        if i == j {
            Complex64::new(r.random_range(lo..1.0 - lo), 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    &u * diag * u.adjoint()
}

pub fn random_vector(n: usize, r: &mut ChaCha8Rng) -> CVector {
    CVector::from_fn(n, |_, _| {
        Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0))
    })
}

pub fn disordered(dim: usize, half: f64, lambda: f64, seed: u64) -> HermitianOperator {
    let b = LatticeBox::new(dim, half).unwrap();
    hamiltonian(&b, &sample_disorder(&b, seed), lambda).unwrap()
}
