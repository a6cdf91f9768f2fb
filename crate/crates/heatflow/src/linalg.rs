// SPDX-License-Identifier: Apache-2.0

//! Dense complex linear algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

pub const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
pub const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };
pub const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Eigendecomposition `M = V diag(values) V†` of a Hermitian matrix.
#[derive(Clone, Debug)]
pub struct Eigh {
    pub values: Vec<f64>,
    pub vectors: CMatrix,
}

impl Eigh {
    /// Only the lower triangle of `m` is read.
    pub fn new(m: &CMatrix) -> Self {
        let e = m.clone().symmetric_eigen();
        Eigh {
            values: e.eigenvalues.iter().copied().collect(),
            vectors: e.eigenvectors,
        }
    }

    /// `f(M) = V diag(f(values)) V†`.
    pub fn apply(&self, f: impl Fn(f64) -> Complex64) -> CMatrix {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for (j, &v) in self.values.iter().enumerate() {
            let fv = f(v);
            for i in 0..n {
                scaled[(i, j)] *= fv;
            }
        }
        matmul(&scaled, &self.vectors.adjoint())
    }

    /// `exp(-i t M)`.
    pub fn exp_i(&self, t: f64) -> CMatrix {
        self.apply(|e| Complex64::from_polar(1.0, -t * e))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

pub fn hermiticity_defect(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..=i {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Defect `max |U†U - 1|`.
pub fn unitarity_defect(u: &CMatrix) -> f64 {
    let p = u.adjoint() * u;
    max_abs_diff(&p, &CMatrix::identity(u.nrows(), u.ncols()))
}

/// One Newton-Schulz polar step `U (3 - U†U) / 2`, pulling a nearly unitary
/// product back onto the unitary group. Quadratically convergent.
pub fn reunitarize(u: &CMatrix) -> CMatrix {
    let n = u.ncols();
    let mut g = matmul(&u.adjoint(), u);
    g.neg_mut();
    for i in 0..n {
        g[(i, i)] += Complex64::new(3.0, 0.0);
    }
    matmul(u, &g) * Complex64::new(0.5, 0.0)
}

/// `Tr(A B)` without forming the product.
pub fn trace_product(a: &CMatrix, b: &CMatrix) -> Complex64 {
    let n = a.nrows();
    let mut acc = ZERO;
    for i in 0..n {
        for k in 0..a.ncols() {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

pub fn commutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    matmul(a, b) - matmul(b, a)
}

/// `U M U†`.
pub fn conjugate(u: &CMatrix, m: &CMatrix) -> CMatrix {
    matmul(&matmul(u, m), &u.adjoint())
}

/// Complex product through four real products, which take the blocked f64 kernel.
pub fn matmul(a: &CMatrix, b: &CMatrix) -> CMatrix {
    if a.nrows() * b.ncols() < 256 {
        return a * b;
    }
    let (ar, ai) = (a.map(|z| z.re), a.map(|z| z.im));
    let (br, bi) = (b.map(|z| z.re), b.map(|z| z.im));
    let re = &ar * &br - &ai * &bi;
    let im = &ar * &bi + &ai * &br;
    re.zip_map(&im, Complex64::new)
}

/// Copy the lower triangle onto the upper one so the result is exactly Hermitian.
pub fn hermitize(m: &mut CMatrix) {
    let n = m.nrows();
    for i in 0..n {
        m[(i, i)] = Complex64::new(m[(i, i)].re, 0.0);
        for j in 0..i {
            m[(j, i)] = m[(i, j)].conj();
        }
    }
}

pub fn real_matrix(m: &DMatrix<f64>) -> CMatrix {
    m.map(|x| Complex64::new(x, 0.0))
}
