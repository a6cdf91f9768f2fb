// SPDX-License-Identifier: Apache-2.0

//! Boxes, disorder, Laplacians and the Peierls-coupled hopping.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, HeatError, Result};
use crate::linalg::{hermiticity_defect, CMatrix};

/// Tolerance on `max |M - M†|` accepted by [`HermitianOperator::new`].
pub const HERMITIAN_TOL: f64 = 1e-12;

/// The cube `{x in Z^d : |x_i| <= floor(L)}` with lexicographic site order.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeBox {
    dim: usize,
    half_side: f64,
    radius: i64,
    side: usize,
    len: usize,
}

impl LatticeBox {
    pub fn new(dim: usize, half_side: f64) -> Result<Self> {
        if dim == 0 {
            return invalid("dimension must be positive");
        }
        if !(half_side > 0.0) || !half_side.is_finite() {
            return invalid(format!("half side must be positive, got {half_side}"));
        }
        let radius = half_side.floor() as i64;
        let side = (2 * radius + 1) as usize;
        let len = side
            .checked_pow(dim as u32)
            .ok_or_else(|| HeatError::ResourceLimit("box too large".into()))?;
        Ok(LatticeBox {
            dim,
            half_side,
            radius,
            side,
            len,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn half_side(&self) -> f64 {
        self.half_side
    }

    /// The integer part `[L]`.
    pub fn radius(&self) -> i64 {
        self.radius
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn site(&self, mut index: usize) -> Vec<i64> {
        let mut x = vec![0i64; self.dim];
        for k in (0..self.dim).rev() {
            x[k] = (index % self.side) as i64 - self.radius;
            index /= self.side;
        }
        x
    }

    pub fn index(&self, x: &[i64]) -> Option<usize> {
        if x.len() != self.dim {
            return None;
        }
        let mut idx = 0usize;
        for &c in x {
            if c.abs() > self.radius {
                return None;
            }
            idx = idx * self.side + (c + self.radius) as usize;
        }
        Some(idx)
    }

    pub fn sites(&self) -> impl Iterator<Item = Vec<i64>> + '_ {
        (0..self.len).map(move |i| self.site(i))
    }

    pub fn contains(&self, other: &LatticeBox) -> bool {
        other.dim == self.dim && other.radius <= self.radius
    }

    /// Neighbours `j > i` of site `i` inside the box, with the axis of the bond.
    pub fn forward_bonds(&self) -> Vec<(usize, usize, usize)> {
        let mut bonds = Vec::new();
        for i in 0..self.len {
            let x = self.site(i);
            for axis in 0..self.dim {
                let mut y = x.clone();
                y[axis] += 1;
                if let Some(j) = self.index(&y) {
                    bonds.push((i, j, axis));
                }
            }
        }
        bonds
    }
}

pub fn build_box(dim: usize, half_side: f64) -> Result<LatticeBox> {
    LatticeBox::new(dim, half_side)
}

/// Static random potential, one value in `[-1, 1]` per site.
#[derive(Clone, Debug, PartialEq)]
pub struct DisorderField {
    lattice: LatticeBox,
    values: Vec<f64>,
    seed: u64,
}

impl DisorderField {
    /// A site-independent potential `omega(x) = value`.
    pub fn constant(lattice: &LatticeBox, value: f64) -> Result<Self> {
        if !(-1.0..=1.0).contains(&value) {
            return invalid(format!("potential value {value} outside [-1, 1]"));
        }
        Ok(DisorderField {
            lattice: lattice.clone(),
            values: vec![value; lattice.len()],
            seed: 0,
        })
    }

    pub fn from_values(lattice: &LatticeBox, values: Vec<f64>) -> Result<Self> {
        if values.len() != lattice.len() {
            return invalid("disorder length does not match the box");
        }
        if values.iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return invalid("disorder values must lie in [-1, 1]");
        }
        Ok(DisorderField {
            lattice: lattice.clone(),
            values,
            seed: 0,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn lattice(&self) -> &LatticeBox {
        &self.lattice
    }
}

fn zigzag(c: i64) -> u64 {
    ((c << 1) ^ (c >> 63)) as u64
}

/// Stream id of a site. Injective for `d <= 3` and `|x_i| < 2^20`.
fn site_stream(x: &[i64]) -> u64 {
    let packable = x.len() <= 3 && x.iter().all(|c| c.abs() < (1 << 20));
    if packable {
        x.iter()
            .enumerate()
            .fold(0u64, |acc, (k, &c)| acc | (zigzag(c) << (21 * k)))
    } else {
        x.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &c| {
            (h ^ zigzag(c)).wrapping_mul(0x0100_0000_01b3)
        })
    }
}

/// I.i.d. uniform values on `[-1, 1]`. Each site draws from its own ChaCha
/// stream keyed by its coordinates, so a site keeps its value when the box grows.
pub fn sample_disorder(lattice: &LatticeBox, seed: u64) -> DisorderField {
    let values = lattice
        .sites()
        .map(|x| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(site_stream(&x));
            rng.random_range(-1.0..=1.0)
        })
        .collect();
    DisorderField {
        lattice: lattice.clone(),
        values,
        seed,
    }
}

/// Dense Hermitian matrix indexed by the sites of a box.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianOperator {
    lattice: LatticeBox,
    entries: CMatrix,
}

impl HermitianOperator {
    pub fn new(lattice: &LatticeBox, entries: CMatrix) -> Result<Self> {
        let n = lattice.len();
        if entries.nrows() != n || entries.ncols() != n {
            return invalid(format!(
                "matrix is {}x{}, box has {n} sites",
                entries.nrows(),
                entries.ncols()
            ));
        }
        let defect = hermiticity_defect(&entries);
        if defect > HERMITIAN_TOL {
            return invalid(format!("matrix is not Hermitian (defect {defect:e})"));
        }
        Ok(HermitianOperator {
            lattice: lattice.clone(),
            entries,
        })
    }

    pub fn zeros(lattice: &LatticeBox) -> Self {
        let n = lattice.len();
        HermitianOperator {
            lattice: lattice.clone(),
            entries: CMatrix::zeros(n, n),
        }
    }

    pub fn lattice(&self) -> &LatticeBox {
        &self.lattice
    }

    pub fn entries(&self) -> &CMatrix {
        &self.entries
    }

    pub fn into_entries(self) -> CMatrix {
        self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.nrows() == 0
    }

    pub fn add(&self, other: &HermitianOperator) -> Result<HermitianOperator> {
        if self.lattice != other.lattice {
            return invalid("operators live on different boxes");
        }
        Ok(HermitianOperator {
            lattice: self.lattice.clone(),
            entries: &self.entries + &other.entries,
        })
    }
}

/// Open-boundary Laplacian: `2d` on the diagonal, `-1` between neighbours.
pub fn laplacian(lattice: &LatticeBox) -> HermitianOperator {
    let n = lattice.len();
    let mut m = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = 2.0 * lattice.dim() as f64;
    }
    for (i, j, _) in lattice.forward_bonds() {
        m[(i, j)] = -1.0;
        m[(j, i)] = -1.0;
    }
    HermitianOperator {
        lattice: lattice.clone(),
        entries: crate::linalg::real_matrix(&m),
    }
}

/// `h = Laplacian + lambda * diag(omega)`.
pub fn hamiltonian(
    lattice: &LatticeBox,
    omega: &DisorderField,
    lambda: f64,
) -> Result<HermitianOperator> {
    if !(lambda >= 0.0) {
        return invalid(format!("disorder strength must be nonnegative, got {lambda}"));
    }
    if omega.lattice() != lattice {
        return invalid("disorder field lives on a different box");
    }
    let mut h = laplacian(lattice);
    for (i, v) in omega.values().iter().enumerate() {
        h.entries[(i, i)] += Complex64::new(lambda * v, 0.0);
    }
    Ok(h)
}

/// A scalar profile on the reference interval `[-1, 1]`, zero outside.
pub trait ProfileFn: Send + Sync + fmt::Debug {
    fn value(&self, s: f64) -> f64;
    fn derivative(&self, s: f64) -> f64;
}

/// Built-in smooth profiles plus a user hook.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Profile {
    /// `exp(-1/(1-s^2))`, smooth with compact support.
    #[default]
    Bump,
    /// `cos^2(pi s / 2)`, continuously differentiable.
    CosSquared,
    #[serde(skip)]
    Custom(Arc<dyn ProfileFn>),
}

impl Profile {
    pub fn value(&self, s: f64) -> f64 {
        if !(s > -1.0 && s < 1.0) {
            return 0.0;
        }
        match self {
            Profile::Bump => (-1.0 / (1.0 - s * s)).exp(),
            Profile::CosSquared => (0.5 * PI * s).cos().powi(2),
            Profile::Custom(p) => p.value(s),
        }
    }

    pub fn derivative(&self, s: f64) -> f64 {
        if !(s > -1.0 && s < 1.0) {
            return 0.0;
        }
        match self {
            Profile::Bump => {
                let q = 1.0 - s * s;
                (-1.0 / q).exp() * (-2.0 * s / (q * q))
            }
            Profile::CosSquared => -0.5 * PI * (PI * s).sin(),
            Profile::Custom(p) => p.derivative(s),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Profile::Bump => "bump",
            Profile::CosSquared => "cos_squared",
            Profile::Custom(_) => "custom",
        }
    }
}

fn default_nodes() -> usize {
    16
}

/// `A(t, x) = eta * g(t) * f(x / l) * e` with `g` supported on `[t0, t1]` and
/// `f` a product of one-dimensional profiles supported on `[-1, 1]^d`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VectorPotentialSpec {
    #[serde(default)]
    pub time_profile: Profile,
    #[serde(default)]
    pub space_profile: Profile,
    pub direction: Vec<f64>,
    pub eta: f64,
    pub scale: f64,
    pub t0: f64,
    pub t1: f64,
    #[serde(default = "default_nodes")]
    pub quadrature_nodes: usize,
}

impl VectorPotentialSpec {
    /// Default bump profiles along the first axis.
    pub fn bump(dim: usize, eta: f64, scale: f64, t0: f64, t1: f64) -> Self {
        let mut direction = vec![0.0; dim];
        if dim > 0 {
            direction[0] = 1.0;
        }
        VectorPotentialSpec {
            time_profile: Profile::Bump,
            space_profile: Profile::Bump,
            direction,
            eta,
            scale,
            t0,
            t1,
            quadrature_nodes: default_nodes(),
        }
    }

    pub fn with_eta(&self, eta: f64) -> Self {
        VectorPotentialSpec {
            eta,
            ..self.clone()
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.t0 < self.t1) {
            errs.push(format!("t0 = {} must be below t1 = {}", self.t0, self.t1));
        }
        if !(self.scale > 0.0) {
            errs.push(format!("scale l = {} must be positive", self.scale));
        }
        if self.quadrature_nodes == 0 {
            errs.push("quadrature_nodes must be positive".into());
        }
        if self.direction.len() != dim {
            errs.push(format!(
                "direction has {} components, dimension is {dim}",
                self.direction.len()
            ));
        } else {
            let norm: f64 = self.direction.iter().map(|c| c * c).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-12 {
                errs.push(format!("direction must be a unit vector (norm {norm})"));
            }
        }
        if !self.eta.is_finite() {
            errs.push("eta must be finite".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(HeatError::Config(errs))
        }
    }

    fn reduced_time(&self, t: f64) -> f64 {
        2.0 * (t - self.t0) / (self.t1 - self.t0) - 1.0
    }

    pub fn g(&self, t: f64) -> f64 {
        self.time_profile.value(self.reduced_time(t))
    }

    pub fn g_prime(&self, t: f64) -> f64 {
        self.time_profile.derivative(self.reduced_time(t)) * 2.0 / (self.t1 - self.t0)
    }

    /// Spatial profile `f(x / l)` at a real point.
    pub fn f_scaled(&self, x: &[f64]) -> f64 {
        x.iter()
            .map(|c| self.space_profile.value(c / self.scale))
            .product()
    }

    /// The vector `A(t, x)`.
    pub fn potential(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let amp = self.eta * self.g(t) * self.f_scaled(x);
        self.direction.iter().map(|e| amp * e).collect()
    }

    /// True when `A(t, .)` vanishes identically.
    pub fn is_off(&self, t: f64) -> bool {
        self.eta == 0.0 || t <= self.t0 || t >= self.t1
    }
}

/// Electric field `-dA/dt` at `(t, x)`.
pub fn electric_field(spec: &VectorPotentialSpec, t: f64, x: &[f64]) -> Vec<f64> {
    let amp = -spec.eta * spec.g_prime(t) * spec.f_scaled(x);
    spec.direction.iter().map(|e| amp * e).collect()
}

/// Gauss-Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Chebyshev guess, then Newton on P_n.
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        nodes[i] = 0.5 * (1.0 - z);
        nodes[n - 1 - i] = 0.5 * (1.0 + z);
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    (nodes, weights)
}

/// Time-independent part of the Peierls phases of a box: for each ordered
/// neighbour pair `(x, y)`, `J_xy = e.(y-x) * int_0^1 f((a y + (1-a) x)/l) da`,
/// so that the hopping phase at time `t` is `exp(-i eta g(t) J_xy)`.
#[derive(Clone, Debug)]
pub struct PeierlsCoupling {
    lattice: LatticeBox,
    spec: VectorPotentialSpec,
    /// `(i, j, J_ij)` for every ordered neighbour pair with nonzero `J`.
    links: Vec<(usize, usize, f64)>,
}

impl PeierlsCoupling {
    pub fn new(lattice: &LatticeBox, spec: &VectorPotentialSpec) -> Result<Self> {
        spec.validate(lattice.dim())?;
        let (nodes, weights) = gauss_legendre(spec.quadrature_nodes);
        let mut links = Vec::new();
        for (i, j, axis) in lattice.forward_bonds() {
            let x = lattice.site(i);
            let y = lattice.site(j);
            for &(a, b, sign) in &[(&x, &y, 1.0), (&y, &x, -1.0)] {
                let mut integral = 0.0;
                for (&alpha, &w) in nodes.iter().zip(&weights) {
                    let p: Vec<f64> = a
                        .iter()
                        .zip(b.iter())
                        .map(|(&xa, &xb)| alpha * xb as f64 + (1.0 - alpha) * xa as f64)
                        .collect();
                    integral += w * spec.f_scaled(&p);
                }
                let jxy = sign * spec.direction[axis] * integral;
                if jxy != 0.0 {
                    let (ia, ib) = if sign > 0.0 { (i, j) } else { (j, i) };
                    links.push((ia, ib, jxy));
                }
            }
        }
        Ok(PeierlsCoupling {
            lattice: lattice.clone(),
            spec: spec.clone(),
            links,
        })
    }

    pub fn lattice(&self) -> &LatticeBox {
        &self.lattice
    }

    pub fn spec(&self) -> &VectorPotentialSpec {
        &self.spec
    }

    /// Sites touched by a nonzero link.
    pub fn support(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.links.iter().flat_map(|&(i, j, _)| [i, j]).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    pub fn links(&self) -> &[(usize, usize, f64)] {
        &self.links
    }

    /// `w_t = Laplacian^(A) - Laplacian`, entries `1 - exp(-i eta g J)`.
    pub fn field_energy(&self, t: f64) -> CMatrix {
        let n = self.lattice.len();
        let mut w = CMatrix::zeros(n, n);
        if self.spec.is_off(t) {
            return w;
        }
        let amp = self.spec.eta * self.spec.g(t);
        for &(i, j, jxy) in &self.links {
            w[(i, j)] = Complex64::new(1.0, 0.0) - Complex64::from_polar(1.0, -amp * jxy);
        }
        w
    }

    /// `d/dt w_t`, entries `i eta g'(t) J exp(-i eta g J)`.
    pub fn field_energy_derivative(&self, t: f64) -> CMatrix {
        let n = self.lattice.len();
        let mut dw = CMatrix::zeros(n, n);
        if self.spec.is_off(t) {
            return dw;
        }
        let amp = self.spec.eta * self.spec.g(t);
        let damp = self.spec.eta * self.spec.g_prime(t);
        for &(i, j, jxy) in &self.links {
            dw[(i, j)] =
                Complex64::new(0.0, damp * jxy) * Complex64::from_polar(1.0, -amp * jxy);
        }
        dw
    }

    /// `h + w_t` for a static `h` on the same box.
    pub fn driven(&self, h: &CMatrix, t: f64) -> CMatrix {
        let mut m = h.clone();
        if self.spec.is_off(t) {
            return m;
        }
        let amp = self.spec.eta * self.spec.g(t);
        for &(i, j, jxy) in &self.links {
            m[(i, j)] += Complex64::new(1.0, 0.0) - Complex64::from_polar(1.0, -amp * jxy);
        }
        m
    }
}

/// Laplacian with every hopping multiplied by its Peierls phase at time `t`.
pub fn peierls_laplacian(
    lattice: &LatticeBox,
    spec: &VectorPotentialSpec,
    t: f64,
) -> Result<HermitianOperator> {
    let coupling = PeierlsCoupling::new(lattice, spec)?;
    let lap = laplacian(lattice);
    HermitianOperator::new(lattice, coupling.driven(lap.entries(), t))
}

pub fn field_energy_operator(
    lattice: &LatticeBox,
    spec: &VectorPotentialSpec,
    t: f64,
) -> Result<HermitianOperator> {
    let coupling = PeierlsCoupling::new(lattice, spec)?;
    HermitianOperator::new(lattice, coupling.field_energy(t))
}

/// Largest `|x|_inf` of a site whose row of `w` can be nonzero.
pub fn support_radius(spec: &VectorPotentialSpec) -> f64 {
    spec.scale + 1.0
}
