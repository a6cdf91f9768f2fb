// SPDX-License-Identifier: Apache-2.0

//! One-particle propagators, Dyson-Phillips truncations and the Fermi symbol.

use std::collections::BTreeMap;
use std::io::Write;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::lattice::{HermitianOperator, LatticeBox, PeierlsCoupling, VectorPotentialSpec};
use crate::linalg::{hermiticity_defect, matmul, reunitarize, unitarity_defect, CMatrix, Eigh, I};

/// Unitary on the one-particle space of a box.
#[derive(Clone, Debug)]
pub struct UnitaryMatrix {
    lattice: LatticeBox,
    entries: CMatrix,
}

impl UnitaryMatrix {
    pub fn from_matrix(lattice: &LatticeBox, entries: CMatrix) -> Result<Self> {
        if entries.nrows() != lattice.len() || entries.ncols() != lattice.len() {
            return invalid("unitary has the wrong dimension");
        }
        Ok(UnitaryMatrix {
            lattice: lattice.clone(),
            entries,
        })
    }

    pub fn identity(lattice: &LatticeBox) -> Self {
        UnitaryMatrix {
            lattice: lattice.clone(),
            entries: CMatrix::identity(lattice.len(), lattice.len()),
        }
    }

    pub fn entries(&self) -> &CMatrix {
        &self.entries
    }

    pub fn lattice(&self) -> &LatticeBox {
        &self.lattice
    }

    pub fn defect(&self) -> f64 {
        unitarity_defect(&self.entries)
    }

    pub fn compose(&self, other: &UnitaryMatrix) -> UnitaryMatrix {
        UnitaryMatrix {
            lattice: self.lattice.clone(),
            entries: &self.entries * &other.entries,
        }
    }
}

/// Correlation matrix `D` of a quasi-free state, `rho(a*_x a_y) = D[y, x]`.
#[derive(Clone, Debug)]
pub struct SymbolMatrix {
    lattice: LatticeBox,
    entries: CMatrix,
}

impl SymbolMatrix {
    /// Checks Hermiticity and that the spectrum lies in `[0, 1]` within `1e-12`.
    pub fn new(lattice: &LatticeBox, entries: CMatrix) -> Result<Self> {
        let n = lattice.len();
        if entries.nrows() != n || entries.ncols() != n {
            return invalid("symbol has the wrong dimension");
        }
        if hermiticity_defect(&entries) > 1e-10 {
            return invalid("symbol is not Hermitian");
        }
        let e = Eigh::new(&entries);
        if e.values.iter().any(|&v| !(-1e-12..=1.0 + 1e-12).contains(&v)) {
            return invalid("symbol spectrum leaves [0, 1]");
        }
        Ok(SymbolMatrix {
            lattice: lattice.clone(),
            entries,
        })
    }

    pub(crate) fn from_parts(lattice: &LatticeBox, entries: CMatrix) -> Self {
        SymbolMatrix {
            lattice: lattice.clone(),
            entries,
        }
    }

    pub fn entries(&self) -> &CMatrix {
        &self.entries
    }

    pub fn lattice(&self) -> &LatticeBox {
        &self.lattice
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut v = Eigh::new(&self.entries).values;
        v.sort_by(f64::total_cmp);
        v
    }
}

/// Cached eigendecomposition of a static one-particle Hamiltonian.
#[derive(Clone, Debug)]
pub struct FreeEvolution {
    eig: Eigh,
}

impl FreeEvolution {
    pub fn new(h: &HermitianOperator) -> Self {
        FreeEvolution {
            eig: Eigh::new(h.entries()),
        }
    }

    /// `exp(-i t h)`.
    pub fn propagator(&self, t: f64) -> CMatrix {
        self.eig.exp_i(t)
    }

    pub fn eigen(&self) -> &Eigh {
        &self.eig
    }
}

/// `exp(-i t h)` via the Hermitian eigendecomposition.
pub fn free_propagator(h: &HermitianOperator, t: f64) -> Result<UnitaryMatrix> {
    if hermiticity_defect(h.entries()) > crate::lattice::HERMITIAN_TOL {
        return invalid("free propagator needs a Hermitian generator");
    }
    UnitaryMatrix::from_matrix(h.lattice(), Eigh::new(h.entries()).exp_i(t))
}

/// Uniform subdivision of `[s, t]` into steps no wider than `step`.
pub fn subdivide(s: f64, t: f64, step: f64) -> Result<(usize, f64)> {
    if !(step > 0.0) {
        return invalid(format!("step must be positive, got {step}"));
    }
    if t < s {
        return invalid(format!("final time {t} precedes initial time {s}"));
    }
    if t == s {
        return Ok((0, 0.0));
    }
    let m = ((t - s) / step - 1e-9).ceil().max(1.0) as usize;
    Ok((m, (t - s) / m as f64))
}

/// Exponential-midpoint stepper for `h + w_t`. Steps whose midpoint lies
/// outside the field window reuse the free step unitary.
#[derive(Clone, Debug)]
pub struct DrivenStepper {
    h: CMatrix,
    coupling: PeierlsCoupling,
    free: Eigh,
    cached: Option<(f64, CMatrix)>,
}

impl DrivenStepper {
    pub fn new(h: &HermitianOperator, spec: &VectorPotentialSpec) -> Result<Self> {
        Ok(DrivenStepper {
            h: h.entries().clone(),
            coupling: PeierlsCoupling::new(h.lattice(), spec)?,
            free: Eigh::new(h.entries()),
            cached: None,
        })
    }

    pub fn coupling(&self) -> &PeierlsCoupling {
        &self.coupling
    }

    pub fn static_hamiltonian(&self) -> &CMatrix {
        &self.h
    }

    pub fn free(&self) -> &Eigh {
        &self.free
    }

    /// `exp(-i dt H(t_mid))`.
    pub fn step(&mut self, t_mid: f64, dt: f64) -> CMatrix {
        if self.coupling.spec().is_off(t_mid) {
            if let Some((cdt, u)) = &self.cached {
                if *cdt == dt {
                    return u.clone();
                }
            }
            let u = self.free.exp_i(dt);
            self.cached = Some((dt, u.clone()));
            return u;
        }
        Eigh::new(&self.coupling.driven(&self.h, t_mid)).exp_i(dt)
    }
}

/// `U_{t,s}` for `dU/dt = -i (h + w_t) U` by the exponential-midpoint rule.
pub fn driven_propagator(
    h: &HermitianOperator,
    spec: &VectorPotentialSpec,
    s: f64,
    t: f64,
    step: f64,
) -> Result<UnitaryMatrix> {
    let (m, dt) = subdivide(s, t, step)?;
    let mut stepper = DrivenStepper::new(h, spec)?;
    let mut u = CMatrix::identity(h.len(), h.len());
    for k in 0..m {
        let mid = s + (k as f64 + 0.5) * dt;
        u = reunitarize(&matmul(&stepper.step(mid, dt), &u));
    }
    UnitaryMatrix::from_matrix(h.lattice(), u)
}

/// Terms `k = 0..=order` of the Dyson-Phillips expansion of `U_{t,s}`, with the
/// simplex integrals done by nested composite trapezoid on `intervals` equal
/// subintervals of `[s, t]`.
pub fn dyson_phillips_terms(
    h: &HermitianOperator,
    spec: &VectorPotentialSpec,
    s: f64,
    t: f64,
    order: usize,
    intervals: usize,
) -> Result<Vec<CMatrix>> {
    if t < s {
        return invalid("Dyson-Phillips needs t >= s");
    }
    if intervals == 0 && order > 0 {
        return invalid("Dyson-Phillips grid needs at least one interval");
    }
    let coupling = PeierlsCoupling::new(h.lattice(), spec)?;
    let eig = Eigh::new(h.entries());
    let m = intervals.max(1);
    let dq = (t - s) / m as f64;
    // U_j = exp(-i j dq h), the free propagator from s to q_j.
    let free: Vec<CMatrix> = (0..=m).map(|j| eig.exp_i(j as f64 * dq)).collect();
    let w: Vec<CMatrix> = (0..=m)
        .map(|j| coupling.field_energy(s + j as f64 * dq))
        .collect();

    let mut terms = vec![free[m].clone()];
    // Y_k(q_j) for the current order; Y_0(q_j) = U_j.
    let mut y = free.clone();
    let mut phase = Complex64::new(1.0, 0.0);
    for _ in 1..=order {
        phase *= -I;
        // Y_k(r) = U_{r-s} Z_k(r), Z_k(r) = int_s^r U_{q-s}^dagger w_q Y_{k-1}(q) dq.
        let g: Vec<CMatrix> = (0..=m)
            .map(|j| free[j].adjoint() * &w[j] * &y[j])
            .collect();
        let mut z = CMatrix::zeros(h.len(), h.len());
        let mut next = Vec::with_capacity(m + 1);
        next.push(CMatrix::zeros(h.len(), h.len()));
        for j in 1..=m {
            z += (&g[j - 1] + &g[j]) * Complex64::new(0.5 * dq, 0.0);
            next.push(&free[j] * &z);
        }
        terms.push(&next[m] * phase);
        y = next;
    }
    Ok(terms)
}

/// Sum of the Dyson-Phillips terms up to `order`.
pub fn dyson_phillips_propagator(
    h: &HermitianOperator,
    spec: &VectorPotentialSpec,
    s: f64,
    t: f64,
    order: usize,
    intervals: usize,
) -> Result<CMatrix> {
    let terms = dyson_phillips_terms(h, spec, s, t, order, intervals)?;
    let mut sum = CMatrix::zeros(h.len(), h.len());
    for term in &terms {
        sum += term;
    }
    Ok(sum)
}

/// `1 / (1 + exp(x))` without overflow.
pub fn fermi(x: f64) -> f64 {
    if x > 0.0 {
        let e = (-x).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + x.exp())
    }
}

/// `(1 + exp(beta h))^{-1}`.
pub fn fermi_symbol(h: &HermitianOperator, beta: f64) -> Result<SymbolMatrix> {
    if !(beta > 0.0) {
        return invalid(format!("inverse temperature must be positive, got {beta}"));
    }
    let eig = Eigh::new(h.entries());
    let d = eig.apply(|e| Complex64::new(fermi(beta * e), 0.0));
    Ok(SymbolMatrix::from_parts(h.lattice(), d))
}

#[derive(Clone, Debug, Serialize)]
pub struct DecayRow {
    pub separation: f64,
    pub max_amplitude: f64,
    pub bound_value: f64,
}

/// Largest propagator amplitude per separation and the smallest constant
/// `D` with `amp(r) <= D / (1 + r^(d + eps))`.
#[derive(Clone, Debug)]
pub struct DecayReport {
    pub time: f64,
    pub epsilon: f64,
    pub dim: usize,
    pub constant: f64,
    pub rows: Vec<DecayRow>,
}

pub fn decay_weight(r: f64, dim: usize, epsilon: f64) -> f64 {
    1.0 + r.powf(dim as f64 + epsilon)
}

impl DecayReport {
    fn from_amplitudes(
        time: f64,
        epsilon: f64,
        dim: usize,
        amps: BTreeMap<i64, f64>,
    ) -> DecayReport {
        let mut rows: Vec<DecayRow> = amps
            .into_iter()
            .map(|(r2, a)| DecayRow {
                separation: (r2 as f64).sqrt(),
                max_amplitude: a,
                bound_value: 0.0,
            })
            .collect();
        let constant = rows
            .iter()
            .map(|r| r.max_amplitude * decay_weight(r.separation, dim, epsilon))
            .fold(0.0, f64::max);
        for r in &mut rows {
            r.bound_value = constant / decay_weight(r.separation, dim, epsilon);
        }
        DecayReport {
            time,
            epsilon,
            dim,
            constant,
            rows,
        }
    }

    /// Re-evaluate the bound column with an externally fitted constant.
    pub fn with_constant(&self, constant: f64) -> DecayReport {
        let mut out = self.clone();
        out.constant = constant;
        for r in &mut out.rows {
            r.bound_value = constant / decay_weight(r.separation, self.dim, self.epsilon);
        }
        out
    }

    pub fn dominated_by(&self, constant: f64) -> bool {
        self.rows
            .iter()
            .all(|r| r.max_amplitude * decay_weight(r.separation, self.dim, self.epsilon) <= constant)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Tabulate `max_{|x-y| = r} |<e_x, exp(ith) e_y>|`.
pub fn correlation_decay_profile(
    h: &HermitianOperator,
    t: f64,
    epsilon: f64,
) -> Result<DecayReport> {
    if !(epsilon > 0.0) {
        return invalid("decay exponent offset must be positive");
    }
    let u = Eigh::new(h.entries()).exp_i(-t);
    Ok(decay_from_propagator(h.lattice(), &u, t, epsilon))
}

pub(crate) fn decay_from_propagator(
    lattice: &LatticeBox,
    u: &CMatrix,
    t: f64,
    epsilon: f64,
) -> DecayReport {
    let sites: Vec<Vec<i64>> = lattice.sites().collect();
    let mut amps: BTreeMap<i64, f64> = BTreeMap::new();
    for (i, x) in sites.iter().enumerate() {
        for (j, y) in sites.iter().enumerate() {
            let r2: i64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
            let a = u[(i, j)].norm();
            let e = amps.entry(r2).or_insert(0.0);
            if a > *e {
                *e = a;
            }
        }
    }
    DecayReport::from_amplitudes(t, epsilon, lattice.dim(), amps)
}
