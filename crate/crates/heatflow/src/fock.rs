// SPDX-License-Identifier: Apache-2.0

//! Brute-force many-body oracle: Jordan-Wigner CAR matrices on the full Fock
//! space of a small box. Basis state `s` has site `x` occupied iff bit `x` is set.

use num_complex::Complex64;

use crate::error::{invalid, HeatError, Result};
use crate::lattice::{HermitianOperator, PeierlsCoupling, VectorPotentialSpec};
use crate::linalg::{conjugate, matmul, reunitarize, trace_product, CMatrix, Eigh, ZERO};
use crate::onebody::subdivide;
use crate::quasifree::{composite_rule, EnergyTrajectory, Kind, Monomial, TrajectoryOptions, TrajectoryPoint};

/// Largest number of sites accepted (Fock dimension 16384).
pub const MAX_FOCK_SITES: usize = 14;

/// Weight threshold for the support condition of the relative entropy.
pub const SUPPORT_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct FockOperator {
    n_sites: usize,
    entries: CMatrix,
}

impl FockOperator {
    pub fn new(n_sites: usize, entries: CMatrix) -> Result<Self> {
        check_sites(n_sites)?;
        let dim = 1usize << n_sites;
        if entries.nrows() != dim || entries.ncols() != dim {
            return invalid(format!("Fock operator must be {dim}x{dim}"));
        }
        Ok(FockOperator { n_sites, entries })
    }

    pub fn identity(n_sites: usize) -> Result<Self> {
        check_sites(n_sites)?;
        let dim = 1usize << n_sites;
        Ok(FockOperator {
            n_sites,
            entries: CMatrix::identity(dim, dim),
        })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &CMatrix {
        &self.entries
    }

    pub fn adjoint(&self) -> FockOperator {
        FockOperator {
            n_sites: self.n_sites,
            entries: self.entries.adjoint(),
        }
    }

    pub fn mul(&self, other: &FockOperator) -> FockOperator {
        FockOperator {
            n_sites: self.n_sites,
            entries: &self.entries * &other.entries,
        }
    }
}

/// Density matrix on the Fock space.
#[derive(Clone, Debug)]
pub struct DensityMatrix {
    n_sites: usize,
    entries: CMatrix,
}

impl DensityMatrix {
    /// Checks Hermiticity, trace one and positivity, each to `1e-10`.
    pub fn new(n_sites: usize, entries: CMatrix) -> Result<Self> {
        check_sites(n_sites)?;
        let dim = 1usize << n_sites;
        if entries.nrows() != dim || entries.ncols() != dim {
            return invalid(format!("density matrix must be {dim}x{dim}"));
        }
        if crate::linalg::hermiticity_defect(&entries) > 1e-10 {
            return invalid("density matrix is not Hermitian");
        }
        if (entries.trace().re - 1.0).abs() > 1e-10 {
            return invalid("density matrix does not have trace one");
        }
        if Eigh::new(&entries).values.iter().any(|&v| v < -1e-10) {
            return invalid("density matrix is not positive");
        }
        Ok(DensityMatrix { n_sites, entries })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn entries(&self) -> &CMatrix {
        &self.entries
    }

    /// `V rho V†`.
    pub fn evolve(&self, v: &FockOperator) -> DensityMatrix {
        DensityMatrix {
            n_sites: self.n_sites,
            entries: conjugate(v.entries(), &self.entries),
        }
    }

    pub fn expectation(&self, op: &FockOperator) -> Complex64 {
        trace_product(&self.entries, op.entries())
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut v = Eigh::new(&self.entries).values;
        v.sort_by(f64::total_cmp);
        v
    }

    /// One-particle symbol `D[y, x] = Tr(rho a*_x a_y)`.
    pub fn two_point(&self) -> CMatrix {
        let n = self.n_sites;
        let dim = 1usize << n;
        let mut d = CMatrix::zeros(n, n);
        for x in 0..n {
            for y in 0..n {
                let mut acc = ZERO;
                for s in 0..dim {
                    if let Some((target, sign)) = hop(s, x, y) {
                        // (a*_x a_y)[target, s] = sign
                        acc += self.entries[(s, target)] * sign;
                    }
                }
                d[(y, x)] = acc;
            }
        }
        d
    }

    pub fn von_neumann_entropy(&self) -> f64 {
        Eigh::new(&self.entries)
            .values
            .iter()
            .filter(|&&v| v > 0.0)
            .map(|&v| -v * v.ln())
            .sum()
    }
}

fn check_sites(n: usize) -> Result<()> {
    if n == 0 || n > MAX_FOCK_SITES {
        return Err(HeatError::ResourceLimit(format!(
            "Fock oracle supports 1..={MAX_FOCK_SITES} sites, got {n}"
        )));
    }
    Ok(())
}

/// Jordan-Wigner sign of acting on site `x` of basis state `s`.
fn parity(s: usize, x: usize) -> f64 {
    if (s & ((1usize << x) - 1)).count_ones() % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// `a*_x a_y |s> = sign |target>`, or `None` when it vanishes.
fn hop(s: usize, x: usize, y: usize) -> Option<(usize, f64)> {
    if s & (1 << y) == 0 {
        return None;
    }
    let s1 = s ^ (1 << y);
    if s1 & (1 << x) != 0 {
        return None;
    }
    let sign = parity(s, y) * parity(s1, x);
    Some((s1 | (1 << x), sign))
}

/// Annihilation operators `a_0, ..., a_{n-1}`.
pub fn car_matrices(n: usize) -> Result<Vec<FockOperator>> {
    check_sites(n)?;
    let dim = 1usize << n;
    Ok((0..n)
        .map(|x| {
            let mut a = CMatrix::zeros(dim, dim);
            for s in 0..dim {
                if s & (1 << x) != 0 {
                    a[(s ^ (1 << x), s)] = Complex64::new(parity(s, x), 0.0);
                }
            }
            FockOperator { n_sites: n, entries: a }
        })
        .collect())
}

/// `sum_{x,y} m[x, y] a*_x a_y`.
pub fn second_quantize_matrix(m: &CMatrix) -> Result<FockOperator> {
    let n = m.nrows();
    check_sites(n)?;
    let dim = 1usize << n;
    let mut out = CMatrix::zeros(dim, dim);
    let nonzero: Vec<(usize, usize, Complex64)> = (0..n)
        .flat_map(|x| (0..n).map(move |y| (x, y)))
        .filter(|&(x, y)| m[(x, y)] != ZERO)
        .map(|(x, y)| (x, y, m[(x, y)]))
        .collect();
    for s in 0..dim {
        for &(x, y, c) in &nonzero {
            if let Some((target, sign)) = hop(s, x, y) {
                out[(target, s)] += c * sign;
            }
        }
    }
    Ok(FockOperator {
        n_sites: n,
        entries: out,
    })
}

pub fn second_quantize(h: &HermitianOperator) -> Result<FockOperator> {
    second_quantize_matrix(h.entries())
}

/// Number operator `sum_x a*_x a_x`.
pub fn number_operator(n: usize) -> Result<FockOperator> {
    second_quantize_matrix(&CMatrix::identity(n, n))
}

/// `exp(-beta H) / Tr exp(-beta H)`.
pub fn gibbs_state(big_h: &FockOperator, beta: f64) -> Result<DensityMatrix> {
    if !(beta > 0.0) {
        return invalid("inverse temperature must be positive");
    }
    let eig = Eigh::new(big_h.entries());
    let e0 = eig.values.iter().copied().fold(f64::INFINITY, f64::min);
    let z: f64 = eig.values.iter().map(|e| (-beta * (e - e0)).exp()).sum();
    let rho = eig.apply(|e| Complex64::new((-beta * (e - e0)).exp() / z, 0.0));
    Ok(DensityMatrix {
        n_sites: big_h.n_sites,
        entries: rho,
    })
}

/// Quasi-free density matrix with one-particle symbol `d`, built as
/// `exp(-dGamma(K)) / Z` with `K = ln((1 - d) / d)`; eigenvalues of `d` are
/// clamped away from 0 and 1.
pub fn quasi_free_density(d: &CMatrix) -> Result<DensityMatrix> {
    let eig = Eigh::new(d);
    let k = eig.apply(|v| {
        let p = v.clamp(1e-14, 1.0 - 1e-14);
        Complex64::new(((1.0 - p) / p).ln(), 0.0)
    });
    let big_k = second_quantize_matrix(&k)?;
    gibbs_state(&big_k, 1.0)
}

/// Exponential-midpoint stepper for `H + W_t` on the Fock space.
struct ManyBodyStepper {
    big_h: CMatrix,
    coupling: PeierlsCoupling,
    free: Eigh,
    cached: Option<(f64, CMatrix)>,
}

impl ManyBodyStepper {
    fn new(h: &HermitianOperator, spec: &VectorPotentialSpec) -> Result<Self> {
        let big_h = second_quantize(h)?.entries;
        let free = Eigh::new(&big_h);
        Ok(ManyBodyStepper {
            big_h,
            coupling: PeierlsCoupling::new(h.lattice(), spec)?,
            free,
            cached: None,
        })
    }

    fn step(&mut self, t_mid: f64, dt: f64) -> Result<CMatrix> {
        if self.coupling.spec().is_off(t_mid) {
            if let Some((cdt, u)) = &self.cached {
                if *cdt == dt {
                    return Ok(u.clone());
                }
            }
            let u = self.free.exp_i(dt);
            self.cached = Some((dt, u.clone()));
            return Ok(u);
        }
        let w = second_quantize_matrix(&self.coupling.field_energy(t_mid))?;
        Ok(Eigh::new(&(&self.big_h + w.entries())).exp_i(dt))
    }
}

/// `V_{t,s}` solving `dV/dt = -i (H + W_t) V` by the exponential-midpoint rule.
pub fn evolve_many_body(
    h: &HermitianOperator,
    spec: &VectorPotentialSpec,
    s: f64,
    t: f64,
    step: f64,
) -> Result<FockOperator> {
    let (m, dt) = subdivide(s, t, step)?;
    let mut stepper = ManyBodyStepper::new(h, spec)?;
    let dim = stepper.big_h.nrows();
    let mut v = CMatrix::identity(dim, dim);
    for k in 0..m {
        v = reunitarize(&matmul(&stepper.step(s + (k as f64 + 0.5) * dt, dt)?, &v));
    }
    Ok(FockOperator {
        n_sites: h.len(),
        entries: v,
    })
}

/// `Tr rho1 (ln rho1 - ln rho2)`, or `+inf` when `rho1` has weight on the kernel of `rho2`.
pub fn relative_entropy_fock(rho1: &DensityMatrix, rho2: &DensityMatrix) -> f64 {
    let e1 = Eigh::new(&rho1.entries);
    let e2 = Eigh::new(&rho2.entries);
    // weights <v_k, rho1 v_k> on the eigenvectors of rho2
    let rotated = e2.vectors.adjoint() * &rho1.entries * &e2.vectors;
    // Eigenvalues below the resolution of the eigensolver are numerically
    // zero; resolvable ones below SUPPORT_TOL still belong to the support.
    let top = e2.values.iter().copied().fold(0.0, f64::max);
    let resolution = e2.values.len() as f64 * f64::EPSILON * top;
    let kernel = SUPPORT_TOL.min(resolution);
    let mut cross = 0.0;
    let mut lost = 0.0;
    for (k, &mu) in e2.values.iter().enumerate() {
        let w = rotated[(k, k)].re;
        if mu <= kernel {
            lost += w.max(0.0);
        }
        cross += w * mu.max(resolution).max(f64::MIN_POSITIVE).ln();
    }
    if lost > SUPPORT_TOL {
        return f64::INFINITY;
    }
    let own: f64 = e1
        .values
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum();
    own - cross
}

/// `[B_1, [B_2, [..., B_N]]]`.
pub fn multicommutator(ops: &[FockOperator]) -> Result<FockOperator> {
    if ops.len() < 2 {
        return invalid("multi-commutator needs at least two operators");
    }
    let dim = ops[0].dim();
    if ops.iter().any(|o| o.dim() != dim) {
        return invalid("multi-commutator operands have different dimensions");
    }
    let mut acc = ops[ops.len() - 1].entries.clone();
    for op in ops[..ops.len() - 1].iter().rev() {
        acc = &op.entries * &acc - &acc * &op.entries;
    }
    Ok(FockOperator {
        n_sites: ops[0].n_sites,
        entries: acc,
    })
}

/// Operator of a monomial: `a(psi) = sum conj(psi_x) a_x`, `a*(psi) = sum psi_x a*_x`.
pub fn monomial_operator(cars: &[FockOperator], m: &Monomial) -> Result<FockOperator> {
    let n = cars.len();
    let first = cars
        .first()
        .ok_or_else(|| HeatError::InvalidArgument("empty CAR list".into()))?;
    let dim = first.dim();
    let mut acc = CMatrix::identity(dim, dim);
    for f in &m.factors {
        if f.psi.len() != n {
            return invalid("wavefunction length does not match the CAR list");
        }
        let mut op = CMatrix::zeros(dim, dim);
        for x in 0..n {
            match f.kind {
                Kind::Annihilation => op += cars[x].entries() * f.psi[x].conj(),
                Kind::Creation => op += cars[x].entries().adjoint() * f.psi[x],
            }
        }
        acc *= op;
    }
    Ok(FockOperator {
        n_sites: first.n_sites,
        entries: acc,
    })
}

/// Many-body counterpart of [`crate::quasifree::simulate_trajectory`] on the same grid.
pub fn simulate_many_body_trajectory(
    h: &HermitianOperator,
    spec: &VectorPotentialSpec,
    beta: f64,
    opts: &TrajectoryOptions,
) -> Result<EnergyTrajectory> {
    let (_, dt) = subdivide(spec.t0, spec.t1, opts.step)?;
    let total = ((opts.horizon - spec.t0) / dt - 1e-9).ceil().max(0.0) as usize;
    let mut stepper = ManyBodyStepper::new(h, spec)?;
    let big_h = FockOperator {
        n_sites: h.len(),
        entries: stepper.big_h.clone(),
    };
    let gibbs = gibbs_state(&big_h, beta)?;
    let e0 = gibbs.expectation(&big_h).re;
    let coupling = stepper.coupling.clone();

    let dim = big_h.dim();
    let mut v_total = CMatrix::identity(dim, dim);
    let mut rho = gibbs.clone();
    let mut integrand = Vec::with_capacity(total + 1);
    let mut points = Vec::new();
    let mut symbols = Vec::new();
    for k in 0..=total {
        let t = spec.t0 + k as f64 * dt;
        let dw = second_quantize_matrix(&coupling.field_energy_derivative(t))?;
        integrand.push(rho.expectation(&dw).re);
        if k % opts.record_every == 0 || k == total {
            let w = second_quantize_matrix(&coupling.field_energy(t))?;
            let s = rho.expectation(&big_h).re - e0;
            let p = rho.expectation(&w).re;
            let work = composite_rule(&integrand, dt);
            let q = if k == 0 {
                0.0
            } else {
                relative_entropy_fock(&rho, &gibbs) / beta
            };
            let (s, p, work) = if k == 0 { (0.0, 0.0, 0.0) } else { (s, p, work) };
            points.push(TrajectoryPoint {
                t,
                s,
                p,
                work,
                q_rel: q,
                first_law_residual: (q - s).abs(),
                balance_residual: (s + p - work).abs(),
            });
            if opts.keep_symbols {
                symbols.push(rho.two_point());
            }
        }
        if k < total {
            v_total = reunitarize(&matmul(&stepper.step(t + 0.5 * dt, dt)?, &v_total));
            rho = DensityMatrix {
                n_sites: rho.n_sites,
                entries: conjugate(&v_total, &gibbs.entries),
            };
        }
    }
    Ok(EnergyTrajectory {
        beta,
        step: dt,
        steps: total,
        points,
        symbols,
    })
}
