// SPDX-License-Identifier: Apache-2.0

//! Quasi-free states on the one-particle level: Wick expectations, energy
//! increments, electromagnetic work and relative entropy.

use std::io::Write;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{invalid, HeatError, Result};
use crate::lattice::{HermitianOperator, LatticeBox, VectorPotentialSpec};
use crate::linalg::{conjugate, matmul, reunitarize, trace_product, CMatrix, CVector, Eigh, ZERO};
use crate::onebody::{fermi_symbol, subdivide, DrivenStepper, SymbolMatrix, UnitaryMatrix};

/// Eigenvalue clamp used for matrix logarithms.
pub const LOG_CLAMP: f64 = 1e-14;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Kind {
    Creation,
    Annihilation,
}

/// One factor `a*(psi)` or `a(psi)` of a monomial.
#[derive(Clone, Debug, PartialEq)]
pub struct Factor {
    pub kind: Kind,
    pub psi: CVector,
}

impl Factor {
    pub fn creation(psi: CVector) -> Self {
        Factor {
            kind: Kind::Creation,
            psi,
        }
    }

    pub fn annihilation(psi: CVector) -> Self {
        Factor {
            kind: Kind::Annihilation,
            psi,
        }
    }
}

/// Ordered product of creation and annihilation operators.
#[derive(Clone, Debug, PartialEq)]
pub struct Monomial {
    pub factors: Vec<Factor>,
}

impl Monomial {
    pub fn new(factors: Vec<Factor>) -> Result<Self> {
        if factors.is_empty() {
            return invalid("monomial needs at least one factor");
        }
        let n = factors[0].psi.len();
        for f in &factors {
            if f.psi.len() != n {
                return invalid("monomial factors live on different spaces");
            }
            if f.psi.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return invalid("monomial wavefunction is not finite");
            }
        }
        Ok(Monomial { factors })
    }

    /// `a*(f) a(g)`.
    pub fn bilinear(f: CVector, g: CVector) -> Self {
        Monomial {
            factors: vec![Factor::creation(f), Factor::annihilation(g)],
        }
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }
}

pub fn basis_vector(n: usize, x: usize) -> CVector {
    let mut v = CVector::zeros(n);
    v[x] = Complex64::new(1.0, 0.0);
    v
}

/// `<u, M v>`, antilinear in `u`.
fn sandwich(u: &CVector, m: &CMatrix, v: &CVector) -> Complex64 {
    (u.adjoint() * (m * v))[(0, 0)]
}

/// Quasi-free expectation of `m` for the gauge-invariant state with symbol `d`.
pub fn wick_expectation(d: &CMatrix, m: &Monomial) -> Complex64 {
    let len = m.factors.len();
    let creators = m
        .factors
        .iter()
        .filter(|f| f.kind == Kind::Creation)
        .count();
    if len % 2 == 1 || 2 * creators != len {
        return ZERO;
    }
    let n = d.nrows();
    let one_minus = CMatrix::identity(n, n) - d;
    let mut pair = vec![vec![ZERO; len]; len];
    for i in 0..len {
        for j in (i + 1)..len {
            let (a, b) = (&m.factors[i], &m.factors[j]);
            pair[i][j] = match (a.kind, b.kind) {
                // rho(a*(f) a(g)) = <g, D f>
                (Kind::Creation, Kind::Annihilation) => sandwich(&b.psi, d, &a.psi),
                // rho(a(g) a*(f)) = <g, (1 - D) f>
                (Kind::Annihilation, Kind::Creation) => sandwich(&a.psi, &one_minus, &b.psi),
                _ => ZERO,
            };
        }
    }
    let idx: Vec<usize> = (0..len).collect();
    pfaffian(&pair, &idx)
}

/// Expansion along the first index: `sum_j (-1)^(j-1) c(0, j) Pf(rest)`.
fn pfaffian(pair: &[Vec<Complex64>], idx: &[usize]) -> Complex64 {
    if idx.is_empty() {
        return Complex64::new(1.0, 0.0);
    }
    let first = idx[0];
    let mut acc = ZERO;
    for j in 1..idx.len() {
        let c = pair[first][idx[j]];
        if c == ZERO {
            continue;
        }
        let rest: Vec<usize> = idx[1..]
            .iter()
            .enumerate()
            .filter(|&(k, _)| k + 1 != j)
            .map(|(_, &v)| v)
            .collect();
        let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
        acc += c * sign * pfaffian(pair, &rest);
    }
    acc
}

/// `rho(a*(f_1)...a*(f_m) a(g_m)...a(g_1)) = det[<g_i, D f_j>]`.
pub fn determinant_expectation(d: &CMatrix, f: &[CVector], g: &[CVector]) -> Complex64 {
    if f.len() != g.len() {
        return ZERO;
    }
    let m = f.len();
    let mat = CMatrix::from_fn(m, m, |i, j| sandwich(&g[i], d, &f[j]));
    mat.determinant()
}

/// `D_t = U d U†`.
pub fn evolve_symbol(d: &SymbolMatrix, u: &UnitaryMatrix) -> Result<SymbolMatrix> {
    if d.lattice() != u.lattice() {
        return invalid("symbol and unitary live on different boxes");
    }
    Ok(SymbolMatrix::from_parts(
        d.lattice(),
        conjugate(u.entries(), d.entries()),
    ))
}

/// `S = Re Tr(h (D_t - d))`.
pub fn internal_energy_increment(dt: &CMatrix, d: &CMatrix, h: &CMatrix) -> f64 {
    trace_product(h, &(dt - d)).re
}

/// `P = Re Tr(w_t D_t)`.
pub fn potential_energy_increment(dt: &CMatrix, w: &CMatrix) -> f64 {
    trace_product(w, dt).re
}

/// `Re Tr((d/dt w_t) D_t)`.
pub fn work_integrand(dt: &CMatrix, dw: &CMatrix) -> f64 {
    trace_product(dw, dt).re
}

/// `int_{times[0]}^t f ds` from samples on a uniform grid: composite Simpson,
/// with a closing 3/8 panel for an odd interval count and the trapezoid for a
/// single interval.
pub fn work_integral(times: &[f64], integrand: &[f64], t: f64) -> Result<f64> {
    if times.len() != integrand.len() || times.is_empty() {
        return invalid("work grid and integrand lengths differ");
    }
    if times.len() == 1 {
        return if (t - times[0]).abs() <= 1e-12 * (1.0 + t.abs()) {
            Ok(0.0)
        } else {
            invalid("t is not a grid node")
        };
    }
    let h = times[1] - times[0];
    if !(h > 0.0) {
        return invalid("work grid must be increasing");
    }
    for (k, &tk) in times.iter().enumerate() {
        if (tk - (times[0] + k as f64 * h)).abs() > 1e-9 * h.max(1.0) {
            return invalid("work grid is not uniform");
        }
    }
    let pos = (t - times[0]) / h;
    let k = pos.round();
    if k < 0.0 || (pos - k).abs() > 1e-6 || k as usize >= times.len() {
        return invalid(format!("t = {t} is not a node of the work grid"));
    }
    Ok(composite_rule(&integrand[..=k as usize], h))
}

pub(crate) fn composite_rule(f: &[f64], h: f64) -> f64 {
    let k = f.len() - 1;
    match k {
        0 => 0.0,
        1 => 0.5 * h * (f[0] + f[1]),
        _ if k % 2 == 0 => simpson(f, h),
        _ => {
            let head = if k > 3 { simpson(&f[..=k - 3], h) } else { 0.0 };
            let g = &f[k - 3..];
            head + 3.0 * h / 8.0 * (g[0] + 3.0 * g[1] + 3.0 * g[2] + g[3])
        }
    }
}

fn simpson(f: &[f64], h: f64) -> f64 {
    let k = f.len() - 1;
    let mut acc = f[0] + f[k];
    for (i, v) in f.iter().enumerate().take(k).skip(1) {
        acc += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    acc * h / 3.0
}

/// Eigenvalues clamped to `[LOG_CLAMP, 1 - LOG_CLAMP]`.
fn clamp_occupation(v: f64) -> f64 {
    v.clamp(LOG_CLAMP, 1.0 - LOG_CLAMP)
}

/// `Tr[D1 (ln D1 - ln D2)] + Tr[(1-D1)(ln(1-D1) - ln(1-D2))]`.
pub fn quasifree_relative_entropy(d1: &CMatrix, d2: &CMatrix) -> Result<f64> {
    if d1.shape() != d2.shape() {
        return invalid("symbols have different dimensions");
    }
    let e1 = Eigh::new(d1);
    let e2 = Eigh::new(d2);
    let mut neg_entropy = 0.0;
    for &v in &e1.values {
        let p = clamp_occupation(v);
        neg_entropy += p * p.ln() + (1.0 - p) * (1.0 - p).ln();
    }
    // Tr[D1 ln D2 + (1-D1) ln(1-D2)] = Tr[D1 logit(D2)] + Tr[ln(1-D2)].
    let logit = e2.apply(|v| {
        let p = clamp_occupation(v);
        Complex64::new(p.ln() - (1.0 - p).ln(), 0.0)
    });
    let log_hole: f64 = e2
        .values
        .iter()
        .map(|&v| (1.0 - clamp_occupation(v)).ln())
        .sum();
    let cross = trace_product(d1, &logit).re + log_hole;
    Ok(neg_entropy - cross)
}

/// `Q = S_rel(D_t | d) / beta`, cross-checked against `Tr(h (D_t - d))`.
pub fn heat_production(dt: &CMatrix, d: &CMatrix, h: &CMatrix, beta: f64) -> Result<f64> {
    if !(beta > 0.0) {
        return invalid("inverse temperature must be positive");
    }
    let q = quasifree_relative_entropy(dt, d)? / beta;
    let s = internal_energy_increment(dt, d, h);
    if (q - s).abs() > 1e-8 * (1.0 + q.abs()) {
        return Err(HeatError::NumericInconsistency(format!(
            "heat production {q:e} and internal energy increment {s:e} disagree"
        )));
    }
    Ok(q)
}

/// Principal submatrix of `d` on the sites of `sub`.
pub fn restrict_symbol(d: &SymbolMatrix, sub: &LatticeBox) -> Result<SymbolMatrix> {
    let big = d.lattice();
    if !big.contains(sub) {
        return invalid("sub-box is not contained in the box");
    }
    let idx: Vec<usize> = sub
        .sites()
        .map(|x| big.index(&x).expect("contained site"))
        .collect();
    let m = CMatrix::from_fn(idx.len(), idx.len(), |i, j| d.entries()[(idx[i], idx[j])]);
    Ok(SymbolMatrix::from_parts(sub, m))
}

/// Principal submatrix on an index list.
pub fn restrict_matrix(m: &CMatrix, idx: &[usize]) -> CMatrix {
    CMatrix::from_fn(idx.len(), idx.len(), |i, j| m[(idx[i], idx[j])])
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct TrajectoryPoint {
    pub t: f64,
    #[serde(rename = "S")]
    pub s: f64,
    #[serde(rename = "P")]
    pub p: f64,
    pub work: f64,
    #[serde(rename = "Q_rel")]
    pub q_rel: f64,
    pub first_law_residual: f64,
    pub balance_residual: f64,
}

/// Time series of energy increments along a driven evolution.
#[derive(Clone, Debug)]
pub struct EnergyTrajectory {
    pub beta: f64,
    pub step: f64,
    pub steps: usize,
    pub points: Vec<TrajectoryPoint>,
    /// Symbols at the recorded points, when requested.
    pub symbols: Vec<CMatrix>,
}

impl EnergyTrajectory {
    pub fn last(&self) -> &TrajectoryPoint {
        self.points.last().expect("trajectory has at least one point")
    }

    pub fn max_first_law_residual(&self) -> f64 {
        self.points
            .iter()
            .map(|p| p.first_law_residual)
            .fold(0.0, f64::max)
    }

    pub fn max_balance_residual(&self) -> f64 {
        self.points
            .iter()
            .map(|p| p.balance_residual)
            .fold(0.0, f64::max)
    }

    pub fn min_internal_energy(&self) -> f64 {
        self.points.iter().map(|p| p.s).fold(f64::INFINITY, f64::min)
    }

    /// Point whose time is closest to `t`.
    pub fn at(&self, t: f64) -> &TrajectoryPoint {
        self.points
            .iter()
            .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
            .expect("nonempty trajectory")
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for p in &self.points {
            w.serialize(p)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrajectoryOptions {
    /// Integrator step; the field window is split into equal steps no wider than this.
    pub step: f64,
    /// Last time of the trajectory.
    pub horizon: f64,
    /// Record every k-th grid point (the final point is always recorded).
    pub record_every: usize,
    pub keep_symbols: bool,
}

impl TrajectoryOptions {
    pub fn new(spec: &VectorPotentialSpec, horizon: f64) -> Self {
        TrajectoryOptions {
            step: (spec.t1 - spec.t0) / 400.0,
            horizon,
            record_every: 1,
            keep_symbols: false,
        }
    }
}

/// Integrate `D_t` from the Gibbs symbol at `t0` and tabulate `S`, `P`, work and `Q`.
pub fn simulate_trajectory(
    h: &HermitianOperator,
    spec: &VectorPotentialSpec,
    beta: f64,
    opts: &TrajectoryOptions,
) -> Result<EnergyTrajectory> {
    let d0 = fermi_symbol(h, beta)?;
    simulate_from(h, spec, d0.entries(), beta, opts)
}

pub(crate) fn simulate_from(
    h: &HermitianOperator,
    spec: &VectorPotentialSpec,
    d0: &CMatrix,
    beta: f64,
    opts: &TrajectoryOptions,
) -> Result<EnergyTrajectory> {
    if opts.horizon < spec.t0 {
        return invalid("horizon precedes the switch-on time");
    }
    if opts.record_every == 0 {
        return invalid("record_every must be positive");
    }
    let (_, dt) = subdivide(spec.t0, spec.t1, opts.step)?;
    let total = ((opts.horizon - spec.t0) / dt - 1e-9).ceil().max(0.0) as usize;
    let mut stepper = DrivenStepper::new(h, spec)?;
    let coupling = stepper.coupling().clone();
    let hm = h.entries().clone();

    let n = h.len();
    let mut u_total = CMatrix::identity(n, n);
    let mut d = d0.clone();
    let mut times = Vec::with_capacity(total + 1);
    let mut integrand = Vec::with_capacity(total + 1);
    let mut points = Vec::new();
    let mut symbols = Vec::new();
    for k in 0..=total {
        let t = spec.t0 + k as f64 * dt;
        times.push(t);
        integrand.push(work_integrand(&d, &coupling.field_energy_derivative(t)));
        if k % opts.record_every == 0 || k == total {
            let s = internal_energy_increment(&d, d0, &hm);
            let p = potential_energy_increment(&d, &coupling.field_energy(t));
            let work = composite_rule(&integrand, dt);
            let q = if k == 0 {
                0.0
            } else {
                quasifree_relative_entropy(&d, d0)? / beta
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
                symbols.push(d.clone());
            }
        }
        if k < total {
            u_total = reunitarize(&matmul(&stepper.step(t + 0.5 * dt, dt), &u_total));
            d = conjugate(&u_total, d0);
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

/// Final symbol `D_t` of the driven evolution from the Gibbs symbol.
pub fn evolved_symbol(
    h: &HermitianOperator,
    spec: &VectorPotentialSpec,
    beta: f64,
    t: f64,
    step: f64,
) -> Result<SymbolMatrix> {
    let d0 = fermi_symbol(h, beta)?;
    let u = crate::onebody::driven_propagator(h, spec, spec.t0, t, step)?;
    evolve_symbol(&d0, &u)
}
