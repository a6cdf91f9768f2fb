// SPDX-License-Identifier: Apache-2.0

//! Scenario runners behind the CLI subcommands.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{invalid, HeatError, Result};
use crate::fock::{simulate_many_body_trajectory, MAX_FOCK_SITES};
use crate::lattice::{
    build_box, hamiltonian, sample_disorder, DisorderField, HermitianOperator, LatticeBox,
    VectorPotentialSpec,
};
use crate::linalg::{conjugate, max_abs_diff, CMatrix, Eigh};
use crate::onebody::{
    correlation_decay_profile, driven_propagator, dyson_phillips_propagator, fermi_symbol,
    DecayReport, DecayRow,
};
use crate::quasifree::{
    evolved_symbol, quasifree_relative_entropy, restrict_matrix, simulate_trajectory,
    EnergyTrajectory, TrajectoryOptions,
};
use crate::trees::{
    check_tree_decay_bound, heat_series_sum, sample_decay_tuples, DecaySampleResult,
    HeatSeriesReport, SeriesEvaluator,
};

use super::config::ScenarioConfig;
use super::fit::{fit_polynomial, fit_powers, log_log_slope, PolynomialFit};
use super::manifest::Check;

/// Tolerance on `|Q - S|` declared for every trajectory.
pub const FIRST_LAW_TOLERANCE: f64 = 1e-8;
/// Tolerance on `|S + P - work|` declared for every trajectory.
pub const BALANCE_TOLERANCE: f64 = 1e-6;
/// Heat values below this are treated as negative.
pub const POSITIVITY_FLOOR: f64 = -1e-10;
/// Quasi-free versus Fock agreement.
pub const ORACLE_TOLERANCE: f64 = 1e-8;

/// `h` on the box of half side `half_side` with disorder drawn from `seed`.
pub fn disordered_hamiltonian(
    dim: usize,
    half_side: f64,
    seed: u64,
    lambda: f64,
) -> Result<HermitianOperator> {
    let lattice = build_box(dim, half_side)?;
    let omega = sample_disorder(&lattice, seed);
    hamiltonian(&lattice, &omega, lambda)
}

/// `Q(t)` from the evolved symbol alone.
pub fn heat_at(
    h: &HermitianOperator,
    spec: &VectorPotentialSpec,
    beta: f64,
    t: f64,
    step: f64,
) -> Result<f64> {
    let d0 = fermi_symbol(h, beta)?;
    let dt = evolved_symbol(h, spec, beta, t, step)?;
    Ok(quasifree_relative_entropy(dt.entries(), d0.entries())? / beta)
}

fn options(cfg: &ScenarioConfig, keep_symbols: bool) -> TrajectoryOptions {
    TrajectoryOptions {
        step: cfg.step(),
        horizon: cfg.horizon(),
        record_every: cfg.record_every(),
        keep_symbols,
    }
}

#[derive(Clone, Copy, Debug)]
struct Tuple {
    half_side: f64,
    seed: u64,
    eta: f64,
    l: f64,
}

fn tuples(cfg: &ScenarioConfig) -> Vec<Tuple> {
    let mut out = Vec::new();
    for &half_side in &cfg.half_sides {
        for &seed in &cfg.seeds {
            for &eta in &cfg.eta_grid {
                for &l in &cfg.l_grid {
                    out.push(Tuple {
                        half_side,
                        seed,
                        eta,
                        l,
                    });
                }
            }
        }
    }
    out
}

/// Largest `|Q - S|` relative to the largest `|S|` on the trajectory.
pub fn relative_first_law_residual(traj: &EnergyTrajectory) -> f64 {
    let scale = traj.points.iter().map(|p| p.s.abs()).fold(0.0, f64::max);
    let worst = traj.max_first_law_residual();
    if scale > 0.0 {
        worst / scale
    } else {
        worst
    }
}

fn write_rows<W: Write, R: Serialize>(out: W, rows: &[R]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------- run

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct RunRow {
    #[serde(rename = "L")]
    pub half_side: f64,
    pub seed: u64,
    pub eta: f64,
    pub l: f64,
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
    #[serde(rename = "S_fock")]
    pub s_fock: Option<f64>,
    #[serde(rename = "P_fock")]
    pub p_fock: Option<f64>,
    pub work_fock: Option<f64>,
    #[serde(rename = "Q_fock")]
    pub q_fock: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct ScenarioOutput {
    pub rows: Vec<RunRow>,
    pub checks: Vec<Check>,
}

impl ScenarioOutput {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_rows(out, &self.rows)
    }
}

/// Integrate every `(L, seed, eta, l)` tuple and tabulate the energy balance.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioOutput> {
    cfg.validate()?;
    let opts = options(cfg, false);
    let results = crate::par::map_collect(&tuples(cfg), |tp| -> Result<Vec<RunRow>> {
        let h = disordered_hamiltonian(cfg.dim, tp.half_side, tp.seed, cfg.lambda)?;
        let spec = cfg.spec(tp.eta, tp.l);
        let traj = simulate_trajectory(&h, &spec, cfg.beta, &opts)?;
        let oracle = if cfg.oracle && h.len() <= MAX_FOCK_SITES {
            Some(simulate_many_body_trajectory(&h, &spec, cfg.beta, &opts)?)
        } else {
            None
        };
        Ok(traj
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let f = oracle.as_ref().map(|o| &o.points[i]);
                RunRow {
                    half_side: tp.half_side,
                    seed: tp.seed,
                    eta: tp.eta,
                    l: tp.l,
                    t: p.t,
                    s: p.s,
                    p: p.p,
                    work: p.work,
                    q_rel: p.q_rel,
                    first_law_residual: p.first_law_residual,
                    balance_residual: p.balance_residual,
                    s_fock: f.map(|f| f.s),
                    p_fock: f.map(|f| f.p),
                    work_fock: f.map(|f| f.work),
                    q_fock: f.map(|f| f.q_rel),
                }
            })
            .collect())
    });
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    let max = |f: &dyn Fn(&RunRow) -> f64| rows.iter().map(f).fold(0.0, f64::max);
    let min = |f: &dyn Fn(&RunRow) -> f64| rows.iter().map(f).fold(f64::INFINITY, f64::min);
    let mut checks = vec![
        Check::at_most("first_law_residual", max(&|r| r.first_law_residual), FIRST_LAW_TOLERANCE),
        Check::at_most("balance_residual", max(&|r| r.balance_residual), BALANCE_TOLERANCE),
        Check::at_least("min_Q_rel", min(&|r| r.q_rel), POSITIVITY_FLOOR),
        Check::at_least("min_S", min(&|r| r.s), POSITIVITY_FLOOR),
    ];
    if rows.iter().any(|r| r.s_fock.is_some()) {
        let diff = max(&|r| {
            let pairs = [
                (r.s, r.s_fock),
                (r.p, r.p_fock),
                (r.work, r.work_fock),
                (r.q_rel, r.q_fock),
            ];
            pairs
                .iter()
                .filter_map(|(a, b)| b.map(|b| (a - b).abs()))
                .fold(0.0, f64::max)
        });
        checks.push(Check::at_most("oracle_agreement", diff, ORACLE_TOLERANCE));
    }
    Ok(ScenarioOutput { rows, checks })
}

// ---------------------------------------------------------------- oracle

#[derive(Clone, Debug, Serialize)]
pub struct OracleRow {
    #[serde(rename = "L")]
    pub half_side: f64,
    pub sites: usize,
    pub seed: u64,
    pub eta: f64,
    pub l: f64,
    pub lambda: f64,
    pub beta: f64,
    pub max_diff_s: f64,
    pub max_diff_p: f64,
    pub max_diff_work: f64,
    pub max_diff_q: f64,
    pub max_diff_symbol: f64,
    pub first_law_rel_fock: f64,
    pub first_law_rel_quasifree: f64,
}

#[derive(Clone, Debug)]
pub struct OracleReport {
    pub rows: Vec<OracleRow>,
    pub checks: Vec<Check>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_rows(out, &self.rows)
    }
}

/// Tolerances of the oracle comparison.
#[derive(Clone, Copy, Debug)]
pub struct OracleTolerances {
    pub agreement: f64,
    pub first_law_fock: f64,
    pub first_law_quasifree: f64,
}

impl Default for OracleTolerances {
    fn default() -> Self {
        OracleTolerances {
            agreement: ORACLE_TOLERANCE,
            first_law_fock: 1e-9,
            first_law_quasifree: 1e-8,
        }
    }
}

/// Run the quasi-free and Fock paths on identical inputs and compare.
pub fn crosscheck_oracle(cfg: &ScenarioConfig) -> Result<OracleReport> {
    crosscheck_oracle_with(cfg, OracleTolerances::default())
}

pub fn crosscheck_oracle_with(cfg: &ScenarioConfig, tol: OracleTolerances) -> Result<OracleReport> {
    cfg.validate()?;
    for &half_side in &cfg.half_sides {
        let n = build_box(cfg.dim, half_side)?.len();
        if n > MAX_FOCK_SITES {
            return Err(HeatError::ResourceLimit(format!(
                "oracle needs at most {MAX_FOCK_SITES} sites, box L = {half_side} has {n}"
            )));
        }
    }
    let opts = options(cfg, true);
    let results = crate::par::map_collect(&tuples(cfg), |tp| -> Result<OracleRow> {
        let h = disordered_hamiltonian(cfg.dim, tp.half_side, tp.seed, cfg.lambda)?;
        let spec = cfg.spec(tp.eta, tp.l);
        let qf = simulate_trajectory(&h, &spec, cfg.beta, &opts)?;
        let fk = simulate_many_body_trajectory(&h, &spec, cfg.beta, &opts)?;
        let diff = |f: fn(&crate::quasifree::TrajectoryPoint) -> f64| {
            qf.points
                .iter()
                .zip(&fk.points)
                .map(|(a, b)| (f(a) - f(b)).abs())
                .fold(0.0, f64::max)
        };
        let max_diff_symbol = qf
            .symbols
            .iter()
            .zip(&fk.symbols)
            .map(|(a, b)| max_abs_diff(a, b))
            .fold(0.0, f64::max);
        Ok(OracleRow {
            half_side: tp.half_side,
            sites: h.len(),
            seed: tp.seed,
            eta: tp.eta,
            l: tp.l,
            lambda: cfg.lambda,
            beta: cfg.beta,
            max_diff_s: diff(|p| p.s),
            max_diff_p: diff(|p| p.p),
            max_diff_work: diff(|p| p.work),
            max_diff_q: diff(|p| p.q_rel),
            max_diff_symbol,
            first_law_rel_fock: relative_first_law_residual(&fk),
            first_law_rel_quasifree: relative_first_law_residual(&qf),
        })
    });
    let rows = results.into_iter().collect::<Result<Vec<_>>>()?;
    let worst = |f: fn(&OracleRow) -> f64| rows.iter().map(f).fold(0.0, f64::max);
    let checks = vec![
        Check::at_most("oracle_S", worst(|r| r.max_diff_s), tol.agreement),
        Check::at_most("oracle_P", worst(|r| r.max_diff_p), tol.agreement),
        Check::at_most("oracle_work", worst(|r| r.max_diff_work), tol.agreement),
        Check::at_most("oracle_relative_entropy", worst(|r| r.max_diff_q), tol.agreement),
        Check::at_most("oracle_symbol", worst(|r| r.max_diff_symbol), tol.agreement),
        Check::at_most(
            "first_law_fock_relative",
            worst(|r| r.first_law_rel_fock),
            tol.first_law_fock,
        ),
        Check::at_most(
            "first_law_quasifree_relative",
            worst(|r| r.first_law_rel_quasifree),
            tol.first_law_quasifree,
        ),
    ];
    Ok(OracleReport { rows, checks })
}

// ---------------------------------------------------------------- scaling

#[derive(Clone, Debug, Serialize)]
pub struct ScalingRow {
    pub l: f64,
    #[serde(rename = "L")]
    pub half_side: f64,
    pub eta: f64,
    pub q_mean: f64,
    pub q_min: f64,
    pub q_max: f64,
    /// `q_mean / (eta^2 l^d)`, empty at `eta = 0`.
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScalingFit {
    pub l: f64,
    /// `c0 + c2 eta^2 + c4 eta^4`.
    pub even: PolynomialFit,
    /// All powers up to 4, for the odd-term probe.
    pub full: PolynomialFit,
}

#[derive(Clone, Debug, Serialize)]
pub struct DoublingRow {
    pub l: f64,
    pub eta: f64,
    pub factor: f64,
    /// `Q(2 eta) / Q(eta)` predicted by the full fit.
    pub predicted: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScalingReport {
    pub dim: usize,
    pub reference_eta: f64,
    pub rows: Vec<ScalingRow>,
    pub fits: Vec<ScalingFit>,
    /// `(l, Q / (eta^2 l^d))` at the reference `eta`.
    pub ratios: Vec<(f64, f64)>,
    /// `max / min - 1` over `ratios`.
    pub ratio_spread: f64,
    pub doubling: Vec<DoublingRow>,
    pub checks: Vec<Check>,
}

impl ScalingReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_rows(out, &self.rows)
    }
}

fn scaled_box(cfg: &ScenarioConfig, l: f64) -> f64 {
    match cfg.scaling.padding {
        Some(p) => l + p,
        None => cfg.half_sides[0],
    }
}

/// `Q(t_end)` averaged over seeds for every `(l, eta)`.
fn seed_averaged_heat(cfg: &ScenarioConfig) -> Result<Vec<ScalingRow>> {
    let mut jobs = Vec::new();
    for &l in &cfg.l_grid {
        for &eta in &cfg.eta_grid {
            for &seed in &cfg.seeds {
                jobs.push((l, eta, seed));
            }
        }
    }
    let values = crate::par::map_collect(&jobs, |&(l, eta, seed)| -> Result<f64> {
        let h = disordered_hamiltonian(cfg.dim, scaled_box(cfg, l), seed, cfg.lambda)?;
        heat_at(&h, &cfg.spec(eta, l), cfg.beta, cfg.horizon(), cfg.step())
    });
    let values = values.into_iter().collect::<Result<Vec<f64>>>()?;
    let ns = cfg.seeds.len();
    let mut rows = Vec::new();
    for (i, chunk) in values.chunks(ns).enumerate() {
        let (l, eta, _) = jobs[i * ns];
        let q_mean = chunk.iter().sum::<f64>() / ns as f64;
        let ratio = (eta != 0.0).then(|| q_mean / (eta * eta * l.powi(cfg.dim as i32)));
        rows.push(ScalingRow {
            l,
            half_side: scaled_box(cfg, l),
            eta,
            q_mean,
            q_min: chunk.iter().copied().fold(f64::INFINITY, f64::min),
            q_max: chunk.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            ratio,
        });
    }
    Ok(rows)
}

fn spread(values: &[f64]) -> f64 {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo > 0.0 {
        hi / lo - 1.0
    } else {
        f64::INFINITY
    }
}

/// Fit `Q(eta)` per `l` and compare `Q / (eta^2 l^d)` across `l`.
pub fn scaling_sweep(cfg: &ScenarioConfig) -> Result<ScalingReport> {
    cfg.validate()?;
    if cfg.eta_grid.len() < 4 {
        return invalid("scaling sweep needs at least 4 eta values");
    }
    if cfg.l_grid.len() < 3 {
        return invalid("scaling sweep needs at least 3 l values");
    }
    if !(cfg.dim == 1 || cfg.dim == 2) {
        return invalid("scaling sweep supports d = 1 or 2");
    }
    let distinct_sq = {
        let mut sq: Vec<f64> = cfg.eta_grid.iter().map(|e| e * e).collect();
        sq.sort_by(f64::total_cmp);
        sq.dedup_by(|a, b| (*a - *b).abs() <= 1e-15);
        sq.len()
    };
    if distinct_sq < 3 {
        return invalid("scaling sweep needs at least 3 distinct |eta| values");
    }
    let reference_eta = match cfg.scaling.reference_eta {
        Some(e) => e,
        None => cfg
            .eta_grid
            .iter()
            .copied()
            .filter(|&e| e > 0.0)
            .fold(f64::INFINITY, f64::min),
    };
    if !cfg.eta_grid.iter().any(|&e| (e - reference_eta).abs() <= 1e-12) {
        return invalid(format!("reference eta {reference_eta} is not on the grid"));
    }
    let rows = seed_averaged_heat(cfg)?;
    let eta_max = cfg.eta_grid.iter().fold(0.0f64, |m, e| m.max(e.abs()));

    let mut fits = Vec::new();
    let mut ratios = Vec::new();
    let mut doubling = Vec::new();
    let mut checks = Vec::new();
    for &l in &cfg.l_grid {
        let sel: Vec<&ScalingRow> = rows.iter().filter(|r| r.l == l).collect();
        let x: Vec<f64> = sel.iter().map(|r| r.eta).collect();
        let y: Vec<f64> = sel.iter().map(|r| r.q_mean).collect();
        let even = fit_powers(&x, &y, &[0, 2, 4][..distinct_sq.min(3)])?;
        let full = fit_polynomial(&x, &y, 4.min(x.len() - 1))?;
        let c2 = even.coefficient(2);
        checks.push(Check::at_most(
            format!("c0[l={l}]"),
            full.coefficient(0).abs(),
            1e-10,
        ));
        checks.push(Check::at_most(
            format!("c1[l={l}]"),
            full.coefficient(1).abs(),
            1e-6 * c2.abs() * eta_max,
        ));
        if let Some(r) = sel.iter().find(|r| (r.eta - reference_eta).abs() <= 1e-12) {
            ratios.push((l, r.ratio.unwrap_or(f64::NAN)));
        }
        // Beyond-quadratic part of the full fit; the cubic term is not
        // excluded by symmetry, only the constant and linear ones are.
        let beyond = |e: f64| -> f64 {
            (2..full.coefficients.len())
                .map(|k| full.coefficient(k) * e.powi(k as i32))
                .sum()
        };
        for a in sel.iter().filter(|r| r.eta > 0.0) {
            if let Some(b) = sel.iter().find(|r| (r.eta - 2.0 * a.eta).abs() <= 1e-12) {
                doubling.push(DoublingRow {
                    l,
                    eta: a.eta,
                    factor: b.q_mean / a.q_mean,
                    predicted: beyond(b.eta) / beyond(a.eta),
                });
            }
        }
        fits.push(ScalingFit { l, even, full });
    }
    let ratio_values: Vec<f64> = ratios.iter().map(|r| r.1).collect();
    let ratio_spread = spread(&ratio_values);
    checks.push(Check::at_most(
        "ratio_spread",
        ratio_spread,
        cfg.scaling.ratio_tolerance,
    ));
    for d in &doubling {
        // The factor may leave 4 only by as much as the fitted higher orders allow.
        checks.push(Check::at_most(
            format!("doubling[l={},eta={}]", d.l, d.eta),
            (d.factor - 4.0).abs(),
            2.0 * (d.predicted - 4.0).abs() + 1e-9,
        ));
    }
    Ok(ScalingReport {
        dim: cfg.dim,
        reference_eta,
        rows,
        fits,
        ratios,
        ratio_spread,
        doubling,
        checks,
    })
}

// ---------------------------------------------------------------- taylor

#[derive(Clone, Debug, Serialize)]
pub struct TaylorRow {
    pub l: f64,
    pub order: usize,
    pub estimate: f64,
    pub std_error: f64,
    pub rms_residual: f64,
    /// `estimate / l^d`.
    pub normalized: f64,
    pub condition: f64,
    pub ill_conditioned: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct TaylorReport {
    pub order: usize,
    pub rows: Vec<TaylorRow>,
    /// `max / min - 1` of `|normalized|` across `l`.
    pub normalized_spread: f64,
    pub warnings: Vec<String>,
    pub checks: Vec<Check>,
}

impl TaylorReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_rows(out, &self.rows)
    }
}

/// `d^m Q / d eta^m` at `eta = 0` from a degree `m + 2` least-squares fit.
pub fn taylor_estimate(cfg: &ScenarioConfig, m: usize) -> Result<TaylorReport> {
    cfg.validate()?;
    check_taylor_grid(&cfg.eta_grid, m)?;
    let rows_q = seed_averaged_heat(cfg)?;
    taylor_from_rows(cfg, &rows_q, m)
}

fn check_taylor_grid(etas: &[f64], m: usize) -> Result<()> {
    if m > 6 {
        return invalid(format!("Taylor order {m} exceeds 6"));
    }
    for &e in etas {
        if !etas.iter().any(|&f| (e + f).abs() <= 1e-12) {
            return invalid("Taylor estimate needs an eta grid symmetric about 0");
        }
    }
    let degree = m + 2;
    if etas.len() < degree + 1 {
        return invalid(format!(
            "degree {degree} fit needs at least {} eta values",
            degree + 1
        ));
    }
    Ok(())
}

/// [`taylor_estimate`] on an already computed `Q` grid, e.g. a scaling report's rows.
pub fn taylor_from_rows(
    cfg: &ScenarioConfig,
    rows_q: &[ScalingRow],
    m: usize,
) -> Result<TaylorReport> {
    check_taylor_grid(&cfg.eta_grid, m)?;
    let degree = m + 2;
    let factorial: f64 = (1..=m).map(|k| k as f64).product();
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for &l in &cfg.l_grid {
        let sel: Vec<&ScalingRow> = rows_q.iter().filter(|r| r.l == l).collect();
        let x: Vec<f64> = sel.iter().map(|r| r.eta).collect();
        let y: Vec<f64> = sel.iter().map(|r| r.q_mean).collect();
        let fit = fit_polynomial(&x, &y, degree)?;
        if fit.ill_conditioned {
            warnings.push(format!(
                "l = {l}: fit condition number {:.3e} exceeds threshold",
                fit.condition
            ));
        }
        let estimate = factorial * fit.coefficient(m);
        rows.push(TaylorRow {
            l,
            order: m,
            estimate,
            std_error: factorial * fit.std_errors.get(m).copied().unwrap_or(0.0),
            rms_residual: fit.rms_residual,
            normalized: estimate / l.powi(cfg.dim as i32),
            condition: fit.condition,
            ill_conditioned: fit.ill_conditioned,
        });
    }
    let normalized: Vec<f64> = rows.iter().map(|r| r.normalized.abs()).collect();
    let normalized_spread = spread(&normalized);
    let mut checks = Vec::new();
    if m <= 1 {
        for r in &rows {
            // Zero within three standard errors (or roundoff when the fit is exact).
            let tol = 3.0 * r.std_error + 1e-12;
            checks.push(Check::at_most(
                format!("vanishing[l={}]", r.l),
                r.estimate.abs(),
                tol,
            ));
        }
    } else {
        checks.push(Check::at_most(
            "normalized_spread",
            normalized_spread,
            cfg.scaling.ratio_tolerance,
        ));
    }
    Ok(TaylorReport {
        order: m,
        rows,
        normalized_spread,
        warnings,
        checks,
    })
}

// ---------------------------------------------------------------- thermolimit

#[derive(Clone, Debug, Serialize)]
pub struct ThermoRow {
    #[serde(rename = "L")]
    pub half_side: f64,
    pub sites: usize,
    #[serde(rename = "Q")]
    pub q: f64,
    /// `|Q(L) - Q(previous L)|`, empty on the first row.
    pub difference: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ThermoReport {
    pub rows: Vec<ThermoRow>,
    pub strictly_decreasing: bool,
    /// `(L_max + 1, |Q(L_max + 1) - Q(L_max)|)`.
    pub locality_shift: (f64, f64),
    pub checks: Vec<Check>,
}

impl ThermoReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_rows(out, &self.rows)
    }
}

/// `Q^(L)(t_end)` along the configured box sizes with the field held fixed.
pub fn thermolimit_sweep(cfg: &ScenarioConfig) -> Result<ThermoReport> {
    cfg.validate()?;
    let ls = &cfg.half_sides;
    if ls.len() < 3 {
        return invalid("thermodynamic-limit sweep needs at least 3 box sizes");
    }
    if ls.windows(2).any(|w| w[1] <= w[0]) {
        return invalid("box sizes must be strictly increasing");
    }
    let seed = cfg.seeds[0];
    let spec = cfg.spec(cfg.eta_grid[0], cfg.l_grid[0]);
    let l_max = *ls.last().expect("nonempty");
    let mut sizes = ls.clone();
    sizes.push(l_max + 1.0);
    let qs = crate::par::map_collect(&sizes, |&half_side| -> Result<(usize, f64)> {
        let h = disordered_hamiltonian(cfg.dim, half_side, seed, cfg.lambda)?;
        Ok((h.len(), heat_at(&h, &spec, cfg.beta, cfg.horizon(), cfg.step())?))
    });
    let qs = qs.into_iter().collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (i, &half_side) in ls.iter().enumerate() {
        rows.push(ThermoRow {
            half_side,
            sites: qs[i].0,
            q: qs[i].1,
            difference: (i > 0).then(|| (qs[i].1 - qs[i - 1].1).abs()),
        });
    }
    let diffs: Vec<f64> = rows.iter().filter_map(|r| r.difference).collect();
    let strictly_decreasing = diffs.windows(2).all(|w| w[1] < w[0]);
    let shift = (qs[ls.len()].1 - qs[ls.len() - 1].1).abs();
    let last = *diffs.last().expect("at least two differences");
    let checks = vec![
        Check::flag("differences_strictly_decreasing", strictly_decreasing),
        Check::at_most("locality_shift", shift, last),
    ];
    Ok(ThermoReport {
        rows,
        strictly_decreasing,
        locality_shift: (l_max + 1.0, shift),
        checks,
    })
}

// ---------------------------------------------------------------- dissipation

#[derive(Clone, Debug, Serialize)]
pub struct DissipationRow {
    pub t: f64,
    /// Internal-energy increment on the whole box.
    #[serde(rename = "S")]
    pub s_total: f64,
    /// Increment restricted to the observation box.
    #[serde(rename = "S_obs")]
    pub s_obs: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DissipationReport {
    pub rows: Vec<DissipationRow>,
    pub peak_obs: f64,
    pub final_obs: f64,
    /// `|S_obs(t_end)| / max |S_obs|`.
    pub decay_ratio: f64,
    /// `max_{t >= t1} |S(t) - S(t1)|`.
    pub plateau_drift: f64,
    pub checks: Vec<Check>,
}

impl DissipationReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_rows(out, &self.rows)
    }
}

/// Local internal energy on a small box around the field for a clean potential.
pub fn dissipation_probe(cfg: &ScenarioConfig) -> Result<DissipationReport> {
    cfg.validate()?;
    let dc = &cfg.dissipation;
    let lattice = build_box(cfg.dim, cfg.half_sides[0])?;
    let obs = LatticeBox::new(cfg.dim, dc.observation_half_side)?;
    if !lattice.contains(&obs) {
        return invalid("observation box exceeds the simulation box");
    }
    if !(dc.tail > 0.0 && dc.sample_every > 0.0) {
        return invalid("dissipation tail and sampling interval must be positive");
    }
    let omega = DisorderField::constant(&lattice, dc.constant_potential)?;
    let h = hamiltonian(&lattice, &omega, cfg.lambda)?;
    let spec = cfg.spec(cfg.eta_grid[0], cfg.l_grid[0]);
    let (_, dt) = crate::onebody::subdivide(spec.t0, spec.t1, cfg.step())?;
    let every = ((dc.sample_every / dt).round() as usize).max(1);
    let opts = TrajectoryOptions {
        step: cfg.step(),
        horizon: spec.t1,
        record_every: every,
        keep_symbols: true,
    };
    let traj = simulate_trajectory(&h, &spec, cfg.beta, &opts)?;
    let d0 = fermi_symbol(&h, cfg.beta)?;
    let idx: Vec<usize> = obs
        .sites()
        .map(|x| lattice.index(&x).expect("observation box inside"))
        .collect();
    let hm = h.entries();
    let h_obs = restrict_matrix(hm, &idx);
    let d_obs0 = restrict_matrix(d0.entries(), &idx);
    let local = |d: &CMatrix| -> f64 {
        let delta = restrict_matrix(d, &idx) - &d_obs0;
        crate::linalg::trace_product(&h_obs, &delta).re
    };
    let total = |d: &CMatrix| -> f64 {
        crate::linalg::trace_product(hm, &(d - d0.entries())).re
    };
    let mut rows: Vec<DissipationRow> = traj
        .points
        .iter()
        .zip(&traj.symbols)
        .map(|(p, d)| DissipationRow {
            t: p.t,
            s_total: p.s,
            s_obs: if p.t <= spec.t0 { 0.0 } else { local(d) },
        })
        .collect();
    let d1 = traj.symbols.last().expect("trajectory recorded").clone();
    let s1 = total(&d1);
    let eig = Eigh::new(hm);
    let n_tail = (dc.tail / dc.sample_every - 1e-9).ceil() as usize;
    let tail_times: Vec<f64> = (1..=n_tail)
        .map(|k| (spec.t1 + k as f64 * dc.sample_every).min(spec.t1 + dc.tail))
        .collect();
    let tail_rows = crate::par::map_collect(&tail_times, |&t| {
        let d = conjugate(&eig.exp_i(t - spec.t1), &d1);
        DissipationRow {
            t,
            s_total: total(&d),
            s_obs: local(&d),
        }
    });
    rows.extend(tail_rows);
    let peak_obs = rows.iter().map(|r| r.s_obs.abs()).fold(0.0, f64::max);
    let final_obs = rows.last().map(|r| r.s_obs.abs()).unwrap_or(0.0);
    let decay_ratio = if peak_obs > 0.0 { final_obs / peak_obs } else { 0.0 };
    let plateau_drift = rows
        .iter()
        .filter(|r| r.t >= spec.t1)
        .map(|r| (r.s_total - s1).abs())
        .fold(0.0, f64::max);
    let checks = vec![
        Check::at_most("local_decay_ratio", decay_ratio, dc.decay_tolerance),
        Check::at_most("plateau_drift", plateau_drift, FIRST_LAW_TOLERANCE),
    ];
    Ok(DissipationReport {
        rows,
        peak_obs,
        final_obs,
        decay_ratio,
        plateau_drift,
        checks,
    })
}

// ---------------------------------------------------------------- decay

#[derive(Clone, Debug, Serialize)]
pub struct DecayStudyReport {
    pub epsilon: f64,
    pub window: f64,
    /// Fitted constant including the safety margin.
    pub constant: f64,
    pub fit_correlation_max: f64,
    pub fit_tree_max: f64,
    pub heldout_correlation_max: f64,
    pub heldout_tree_max: f64,
    /// Envelope of all propagator profiles against the fitted bound.
    pub profile: Vec<DecayRow>,
    pub heldout_samples: Vec<DecaySampleResult>,
    pub checks: Vec<Check>,
}

impl DecayStudyReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_rows(out, &self.profile)
    }

    pub fn write_samples_csv<W: Write>(&self, out: W) -> Result<()> {
        write_rows(out, &self.heldout_samples)
    }
}

struct DecayRun {
    corr: f64,
    tree: f64,
    profiles: Vec<DecayReport>,
    samples: Vec<DecaySampleResult>,
}

fn decay_run(cfg: &ScenarioConfig, lambda: f64, seed: u64, times: &[f64]) -> Result<DecayRun> {
    let dc = &cfg.decay;
    let h = disordered_hamiltonian(cfg.dim, cfg.half_sides[0], seed, lambda)?;
    let mut profiles = Vec::with_capacity(times.len());
    for &t in times {
        profiles.push(correlation_decay_profile(&h, t, cfg.epsilon)?);
    }
    let corr = profiles.iter().map(|p| p.constant).fold(0.0, f64::max);
    let d = fermi_symbol(&h, cfg.beta)?;
    let mut samples = Vec::new();
    for &order in &dc.orders {
        let tuples = sample_decay_tuples(
            h.lattice(),
            order,
            0.0,
            dc.window,
            dc.samples_per_order,
            seed.wrapping_mul(31).wrapping_add(order as u64),
        );
        let rep = check_tree_decay_bound(&d, &h, cfg.epsilon, 0.0, dc.window, &tuples)?;
        samples.extend(rep.samples);
    }
    let tree = samples.iter().map(|s| s.constant).fold(0.0, f64::max);
    Ok(DecayRun {
        corr,
        tree,
        profiles,
        samples,
    })
}

/// Fit one constant on training seeds and times, then test it on held-out ones.
pub fn decay_study(cfg: &ScenarioConfig) -> Result<DecayStudyReport> {
    cfg.validate()?;
    let dc = &cfg.decay;
    if dc.lambdas.is_empty() || dc.fit_seeds.is_empty() || dc.heldout_seeds.is_empty() {
        return invalid("decay study needs disorder strengths, fit seeds and held-out seeds");
    }
    if dc.fit_time_points < 2 || !(dc.window > 0.0) {
        return invalid("decay study needs a positive window and at least 2 fit times");
    }
    if dc.orders.iter().any(|&n| n < 2) {
        return invalid("multi-commutator orders start at 2");
    }
    let fit_times: Vec<f64> = (0..dc.fit_time_points)
        .map(|k| dc.window * k as f64 / (dc.fit_time_points - 1) as f64)
        .collect();
    let mut fit_jobs = Vec::new();
    let mut held_jobs = Vec::new();
    for &lambda in &dc.lambdas {
        for &seed in &dc.fit_seeds {
            fit_jobs.push((lambda, seed));
        }
        for &seed in &dc.heldout_seeds {
            held_jobs.push((lambda, seed));
        }
    }
    let fit = crate::par::map_collect(&fit_jobs, |&(lambda, seed)| {
        decay_run(cfg, lambda, seed, &fit_times)
    });
    let fit = fit.into_iter().collect::<Result<Vec<_>>>()?;
    let held = crate::par::map_collect(&held_jobs, |&(lambda, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_7175);
        let times: Vec<f64> = (0..dc.heldout_times_per_seed)
            .map(|_| rng.random_range(0.0..=dc.window))
            .collect();
        decay_run(cfg, lambda, seed, &times)
    });
    let held = held.into_iter().collect::<Result<Vec<_>>>()?;

    let fit_correlation_max = fit.iter().map(|r| r.corr).fold(0.0, f64::max);
    let fit_tree_max = fit.iter().map(|r| r.tree).fold(0.0, f64::max);
    let constant = fit_correlation_max.max(fit_tree_max) * (1.0 + dc.margin);
    let heldout_correlation_max = held.iter().map(|r| r.corr).fold(0.0, f64::max);
    let heldout_tree_max = held.iter().map(|r| r.tree).fold(0.0, f64::max);

    let mut profile: Vec<DecayRow> = Vec::new();
    for report in fit.iter().chain(&held).flat_map(|r| &r.profiles) {
        if profile.is_empty() {
            profile = report.rows.clone();
        } else {
            for (acc, row) in profile.iter_mut().zip(&report.rows) {
                acc.max_amplitude = acc.max_amplitude.max(row.max_amplitude);
            }
        }
    }
    for row in &mut profile {
        row.bound_value =
            constant / crate::onebody::decay_weight(row.separation, cfg.dim, cfg.epsilon);
    }
    let heldout_samples: Vec<DecaySampleResult> =
        held.into_iter().flat_map(|r| r.samples).collect();
    let tree_ok = heldout_samples.iter().all(|s| {
        s.expectation <= constant.powi(s.order as i32 - 1) * s.envelope * (1.0 + 1e-12)
    });
    let checks = vec![
        Check::at_most("heldout_correlation", heldout_correlation_max, constant),
        Check::at_most("heldout_tree", heldout_tree_max, constant),
        Check::flag("heldout_tree_samples_dominated", tree_ok),
    ];
    Ok(DecayStudyReport {
        epsilon: cfg.epsilon,
        window: dc.window,
        constant,
        fit_correlation_max,
        fit_tree_max,
        heldout_correlation_max,
        heldout_tree_max,
        profile,
        heldout_samples,
        checks,
    })
}

// ---------------------------------------------------------------- series

#[derive(Clone, Debug, Serialize)]
pub struct DysonRow {
    pub order: usize,
    pub eta: f64,
    pub error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SeriesStudyReport {
    pub series: HeatSeriesReport,
    /// `Q(t_end)` from the integrated symbol.
    pub direct: f64,
    pub difference: f64,
    /// `|term_{k+1}| / |term_k|` for `k >= 2`.
    pub term_ratios: Vec<f64>,
    pub dyson: Vec<DysonRow>,
    /// `(K, fitted log-log slope)`.
    pub dyson_slopes: Vec<(usize, f64)>,
    pub checks: Vec<Check>,
}

impl SeriesStudyReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        self.series.write_csv(out)
    }

    pub fn write_dyson_csv<W: Write>(&self, out: W) -> Result<()> {
        write_rows(out, &self.dyson)
    }
}

/// Distance of the truncated Dyson-Phillips propagator from a fine reference.
pub fn dyson_errors(cfg: &ScenarioConfig) -> Result<(Vec<DysonRow>, Vec<(usize, f64)>)> {
    let sc = &cfg.series;
    let h = disordered_hamiltonian(cfg.dim, sc.dyson_half_side, cfg.seeds[0], cfg.lambda)?;
    let l = cfg.l_grid[0].min(sc.dyson_half_side);
    let (t0, t1) = (cfg.potential.t0, cfg.potential.t1);
    let ref_step = (t1 - t0) / sc.dyson_reference_steps.max(1) as f64;
    let mut jobs = Vec::new();
    for &k in &sc.dyson_orders {
        for &eta in &sc.dyson_etas {
            jobs.push((k, eta));
        }
    }
    let rows = crate::par::map_collect(&jobs, |&(k, eta)| -> Result<DysonRow> {
        let spec = cfg.spec(eta, l);
        let exact = driven_propagator(&h, &spec, t0, t1, ref_step)?;
        let approx = dyson_phillips_propagator(&h, &spec, t0, t1, k, sc.intervals)?;
        Ok(DysonRow {
            order: k,
            eta,
            error: max_abs_diff(exact.entries(), &approx),
        })
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let mut slopes = Vec::new();
    for &k in &sc.dyson_orders {
        let sel: Vec<&DysonRow> = rows.iter().filter(|r| r.order == k).collect();
        let x: Vec<f64> = sel.iter().map(|r| r.eta).collect();
        let y: Vec<f64> = sel.iter().map(|r| r.error).collect();
        slopes.push((k, log_log_slope(&x, &y)?));
    }
    Ok((rows, slopes))
}

/// Truncated heat series against the directly integrated `Q`, plus the
/// Dyson-Phillips order check.
pub fn series_study(cfg: &ScenarioConfig) -> Result<SeriesStudyReport> {
    cfg.validate()?;
    let h = disordered_hamiltonian(cfg.dim, cfg.half_sides[0], cfg.seeds[0], cfg.lambda)?;
    let spec = cfg.spec(cfg.eta_grid[0], cfg.l_grid[0]);
    let t = cfg.horizon();
    let d = fermi_symbol(&h, cfg.beta)?;
    let series = heat_series_sum(
        cfg.truncation_order,
        cfg.series.intervals,
        t,
        &h,
        &d,
        &spec,
        SeriesEvaluator::Nested,
    )?;
    let direct = heat_at(&h, &spec, cfg.beta, t, cfg.step())?;
    let difference = (series.total - direct).abs();
    let term_ratios: Vec<f64> = series
        .orders
        .windows(2)
        .skip(1)
        .map(|w| w[1].abs() / w[0].abs())
        .collect();
    let (dyson, dyson_slopes) = dyson_errors(cfg)?;
    let mut checks = vec![Check::at_most("series_vs_direct", difference, 1e-6)];
    for (i, r) in term_ratios.iter().enumerate() {
        checks.push(Check::at_most(format!("term_ratio[{}]", i + 3), *r, 1.0));
    }
    for &(k, slope) in &dyson_slopes {
        checks.push(Check::at_most(
            format!("dyson_slope[K={k}]"),
            (slope - (k as f64 + 1.0)).abs(),
            0.2,
        ));
    }
    Ok(SeriesStudyReport {
        series,
        direct,
        difference,
        term_ratios,
        dyson,
        dyson_slopes,
        checks,
    })
}

