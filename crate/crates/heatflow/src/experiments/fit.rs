// SPDX-License-Identifier: Apache-2.0

//! Least-squares fits used by the sweeps.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{invalid, Result};

/// Condition numbers above this are flagged as unreliable.
pub const CONDITION_WARNING: f64 = 1e12;

#[derive(Clone, Debug, Serialize)]
pub struct PolynomialFit {
    /// Coefficients of `1, x, x^2, ...`.
    pub coefficients: Vec<f64>,
    /// Standard errors; zero when the fit has no residual degrees of freedom.
    pub std_errors: Vec<f64>,
    pub rms_residual: f64,
    pub condition: f64,
    pub ill_conditioned: bool,
}

impl PolynomialFit {
    pub fn coefficient(&self, k: usize) -> f64 {
        self.coefficients.get(k).copied().unwrap_or(0.0)
    }
}

/// Least-squares polynomial of degree `degree` on the listed powers.
///
/// `x` is rescaled to `[-1, 1]` before solving so the normal equations stay
/// tame for small abscissae; coefficients are mapped back afterwards.
pub fn fit_polynomial(x: &[f64], y: &[f64], degree: usize) -> Result<PolynomialFit> {
    fit_powers(x, y, &(0..=degree).collect::<Vec<_>>())
}

/// Least squares on an explicit set of monomial powers.
pub fn fit_powers(x: &[f64], y: &[f64], powers: &[usize]) -> Result<PolynomialFit> {
    if x.len() != y.len() {
        return invalid("fit abscissae and ordinates differ in length");
    }
    if powers.is_empty() {
        return invalid("fit needs at least one basis function");
    }
    if x.len() < powers.len() {
        return invalid(format!(
            "{} points cannot determine {} coefficients",
            x.len(),
            powers.len()
        ));
    }
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let n = x.len();
    let p = powers.len();
    let a = DMatrix::from_fn(n, p, |i, j| (x[i] / scale).powi(powers[j] as i32));
    let b = DVector::from_column_slice(y);
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    let sol = svd
        .solve(&b, smax * 1e-15)
        .map_err(|e| crate::error::HeatError::NumericInconsistency(e.to_string()))?;
    let resid = &a * &sol - &b;
    let ssr = resid.norm_squared();
    let rms_residual = (ssr / n as f64).sqrt();
    let dof = n - p;
    let std_scaled: Vec<f64> = if dof > 0 {
        let sigma2 = ssr / dof as f64;
        match (a.transpose() * &a).try_inverse() {
            Some(cov) => (0..p).map(|j| (sigma2 * cov[(j, j)]).max(0.0).sqrt()).collect(),
            None => vec![f64::INFINITY; p],
        }
    } else {
        vec![0.0; p]
    };
    let max_power = powers.iter().copied().max().unwrap_or(0);
    let mut coefficients = vec![0.0; max_power + 1];
    let mut std_errors = vec![0.0; max_power + 1];
    for (j, &k) in powers.iter().enumerate() {
        let f = scale.powi(k as i32);
        coefficients[k] = sol[j] / f;
        std_errors[k] = std_scaled[j] / f;
    }
    Ok(PolynomialFit {
        coefficients,
        std_errors,
        rms_residual,
        condition,
        ill_conditioned: condition > CONDITION_WARNING,
    })
}

/// Slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.iter().chain(y).any(|&v| !(v > 0.0)) {
        return invalid("log-log slope needs positive data");
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let fit = fit_powers(&lx, &ly, &[0, 1])?;
    Ok(fit.coefficient(1))
}
