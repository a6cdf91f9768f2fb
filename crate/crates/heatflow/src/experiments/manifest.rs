// SPDX-License-Identifier: Apache-2.0

use std::path::Path;

use serde::Serialize;

use crate::error::Result;

use super::config::ScenarioConfig;

/// Outcome of one self-check.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub tolerance: f64,
}

impl Check {
    /// Passes when `value <= tolerance`.
    pub fn at_most(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            passed: value <= tolerance,
            value,
            tolerance,
        }
    }

    /// Passes when `value >= tolerance`.
    pub fn at_least(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            passed: value >= tolerance,
            value,
            tolerance,
        }
    }

    pub fn flag(name: impl Into<String>, passed: bool) -> Self {
        Check {
            name: name.into(),
            passed,
            value: if passed { 1.0 } else { 0.0 },
            tolerance: 1.0,
        }
    }
}

/// Reproducibility record written next to every output file.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub schema_version: u32,
    pub command: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub step: f64,
    pub integrator_steps: usize,
    pub quadrature_nodes: usize,
    pub parallel: bool,
    pub outputs: Vec<String>,
    pub checks: Vec<Check>,
}

impl RunManifest {
    pub fn new(command: &str, cfg: &ScenarioConfig) -> Result<Self> {
        let span = cfg.horizon() - cfg.potential.t0;
        let window = cfg.potential.t1 - cfg.potential.t0;
        let m = (window / cfg.step() - 1e-9).ceil().max(1.0);
        let dt = window / m;
        Ok(RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            schema_version: cfg.schema_version,
            command: command.to_string(),
            config_hash: cfg.hash()?,
            seeds: cfg.seeds.clone(),
            step: dt,
            integrator_steps: (span / dt - 1e-9).ceil().max(0.0) as usize,
            quadrature_nodes: cfg.potential.quadrature_nodes,
            parallel: crate::par::parallel_enabled(),
            outputs: Vec::new(),
            checks: Vec::new(),
        })
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }
}
