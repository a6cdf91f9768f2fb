// SPDX-License-Identifier: Apache-2.0

//! Versioned JSON scenario configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HeatError, Result};
use crate::lattice::{Profile, VectorPotentialSpec};

pub const SCHEMA_VERSION: u32 = 1;

fn schema() -> u32 {
    SCHEMA_VERSION
}
fn one_usize() -> usize {
    1
}
fn one_f64() -> f64 {
    1.0
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_order() -> usize {
    3
}
fn default_nodes() -> usize {
    16
}
fn default_t1() -> f64 {
    2.0
}

/// Field profiles and switching window; `eta` and `l` come from the grids.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialConfig {
    #[serde(default)]
    pub time_profile: Profile,
    #[serde(default)]
    pub space_profile: Profile,
    /// Unit vector; defaults to the first axis.
    #[serde(default)]
    pub direction: Option<Vec<f64>>,
    #[serde(default)]
    pub t0: f64,
    #[serde(default = "default_t1")]
    pub t1: f64,
    #[serde(default = "default_nodes")]
    pub quadrature_nodes: usize,
}

impl Default for PotentialConfig {
    fn default() -> Self {
        PotentialConfig {
            time_profile: Profile::Bump,
            space_profile: Profile::Bump,
            direction: None,
            t0: 0.0,
            t1: default_t1(),
            quadrature_nodes: default_nodes(),
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    /// Integrator step; defaults to `(t1 - t0) / 400`.
    #[serde(default)]
    pub step: Option<f64>,
    /// Last time of the trajectory; defaults to `t1`.
    #[serde(default)]
    pub horizon: Option<f64>,
    /// Record every k-th grid point; defaults to 1.
    #[serde(default)]
    pub record_every: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaylorConfig {
    /// Derivative order `m` estimated by `taylor`.
    #[serde(default = "two")]
    pub order: usize,
}

fn two() -> usize {
    2
}

impl Default for TaylorConfig {
    fn default() -> Self {
        TaylorConfig { order: 2 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingConfig {
    /// `eta` at which `Q / (eta^2 l^d)` is compared; defaults to the smallest positive grid value.
    #[serde(default)]
    pub reference_eta: Option<f64>,
    /// Allowed `max/min - 1` of the ratio across `l`.
    #[serde(default = "quarter")]
    pub ratio_tolerance: f64,
    /// When set, the box for scale `l` has half side `l + padding` instead of `half_sides[0]`.
    #[serde(default)]
    pub padding: Option<f64>,
}

fn quarter() -> f64 {
    0.25
}

impl Default for ScalingConfig {
    fn default() -> Self {
        ScalingConfig {
            reference_eta: None,
            ratio_tolerance: quarter(),
            padding: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DissipationConfig {
    pub observation_half_side: f64,
    /// Site-independent potential value in `[-1, 1]`.
    pub constant_potential: f64,
    /// Observation time after `t1`.
    pub tail: f64,
    pub sample_every: f64,
    /// Allowed ratio of the final to the peak observation-box increment.
    pub decay_tolerance: f64,
}

impl Default for DissipationConfig {
    fn default() -> Self {
        DissipationConfig {
            observation_half_side: 4.0,
            constant_potential: 0.5,
            tail: 40.0,
            sample_every: 0.5,
            decay_tolerance: 0.2,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecayConfig {
    pub lambdas: Vec<f64>,
    pub fit_seeds: Vec<u64>,
    pub heldout_seeds: Vec<u64>,
    /// Window `[0, T]` of propagation times.
    pub window: f64,
    pub fit_time_points: usize,
    pub heldout_times_per_seed: usize,
    pub orders: Vec<usize>,
    pub samples_per_order: usize,
    /// Relative safety margin added to the fitted constant.
    pub margin: f64,
}

impl Default for DecayConfig {
    fn default() -> Self {
        DecayConfig {
            lambdas: vec![0.0, 0.5, 1.0],
            fit_seeds: (0..30).collect(),
            heldout_seeds: (1000..1030).collect(),
            window: 2.0,
            fit_time_points: 41,
            heldout_times_per_seed: 8,
            orders: vec![2, 3, 4],
            samples_per_order: 4,
            margin: 0.05,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesConfig {
    /// Subintervals of the shared simplex grid.
    pub intervals: usize,
    /// Box half side for the Dyson-Phillips order check.
    pub dyson_half_side: f64,
    pub dyson_etas: Vec<f64>,
    pub dyson_orders: Vec<usize>,
    /// Steps of the reference propagator over the field window.
    pub dyson_reference_steps: usize,
}

impl Default for SeriesConfig {
    fn default() -> Self {
        SeriesConfig {
            intervals: 400,
            dyson_half_side: 4.0,
            dyson_etas: vec![0.02, 0.04, 0.08, 0.16, 0.32],
            dyson_orders: vec![1, 2],
            dyson_reference_steps: 4000,
        }
    }
}

/// Everything a CLI run needs.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "schema")]
    pub schema_version: u32,
    #[serde(default = "one_usize")]
    pub dim: usize,
    /// Box half sides `L`.
    pub half_sides: Vec<f64>,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default = "one_f64")]
    pub beta: f64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub potential: PotentialConfig,
    pub eta_grid: Vec<f64>,
    pub l_grid: Vec<f64>,
    #[serde(default)]
    pub time: TimeConfig,
    #[serde(default = "default_order")]
    pub truncation_order: usize,
    #[serde(default = "one_f64")]
    pub epsilon: f64,
    #[serde(default)]
    pub output_dir: Option<String>,
    #[serde(default)]
    pub oracle: bool,
    #[serde(default)]
    pub taylor: TaylorConfig,
    #[serde(default)]
    pub scaling: ScalingConfig,
    #[serde(default)]
    pub dissipation: DissipationConfig,
    #[serde(default)]
    pub decay: DecayConfig,
    #[serde(default)]
    pub series: SeriesConfig,
}

impl ScenarioConfig {
    /// A one-point scenario with default field and time settings.
    pub fn new(dim: usize, half_side: f64, lambda: f64, beta: f64, eta: f64, l: f64) -> Self {
        ScenarioConfig {
            schema_version: SCHEMA_VERSION,
            dim,
            half_sides: vec![half_side],
            lambda,
            beta,
            seeds: default_seeds(),
            potential: PotentialConfig::default(),
            eta_grid: vec![eta],
            l_grid: vec![l],
            time: TimeConfig::default(),
            truncation_order: default_order(),
            epsilon: 1.0,
            output_dir: None,
            oracle: false,
            taylor: TaylorConfig::default(),
            scaling: ScalingConfig::default(),
            dissipation: DissipationConfig::default(),
            decay: DecayConfig::default(),
            series: SeriesConfig::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ScenarioConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// SHA-256 of the canonical JSON serialisation.
    pub fn hash(&self) -> Result<String> {
        let bytes = serde_json::to_vec(self)?;
        let digest = Sha256::digest(&bytes);
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn step(&self) -> f64 {
        self.time
            .step
            .unwrap_or((self.potential.t1 - self.potential.t0) / 400.0)
    }

    pub fn horizon(&self) -> f64 {
        self.time.horizon.unwrap_or(self.potential.t1)
    }

    pub fn record_every(&self) -> usize {
        self.time.record_every.unwrap_or(1)
    }

    pub fn spec(&self, eta: f64, l: f64) -> VectorPotentialSpec {
        let p = &self.potential;
        let direction = p.direction.clone().unwrap_or_else(|| {
            let mut e = vec![0.0; self.dim];
            if let Some(first) = e.first_mut() {
                *first = 1.0;
            }
            e
        });
        VectorPotentialSpec {
            time_profile: p.time_profile.clone(),
            space_profile: p.space_profile.clone(),
            direction,
            eta,
            scale: l,
            t0: p.t0,
            t1: p.t1,
            quadrature_nodes: p.quadrature_nodes,
        }
    }

    /// Collect every violated constraint.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            errs.push(format!(
                "schema_version {} unsupported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.dim == 0 {
            errs.push("dim must be positive".into());
        }
        if self.half_sides.is_empty() {
            errs.push("half_sides must be nonempty".into());
        }
        if self.half_sides.iter().any(|&l| !(l >= 1.0)) {
            errs.push("half_sides must be >= 1".into());
        }
        if !(self.beta > 0.0) {
            errs.push(format!("beta = {} must be positive", self.beta));
        }
        if !(self.lambda >= 0.0) {
            errs.push(format!("lambda = {} must be nonnegative", self.lambda));
        }
        if self.seeds.is_empty() {
            errs.push("seeds must be nonempty".into());
        }
        if self.eta_grid.is_empty() {
            errs.push("eta_grid must be nonempty".into());
        }
        if self.eta_grid.iter().any(|e| !e.is_finite()) {
            errs.push("eta_grid values must be finite".into());
        }
        if self.l_grid.is_empty() {
            errs.push("l_grid must be nonempty".into());
        }
        if self.l_grid.iter().any(|&l| !(l > 0.0)) {
            errs.push("l_grid values must be positive".into());
        }
        let min_box = self.half_sides.iter().copied().fold(f64::INFINITY, f64::min);
        for &l in &self.l_grid {
            if l > min_box {
                errs.push(format!("field scale l = {l} exceeds box half side {min_box}"));
            }
        }
        let p = &self.potential;
        if !(p.t0 < p.t1) {
            errs.push(format!("potential.t0 = {} must be below t1 = {}", p.t0, p.t1));
        }
        if !(self.horizon() >= p.t1) {
            errs.push(format!(
                "time.horizon = {} must be at least t1 = {}",
                self.horizon(),
                p.t1
            ));
        }
        if !(self.step() > 0.0) {
            errs.push("time.step must be positive".into());
        }
        if self.record_every() == 0 {
            errs.push("time.record_every must be positive".into());
        }
        if p.quadrature_nodes == 0 {
            errs.push("potential.quadrature_nodes must be positive".into());
        }
        if let Some(dir) = &p.direction {
            if dir.len() != self.dim {
                errs.push("potential.direction must have dim components".into());
            }
        }
        if !(self.epsilon > 0.0) {
            errs.push("epsilon must be positive".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(HeatError::Config(errs))
        }
    }
}
