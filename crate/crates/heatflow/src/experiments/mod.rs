// SPDX-License-Identifier: Apache-2.0

//! Scenario configuration, sweeps, fits and run manifests.

pub mod config;
pub mod fit;
pub mod manifest;
pub mod runner;

pub use config::{ScenarioConfig, SCHEMA_VERSION};
pub use manifest::{Check, RunManifest};
pub use runner::{
    crosscheck_oracle, decay_study, dissipation_probe, run_scenario, scaling_sweep,
    series_study, taylor_estimate, thermolimit_sweep,
};
