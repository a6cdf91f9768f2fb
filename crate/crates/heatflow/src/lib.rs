// SPDX-License-Identifier: Apache-2.0

//! Heat production of free lattice fermions driven by a time-dependent
//! vector potential.
//!
//! * [`lattice`]: boxes, disorder, Laplacians and Peierls phases
//! * [`onebody`]: one-particle propagators and the Fermi symbol
//! * [`quasifree`]: energy increments, work and relative entropy on the symbol level
//! * [`fock`]: brute-force many-body oracle on small boxes
//! * [`trees`]: tree expansion of multi-commutators and the heat series
//! * [`experiments`]: configuration, sweeps and the CLI backend
//!
//! Conventions: `hbar = 1`, lattice spacing 1, `rho(a*_x a_y) = D[y, x]`,
//! dynamics `a(psi) -> a(U* psi)` so that `D_t = U d U†`.

pub mod error;
pub mod experiments;
pub mod fock;
pub mod lattice;
pub mod linalg;
pub mod onebody;
pub mod par;
pub mod quasifree;
pub mod trees;

pub use error::{HeatError, Result};
