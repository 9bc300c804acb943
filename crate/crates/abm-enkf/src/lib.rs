//! Stochastic SEIHRD agent-based epidemic model coupled to an ensemble
//! Kalman filter operating on aggregated compartment counts.
//!
//! The crate is organized around the assimilation loop: an agent population
//! evolves day by day ([`abm`]), is aggregated into per-location compartment
//! counts ([`macromap`]), updated against observations with a perturbed-
//! observation EnKF including augmented parameters ([`enkf`], [`obs`]), and
//! reconciled back into agents with one of two redistribution algorithms
//! ([`macromap`]). [`experiments`] orchestrates synthetic twin experiments
//! and the real-data pipeline; [`dataio`] owns file schemas.

pub mod abm;
pub mod dataio;
pub mod enkf;
pub mod error;
pub mod experiments;
pub mod macromap;
pub mod obs;
pub mod rng;

pub use error::{Error, Result};

/// Schema version stamped into every emitted artifact.
pub const SCHEMA_VERSION: &str = "abm-enkf/1";
