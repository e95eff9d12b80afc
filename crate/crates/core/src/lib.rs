//! Anchor-free relative localization of agent swarms from incomplete pairwise
//! range measurements, plus an OTFS delay-Doppler ranging simulator and the
//! experiment harness used to compare against MDS-MAP style baselines.

pub mod baselines;
pub mod clustering;
pub mod error;
pub mod evaluation;
pub mod linalg;
pub mod localization;
pub mod merging;
pub mod otfs;
pub mod pipeline;
pub mod report;
pub mod rng;
pub mod swarm;

pub use error::{Error, Result};
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
