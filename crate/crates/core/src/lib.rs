//! Joint BS and multi-STAR-RIS beamforming for aggregate-rate maximization
//! under per-group minimum-rate constraints.

pub mod bcd;
pub mod conic;
pub mod error;
pub mod experiment;
pub mod fractional;
pub mod geometry;
pub mod linalg;
pub mod oracle;
pub mod profile;
pub mod rate;
pub mod scenario;

pub use error::{Error, Result};

// Clarabel's SDP path calls LAPACK; this pulls in the system OpenBLAS link.
#[cfg(feature = "clarabel")]
extern crate openblas_src as _;
