//! IV/GMM estimation under heteroskedasticity, centered on the GMMf
//! estimator — a one-step GMM estimator whose robust weight matrix is built
//! from first-stage residuals — plus the associated first-stage
//! F-statistics, weak-instrument limit simulators and Monte Carlo harness.

pub mod dataset;
pub mod designs;
pub mod error;
pub mod estimators;
pub mod firststage;
pub mod mc;
pub mod panel;
pub mod report;
pub mod rng;
pub mod wia;

pub use error::{Error, Result};
