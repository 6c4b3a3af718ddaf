//! Scenario runner, file formats and command-line front end for
//! [`adsim_core`].
//!
//! A scenario file names a synthetic population, the platform policies to
//! test and the attacks to run against each. [`run::run_scenario`] executes
//! every combination and writes one JSON report per run plus CSV summaries.

pub mod audit;
pub mod error;
pub mod formats;
pub mod popfile;
pub mod run;
pub mod scenario;

pub use adsim_core as core;
pub use error::{Error, Result};
pub use scenario::Scenario;
