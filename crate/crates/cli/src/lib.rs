//! Batch front-end for the HPS solver: run configurations, the uniform and
//! adaptive pipelines, and the text file formats they produce.

pub mod config;
pub mod io;
pub mod runner;

pub use config::{FormulationChoice, Mode, RunConfig};
pub use runner::{compare, compare_files, run, Outcome, RunReport};
