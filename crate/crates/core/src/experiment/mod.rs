//! Configuration, seeded end-to-end runs, figure data and self-checks.

pub mod config;
pub mod report;
pub mod run;
pub mod selftest;

pub use config::{MitigationSettings, Preset, RunConfig};
pub use run::{run_mc, run_paired, run_sc, PairedRun, RunResult, SeedStreams};
