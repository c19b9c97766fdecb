//! Command-line front end and experiment tooling: the flat key-value run
//! configuration, the sweep driver, the gradient-check suite, the synthetic
//! multi-view consensus benchmark, and plot-data export.

pub mod config;
pub mod export;
pub mod gradcheck_suite;
pub mod sweep;
pub mod synthetic;

pub use config::{ConfigError, RunConfig, ENV_PREFIX, KEYS};
pub use export::{counterpart, export_run, read_metrics, rl_param_count_for, ExportSummary};
pub use gradcheck_suite::{run_gradcheck, GradCheckReport, GRADCHECK_TOLERANCE};
pub use sweep::{run_sweep, SweepSpec, SweepSummary};
pub use synthetic::{run_synthetic, SyntheticMultiViewSpec, SyntheticReport};

use std::path::Path;

/// Runs a configured training job: writes the config snapshot and version
/// stamp, then trains. The run directory is self-describing.
pub fn run_training(cfg: &RunConfig) -> std::io::Result<cola_algos::RunArtifacts> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    std::fs::write(cfg.out_dir.join("config.txt"), cfg.serialize())?;
    std::fs::write(
        cfg.out_dir.join("run_info.txt"),
        format!(
            "cola {}\nalgorithm = {}\nscenario = {}\nseed = {}\n",
            env!("CARGO_PKG_VERSION"),
            cfg.train.algorithm.name(),
            cfg.train.scenario.name(),
            cfg.train.seed
        ),
    )?;
    cola_algos::train(&cfg.train, &cfg.out_dir)
}

/// Writes a diagnostic record for a failed run; used by the CLI before
/// exiting with a runtime-failure code.
pub fn write_diagnostic(dir: &Path, what: &str) {
    let _ = std::fs::create_dir_all(dir);
    let _ = std::fs::write(dir.join("diagnostic.txt"), what);
}
