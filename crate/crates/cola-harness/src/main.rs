use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cola_harness::{
    export_run, run_gradcheck, run_sweep, run_synthetic, run_training, write_diagnostic,
    ConfigError, RunConfig, SweepSpec, SyntheticMultiViewSpec, ENV_PREFIX,
};

const EXIT_RUNTIME: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "cola", about = "Consensus-learning multi-agent RL trainer")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one run from a config file (keys documented in docs/config.md).
    Train {
        config: PathBuf,
    },
    /// Run one child per (value, seed) over a config key and collect a CSV.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        key: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        /// Output directory (defaults to `<out_dir>_sweep_<key>`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference checks over every network and loss; exit 0 iff all pass.
    Gradcheck,
    /// Train only the consensus builder on the synthetic multi-view task,
    /// reporting both centering arms.
    SyntheticConsensus {
        spec: PathBuf,
        #[arg(long, default_value = "synthetic_report.json")]
        out: PathBuf,
    },
    /// Write plot-ready CSVs (learning curve, parameter counts) for a run
    /// directory or a directory of runs.
    Export {
        run_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                ConfigError::Io(_) => EXIT_RUNTIME,
                _ => EXIT_CONFIG,
            })
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode, ConfigError> {
    match cli.cmd {
        Cmd::Train { config } => {
            let mut cfg = RunConfig::from_file(&config)?;
            cfg.apply_env_overrides(std::env::vars().filter(|(k, _)| k.starts_with(ENV_PREFIX)))?;
            let out_dir = cfg.out_dir.clone();
            let outcome = std::panic::catch_unwind(|| run_training(&cfg));
            match outcome {
                Ok(Ok(artifacts)) => {
                    println!(
                        "run complete: {} env steps, {} episodes, final eval return {:.4} -> {}",
                        artifacts.env_steps,
                        artifacts.episodes,
                        artifacts.final_eval.mean_return,
                        out_dir.display()
                    );
                    Ok(ExitCode::SUCCESS)
                }
                Ok(Err(e)) => {
                    write_diagnostic(&out_dir, &format!("i/o failure: {e}\n"));
                    eprintln!("run failed: {e}");
                    Ok(ExitCode::from(EXIT_RUNTIME))
                }
                Err(panic) => {
                    let what = panic_message(&panic);
                    write_diagnostic(&out_dir, &format!("aborted: {what}\n"));
                    eprintln!("run aborted: {what}");
                    Ok(ExitCode::from(EXIT_RUNTIME))
                }
            }
        }
        Cmd::Sweep { config, key, values, seeds, out } => {
            let mut cfg = RunConfig::from_file(&config)?;
            cfg.apply_env_overrides(std::env::vars().filter(|(k, _)| k.starts_with(ENV_PREFIX)))?;
            let out_dir = out.unwrap_or_else(|| {
                PathBuf::from(format!("{}_sweep_{key}", cfg.out_dir.display()))
            });
            let spec = SweepSpec { key, values, seeds };
            let summary = run_sweep(&cfg, &spec, &out_dir)?;
            let failed = summary.rows.iter().filter(|r| r.status != "ok").count();
            println!(
                "sweep complete: {} runs ({failed} failed) -> {}",
                summary.rows.len(),
                summary.csv_path.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Gradcheck => {
            let report = run_gradcheck(false);
            print!("{}", report.render());
            Ok(if report.all_passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_RUNTIME)
            })
        }
        Cmd::SyntheticConsensus { spec, out } => {
            let text = std::fs::read_to_string(&spec).map_err(ConfigError::Io)?;
            let base = SyntheticMultiViewSpec::parse_str(&text)?;
            let mut on = base.clone();
            on.centering = true;
            let mut off = base;
            off.centering = false;
            let report_on = run_synthetic(&on);
            let report_off = run_synthetic(&off);
            for r in [&report_on, &report_off] {
                println!(
                    "centering={}: steps={} loss={:.4} agreement={:.4} classes_used={} entropy={:.4}",
                    r.centering, r.steps_run, r.final_loss, r.pairwise_agreement, r.classes_used,
                    r.marginal_entropy
                );
            }
            let json = serde_json::json!({ "centering_on": report_on, "centering_off": report_off });
            std::fs::write(&out, serde_json::to_string_pretty(&json).expect("serialize"))
                .map_err(ConfigError::Io)?;
            println!("report -> {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Export { run_dir } => {
            let summary = export_run(&run_dir).map_err(ConfigError::Io)?;
            println!(
                "exported {} runs: {} and {}",
                summary.runs,
                summary.learning_curve.display(),
                summary.param_counts.display()
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn panic_message(panic: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = panic.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = panic.downcast_ref::<String>() {
        s.clone()
    } else {
        "unknown panic".to_string()
    }
}
