use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};

use cola_algos::train;

use crate::config::{ConfigError, RunConfig};

#[derive(Clone, Debug)]
pub struct SweepSpec {
    pub key: String,
    pub values: Vec<String>,
    pub seeds: u64,
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub value: String,
    pub seed: u64,
    pub final_eval_return: Option<f64>,
    pub status: &'static str,
}

#[derive(Debug)]
pub struct SweepSummary {
    pub rows: Vec<SweepRow>,
    pub csv_path: PathBuf,
}

/// Runs the cartesian product of values x seeds, each child in its own
/// directory under `out_dir`. A failing child is recorded and does not
/// abort its siblings. Children run in parallel; each child is internally
/// single-threaded and self-seeded, so results do not depend on scheduling.
pub fn run_sweep(
    base: &RunConfig,
    spec: &SweepSpec,
    out_dir: &Path,
) -> Result<SweepSummary, ConfigError> {
    // validate the swept key before spawning anything
    {
        let mut probe = base.clone();
        if spec.key == "seed" || spec.key == "out_dir" {
            return Err(ConfigError::BadValue {
                key: spec.key.clone(),
                value: String::new(),
                reason: "cannot sweep over this key".to_string(),
            });
        }
        for value in &spec.values {
            probe.set(&spec.key, value)?;
        }
    }
    std::fs::create_dir_all(out_dir).map_err(ConfigError::Io)?;

    struct Job {
        index: usize,
        value: String,
        seed: u64,
        cfg: RunConfig,
    }
    let mut jobs = Vec::new();
    for value in &spec.values {
        for s in 0..spec.seeds {
            let seed = base.train.seed + s;
            let mut cfg = base.clone();
            cfg.set(&spec.key, value).expect("validated above");
            cfg.train.seed = seed;
            cfg.out_dir = out_dir.join(format!("{}_{}_seed{}", spec.key, value, seed));
            jobs.push(Job { index: jobs.len(), value: value.clone(), seed, cfg });
        }
    }

    let queue = Arc::new(Mutex::new(jobs));
    let (tx, rx) = mpsc::channel::<(usize, SweepRow)>();
    let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(4);
    let mut handles = Vec::new();
    for _ in 0..workers {
        let queue = Arc::clone(&queue);
        let tx = tx.clone();
        handles.push(std::thread::spawn(move || loop {
            let job = { queue.lock().unwrap().pop() };
            let Some(job) = job else { break };
            let snapshot = job.cfg.serialize();
            let result = std::panic::catch_unwind(|| {
                std::fs::create_dir_all(&job.cfg.out_dir)?;
                std::fs::write(job.cfg.out_dir.join("config.txt"), &snapshot)?;
                train(&job.cfg.train, &job.cfg.out_dir)
            });
            let row = match result {
                Ok(Ok(artifacts)) => SweepRow {
                    value: job.value,
                    seed: job.seed,
                    final_eval_return: Some(artifacts.final_eval.mean_return),
                    status: "ok",
                },
                _ => SweepRow {
                    value: job.value,
                    seed: job.seed,
                    final_eval_return: None,
                    status: "failed",
                },
            };
            tx.send((job.index, row)).expect("collector alive");
        }));
    }
    drop(tx);

    let mut indexed: Vec<(usize, SweepRow)> = rx.iter().collect();
    for h in handles {
        let _ = h.join();
    }
    indexed.sort_by_key(|(i, _)| *i);
    let rows: Vec<SweepRow> = indexed.into_iter().map(|(_, r)| r).collect();

    let csv_path = out_dir.join("sweep.csv");
    write_csv(&csv_path, &spec.key, &rows).map_err(ConfigError::Io)?;
    Ok(SweepSummary { rows, csv_path })
}

fn write_csv(path: &Path, key: &str, rows: &[SweepRow]) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "key,value,seed,final_eval_return,status")?;
    for row in rows {
        let ret = row.final_eval_return.map(|v| v.to_string()).unwrap_or_default();
        writeln!(w, "{key},{},{},{},{}", row.value, row.seed, ret, row.status)?;
    }
    w.flush()
}
