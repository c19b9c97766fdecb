use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use cola_algos::{Algorithm, Maddpg, MetricsRecord, TrainConfig, ValueDecomposition};
use cola_envs::make_env;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::config::RunConfig;

/// Loose mirror of the metrics record for reading back JSONL.
#[derive(Debug, Deserialize)]
struct MetricsRow {
    env_steps: u64,
    mean_eval_return: f64,
}

#[derive(Debug)]
pub struct ExportSummary {
    pub learning_curve: PathBuf,
    pub param_counts: PathBuf,
    pub runs: usize,
}

struct RunData {
    cfg: RunConfig,
    rows: Vec<MetricsRow>,
}

fn read_run(dir: &Path) -> io::Result<Option<RunData>> {
    let metrics = dir.join("metrics.jsonl");
    let config = dir.join("config.txt");
    if !metrics.exists() || !config.exists() {
        return Ok(None);
    }
    let cfg = RunConfig::from_file(&config)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
    let mut rows = Vec::new();
    for line in BufReader::new(File::open(metrics)?).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: MetricsRow = serde_json::from_str(&line)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
        rows.push(row);
    }
    Ok(Some(RunData { cfg, rows }))
}

/// Two-sided 95% Student-t quantiles by degrees of freedom (1-based).
const T95: [f64; 10] = [12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228];

fn t95(dof: usize) -> f64 {
    if dof == 0 {
        0.0
    } else if dof <= T95.len() {
        T95[dof - 1]
    } else {
        1.96
    }
}

/// Reads one run directory or a directory of runs and writes plot-ready
/// CSVs: a learning curve (mean and CI across seeds of one configuration)
/// and an RL parameter-count report comparing each variant with its
/// consensus/baseline counterpart.
pub fn export_run(dir: &Path) -> io::Result<ExportSummary> {
    let mut runs: Vec<RunData> = Vec::new();
    if let Some(run) = read_run(dir)? {
        runs.push(run);
    } else {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_dir())
            .collect();
        entries.sort();
        for sub in entries {
            if let Some(run) = read_run(&sub)? {
                runs.push(run);
            }
        }
    }
    if runs.is_empty() {
        return Err(io::Error::new(
            io::ErrorKind::NotFound,
            format!("no runs (metrics.jsonl + config.txt) under {}", dir.display()),
        ));
    }

    // group by everything except the seed
    let group_key = |cfg: &RunConfig| {
        (
            cfg.train.algorithm.name().to_string(),
            cfg.train.scenario.name().to_string(),
            cfg.train.consensus_classes,
        )
    };
    let mut groups: Vec<((String, String, usize), Vec<&RunData>)> = Vec::new();
    for run in &runs {
        let key = group_key(&run.cfg);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, members)) => members.push(run),
            None => groups.push((key, vec![run])),
        }
    }

    let curve_path = dir.join("learning_curve.csv");
    let mut w = BufWriter::new(File::create(&curve_path)?);
    writeln!(w, "algorithm,scenario,k,env_steps,mean_return,ci95,n_seeds")?;
    for ((alg, scen, k), members) in &groups {
        let depth = members.iter().map(|r| r.rows.len()).min().unwrap_or(0);
        for i in 0..depth {
            let returns: Vec<f64> = members.iter().map(|r| r.rows[i].mean_eval_return).collect();
            let steps: f64 =
                members.iter().map(|r| r.rows[i].env_steps as f64).sum::<f64>() / members.len() as f64;
            let n = returns.len();
            let mean = returns.iter().sum::<f64>() / n as f64;
            let ci = if n > 1 {
                let var =
                    returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1) as f64;
                t95(n - 1) * (var / n as f64).sqrt()
            } else {
                0.0
            };
            writeln!(w, "{alg},{scen},{k},{steps},{mean},{ci},{n}")?;
        }
    }
    w.flush()?;

    let counts_path = dir.join("param_counts.csv");
    let mut w = BufWriter::new(File::create(&counts_path)?);
    writeln!(w, "algorithm,scenario,k,rl_param_count")?;
    let mut seen: Vec<(String, String, usize)> = Vec::new();
    for ((_, scen, k), members) in &groups {
        let cfg = &members[0].cfg.train;
        for algorithm in [cfg.algorithm, counterpart(cfg.algorithm)] {
            let row_key = (algorithm.name().to_string(), scen.clone(), *k);
            if seen.contains(&row_key) {
                continue;
            }
            seen.push(row_key);
            let count = rl_param_count_for(cfg, algorithm);
            writeln!(w, "{},{scen},{k},{count}", algorithm.name())?;
        }
    }
    w.flush()?;

    Ok(ExportSummary { learning_curve: curve_path, param_counts: counts_path, runs: runs.len() })
}

pub fn counterpart(algorithm: Algorithm) -> Algorithm {
    match algorithm {
        Algorithm::ColaQmix => Algorithm::Qmix,
        Algorithm::Qmix => Algorithm::ColaQmix,
        Algorithm::ColaVdn => Algorithm::Vdn,
        Algorithm::Vdn => Algorithm::ColaVdn,
        Algorithm::ColaMaddpg => Algorithm::Maddpg,
        Algorithm::Maddpg => Algorithm::ColaMaddpg,
    }
}

/// Builds the run's networks and counts gradient-bearing RL parameters;
/// the consensus builder contributes zero by construction.
pub fn rl_param_count_for(template: &TrainConfig, algorithm: Algorithm) -> usize {
    let mut cfg = template.clone();
    cfg.algorithm = algorithm;
    let env = make_env(cfg.scenario);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    if algorithm.is_value_decomposition() {
        ValueDecomposition::new(cfg, env.as_ref(), &mut rng).rl_param_count()
    } else {
        Maddpg::new(cfg, env.as_ref(), &mut rng).rl_param_count()
    }
}

/// Reads the learning-curve rows back (test and downstream convenience).
pub fn read_metrics(path: &Path) -> io::Result<Vec<MetricsRecord>> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: MetricsRecord = serde_json::from_str(&line)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}
