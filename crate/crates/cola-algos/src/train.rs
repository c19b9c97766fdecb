use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use cola_consensus::{marginal_entropy, pairwise_agreement};
use cola_envs::{make_env, JointAction, Scenario};
use cola_nets::save_arrays;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::buffer::{EpisodeBuffer, Transition, TransitionBuffer};
use crate::config::TrainConfig;
use crate::maddpg::Maddpg;
use crate::metrics::MetricsRecord;
use crate::schedule::LinearSchedule;
use crate::value_decomp::ValueDecomposition;

/// Aggregates of one evaluation round (greedy, exploration off).
#[derive(Clone, Copy, Debug)]
pub struct EvalSummary {
    pub mean_return: f64,
    pub capture_rate: Option<f64>,
    pub consensus_entropy: Option<f64>,
    pub consensus_agreement: Option<f64>,
}

#[derive(Debug)]
pub struct RunArtifacts {
    pub records: Vec<MetricsRecord>,
    pub final_eval: EvalSummary,
    pub env_steps: u64,
    pub episodes: u64,
    /// Online RL parameter count (excludes the consensus builder).
    pub rl_param_count: usize,
}

// Deterministic substreams of the run seed.
const STREAM_INIT: u64 = 0;
const STREAM_ENV: u64 = 1;
const STREAM_POLICY: u64 = 2;
const STREAM_BUFFER: u64 = 3;
const STREAM_EVAL: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

struct Sinks {
    metrics: BufWriter<File>,
    trace: Option<BufWriter<File>>,
}

impl Sinks {
    fn new(cfg: &TrainConfig, out_dir: &Path) -> io::Result<Sinks> {
        std::fs::create_dir_all(out_dir)?;
        let metrics = BufWriter::new(File::create(out_dir.join("metrics.jsonl"))?);
        let trace = if cfg.trace_consensus && cfg.algorithm.uses_consensus() {
            let mut w = BufWriter::new(File::create(out_dir.join("consensus_trace.csv"))?);
            writeln!(w, "env_steps,episode,t,agent,consensus,alive")?;
            Some(w)
        } else {
            None
        };
        Ok(Sinks { metrics, trace })
    }

    fn write_record(&mut self, record: &MetricsRecord) -> io::Result<()> {
        let line = serde_json::to_string(record).expect("metrics serialize");
        writeln!(self.metrics, "{line}")?;
        // records are rare (one per eval interval); keep them durable
        self.metrics.flush()
    }

    fn write_trace(&mut self, env_steps: u64, episodes: &[EvalEpisode]) -> io::Result<()> {
        let Some(w) = self.trace.as_mut() else { return Ok(()) };
        for (e, ep) in episodes.iter().enumerate() {
            for (t, step) in ep.consensus.iter().enumerate() {
                for (a, &c) in step.iter().enumerate() {
                    let alive = ep.alive[t][a] as u8;
                    writeln!(w, "{env_steps},{e},{t},{a},{c},{alive}")?;
                }
            }
        }
        Ok(())
    }

    fn flush(&mut self) -> io::Result<()> {
        self.metrics.flush()?;
        if let Some(t) = self.trace.as_mut() {
            t.flush()?;
        }
        Ok(())
    }
}

struct EvalEpisode {
    episode_return: f64,
    captured: bool,
    /// `t -> agent -> class` (only alive agents enter the statistics)
    consensus: Vec<Vec<usize>>,
    alive: Vec<Vec<bool>>,
}

fn summarize(cfg: &TrainConfig, episodes: &[EvalEpisode]) -> EvalSummary {
    let n = episodes.len() as f64;
    let mean_return = episodes.iter().map(|e| e.episode_return).sum::<f64>() / n;
    let capture_rate = cfg
        .scenario
        .is_discrete()
        .then(|| episodes.iter().filter(|e| e.captured).count() as f64 / n);
    let (entropy, agreement) = if cfg.algorithm.uses_consensus() {
        let mut pooled = Vec::new();
        let mut per_step: Vec<Vec<usize>> = Vec::new();
        for ep in episodes {
            for (step, alive) in ep.consensus.iter().zip(&ep.alive) {
                let alive_classes: Vec<usize> = step
                    .iter()
                    .zip(alive)
                    .filter(|&(_, &a)| a)
                    .map(|(&c, _)| c)
                    .collect();
                pooled.extend(alive_classes.iter().copied());
                per_step.push(alive_classes);
            }
        }
        (
            Some(marginal_entropy(&pooled, cfg.consensus_classes)),
            Some(pairwise_agreement(&per_step)),
        )
    } else {
        (None, None)
    };
    EvalSummary { mean_return, capture_rate, consensus_entropy: entropy, consensus_agreement: agreement }
}

/// Mean undiscounted return of a uniform-random policy; the floor used by
/// directional comparisons.
pub fn random_policy_return(scenario: Scenario, episodes: usize, seed: u64) -> f64 {
    let mut env = make_env(scenario);
    let mut rng = stream(seed, STREAM_EVAL);
    let mut total = 0.0;
    for _ in 0..episodes {
        let env_seed = rng.gen();
        env.reset(env_seed);
        loop {
            let action = match env.action_spec() {
                cola_envs::ActionSpec::Continuous { .. } => JointAction::Continuous(
                    (0..env.n_agents())
                        .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
                        .collect(),
                ),
                cola_envs::ActionSpec::Discrete { n } => JointAction::Discrete(
                    (0..env.n_agents()).map(|_| rng.gen_range(0..n)).collect(),
                ),
            };
            let out = env.step(&action);
            total += out.reward;
            if out.done {
                break;
            }
        }
    }
    total / episodes as f64
}

/// Runs one full training job and writes `metrics.jsonl`, the consensus
/// trace, and a final checkpoint into `out_dir`.
pub fn train(cfg: &TrainConfig, out_dir: &Path) -> io::Result<RunArtifacts> {
    cfg.validate();
    let mut sinks = Sinks::new(cfg, out_dir)?;
    let artifacts = if cfg.algorithm.is_value_decomposition() {
        train_value_decomposition(cfg, out_dir, &mut sinks)?
    } else {
        train_maddpg(cfg, out_dir, &mut sinks)?
    };
    sinks.flush()?;
    Ok(artifacts)
}

fn train_value_decomposition(
    cfg: &TrainConfig,
    out_dir: &Path,
    sinks: &mut Sinks,
) -> io::Result<RunArtifacts> {
    let mut env = make_env(cfg.scenario);
    let mut init_rng = stream(cfg.seed, STREAM_INIT);
    let mut learner = ValueDecomposition::new(cfg.clone(), env.as_ref(), &mut init_rng);
    let mut buffer = EpisodeBuffer::new(cfg.buffer_capacity);
    let mut env_rng = stream(cfg.seed, STREAM_ENV);
    let mut policy_rng = stream(cfg.seed, STREAM_POLICY);
    let mut buffer_rng = stream(cfg.seed, STREAM_BUFFER);
    let mut eval_rng = stream(cfg.seed, STREAM_EVAL);
    let epsilon = LinearSchedule::new(cfg.epsilon_start, cfg.epsilon_end, cfg.epsilon_decay_steps);

    let min_fill = cfg.min_buffer_episodes.max(cfg.batch_size);
    let mut steps: u64 = 0;
    let mut episodes: u64 = 0;
    let mut next_eval = cfg.eval_interval_steps;
    let mut records: Vec<MetricsRecord> = Vec::new();
    let mut window = LossWindow::default();

    while steps < cfg.total_env_steps {
        let eps = epsilon.value(steps);
        let env_seed = env_rng.gen();
        let episode = learner.rollout_episode(env.as_mut(), env_seed, eps, &mut policy_rng);
        steps += episode.len() as u64;
        episodes += 1;
        buffer.push(episode);

        if buffer.len() >= min_fill {
            let batch = buffer.sample(cfg.batch_size, &mut buffer_rng);
            let stats = learner.update(&batch);
            window.push(stats.rl_loss, stats.cb_loss);
        }
        if episodes % cfg.target_update_interval == 0 {
            learner.target_sync();
        }

        if steps >= next_eval {
            let evals = eval_value_decomposition(&learner, cfg, &mut eval_rng);
            push_record(cfg, sinks, &mut records, steps, episodes, &mut window, &evals, Some(eps), None)?;
            sinks.write_trace(steps, &evals)?;
            next_eval = (steps / cfg.eval_interval_steps + 1) * cfg.eval_interval_steps;
        }
    }

    let final_evals = eval_value_decomposition(&learner, cfg, &mut eval_rng);
    let final_eval = summarize(cfg, &final_evals);
    if records.last().map(|r| r.env_steps) != Some(steps) {
        push_record(
            cfg,
            sinks,
            &mut records,
            steps,
            episodes,
            &mut window,
            &final_evals,
            Some(epsilon.value(steps)),
            None,
        )?;
        sinks.write_trace(steps, &final_evals)?;
    }

    save_arrays(
        &out_dir.join("checkpoint.bin"),
        &learner.named_arrays().iter().map(|(n, t)| (n.clone(), t)).collect::<Vec<_>>(),
    )?;
    Ok(RunArtifacts {
        records,
        final_eval,
        env_steps: steps,
        episodes,
        rl_param_count: learner.rl_param_count(),
    })
}

fn eval_value_decomposition(
    learner: &ValueDecomposition,
    cfg: &TrainConfig,
    eval_rng: &mut ChaCha8Rng,
) -> Vec<EvalEpisode> {
    let mut env = make_env(cfg.scenario);
    (0..cfg.eval_episodes)
        .map(|_| {
            let seed = eval_rng.gen();
            // epsilon = 0: greedy and rng-free
            let episode = learner.rollout_episode(env.as_mut(), seed, 0.0, eval_rng);
            EvalEpisode {
                episode_return: episode.episode_return(),
                captured: episode.captured,
                consensus: episode.consensus.clone(),
                alive: episode.alive[..episode.len()].to_vec(),
            }
        })
        .collect()
}

fn train_maddpg(cfg: &TrainConfig, out_dir: &Path, sinks: &mut Sinks) -> io::Result<RunArtifacts> {
    let mut env = make_env(cfg.scenario);
    let mut init_rng = stream(cfg.seed, STREAM_INIT);
    let mut learner = Maddpg::new(cfg.clone(), env.as_ref(), &mut init_rng);
    let mut buffer = TransitionBuffer::new(cfg.buffer_capacity);
    let mut env_rng = stream(cfg.seed, STREAM_ENV);
    let mut policy_rng = stream(cfg.seed, STREAM_POLICY);
    let mut buffer_rng = stream(cfg.seed, STREAM_BUFFER);
    let mut eval_rng = stream(cfg.seed, STREAM_EVAL);
    // noise anneals over the first half of the run
    let sigma = LinearSchedule::new(cfg.sigma_start, cfg.sigma_end, cfg.total_env_steps / 2);

    let min_fill = cfg.min_buffer_transitions.max(cfg.batch_size);
    let mut steps: u64 = 0;
    let mut episodes: u64 = 0;
    let mut next_eval = cfg.eval_interval_steps;
    let mut records: Vec<MetricsRecord> = Vec::new();
    let mut window = LossWindow::default();

    let env_seed = env_rng.gen();
    let mut obs = env.reset(env_seed);
    while steps < cfg.total_env_steps {
        let (actions, _) = learner.act(&obs, sigma.value(steps), &mut policy_rng);
        let outcome = env.step(&JointAction::Continuous(actions.clone()));
        buffer.push(Transition {
            obs,
            actions,
            reward: outcome.reward,
            next_obs: outcome.observations.clone(),
            done: outcome.done,
        });
        obs = outcome.observations;
        steps += 1;
        if outcome.done {
            episodes += 1;
            let env_seed = env_rng.gen();
            obs = env.reset(env_seed);
        }

        if steps % cfg.update_interval_steps == 0 && buffer.len() >= min_fill {
            let stats = learner.update(&buffer, &mut buffer_rng);
            window.push(stats.critic_loss, stats.cb_loss);
        }

        if steps >= next_eval {
            let evals = eval_maddpg(&learner, cfg, &mut eval_rng);
            push_record(
                cfg,
                sinks,
                &mut records,
                steps,
                episodes,
                &mut window,
                &evals,
                None,
                Some(sigma.value(steps)),
            )?;
            sinks.write_trace(steps, &evals)?;
            next_eval = (steps / cfg.eval_interval_steps + 1) * cfg.eval_interval_steps;
        }
    }

    let final_evals = eval_maddpg(&learner, cfg, &mut eval_rng);
    let final_eval = summarize(cfg, &final_evals);
    if records.last().map(|r| r.env_steps) != Some(steps) {
        push_record(
            cfg,
            sinks,
            &mut records,
            steps,
            episodes,
            &mut window,
            &final_evals,
            None,
            Some(sigma.value(steps)),
        )?;
        sinks.write_trace(steps, &final_evals)?;
    }

    save_arrays(
        &out_dir.join("checkpoint.bin"),
        &learner.named_arrays().iter().map(|(n, t)| (n.clone(), t)).collect::<Vec<_>>(),
    )?;
    Ok(RunArtifacts {
        records,
        final_eval,
        env_steps: steps,
        episodes,
        rl_param_count: learner.rl_param_count(),
    })
}

fn eval_maddpg(learner: &Maddpg, cfg: &TrainConfig, eval_rng: &mut ChaCha8Rng) -> Vec<EvalEpisode> {
    let mut env = make_env(cfg.scenario);
    (0..cfg.eval_episodes)
        .map(|_| {
            let seed = eval_rng.gen();
            let mut obs = env.reset(seed);
            let mut ep = EvalEpisode {
                episode_return: 0.0,
                captured: false,
                consensus: Vec::new(),
                alive: Vec::new(),
            };
            loop {
                // sigma = 0: deterministic policy, no rng draws
                let (actions, consensus) = learner.act(&obs, 0.0, eval_rng);
                ep.alive.push(env.alive());
                ep.consensus.push(consensus);
                let outcome = env.step(&JointAction::Continuous(actions));
                ep.episode_return += outcome.reward;
                ep.captured |= outcome.captured;
                obs = outcome.observations;
                if outcome.done {
                    break;
                }
            }
            ep
        })
        .collect()
}

/// Mean losses since the previous record.
#[derive(Default)]
struct LossWindow {
    rl_sum: f64,
    cb_sum: f64,
    count: u64,
    cb_count: u64,
}

impl LossWindow {
    fn push(&mut self, rl: f64, cb: Option<f64>) {
        self.rl_sum += rl;
        self.count += 1;
        if let Some(c) = cb {
            self.cb_sum += c;
            self.cb_count += 1;
        }
    }

    fn drain(&mut self, consensus_on: bool) -> (f64, Option<f64>) {
        let rl = if self.count > 0 { self.rl_sum / self.count as f64 } else { 0.0 };
        let cb = if consensus_on {
            Some(if self.cb_count > 0 { self.cb_sum / self.cb_count as f64 } else { 0.0 })
        } else {
            None
        };
        *self = LossWindow::default();
        (rl, cb)
    }
}

#[allow(clippy::too_many_arguments)]
fn push_record(
    cfg: &TrainConfig,
    sinks: &mut Sinks,
    records: &mut Vec<MetricsRecord>,
    steps: u64,
    episodes: u64,
    window: &mut LossWindow,
    evals: &[EvalEpisode],
    epsilon: Option<f64>,
    sigma: Option<f64>,
) -> io::Result<()> {
    let summary = summarize(cfg, evals);
    let (rl_loss, cb_loss) = window.drain(cfg.algorithm.uses_consensus());
    let record = MetricsRecord {
        env_steps: steps,
        episodes,
        rl_loss,
        cb_loss,
        mean_eval_return: summary.mean_return,
        capture_rate: summary.capture_rate,
        epsilon,
        sigma,
        consensus_marginal_entropy: summary.consensus_entropy,
        pairwise_consensus_agreement: summary.consensus_agreement,
    };
    sinks.write_record(&record)?;
    records.push(record);
    Ok(())
}
