use std::fmt;
use std::path::{Path, PathBuf};

use cola_algos::{Algorithm, ConsensusInput, StateAccess, TrainConfig};
use cola_envs::Scenario;

/// Environment variables with this prefix override config keys, e.g.
/// `COLA_TOTAL_ENV_STEPS=500` overrides `total_env_steps`.
pub const ENV_PREFIX: &str = "COLA_";

/// Every recognized key, in serialization order with its section.
pub const KEYS: &[(&str, &str)] = &[
    ("run", "algorithm"),
    ("run", "scenario"),
    ("run", "seed"),
    ("run", "total_env_steps"),
    ("run", "out_dir"),
    ("consensus", "k"),
    ("consensus", "consensus_input"),
    ("consensus", "centering"),
    ("consensus", "consensus_lr"),
    ("train", "gamma"),
    ("train", "batch_size"),
    ("train", "buffer_capacity"),
    ("train", "target_update_interval"),
    ("train", "update_interval_steps"),
    ("train", "epsilon_start"),
    ("train", "epsilon_end"),
    ("train", "epsilon_decay_steps"),
    ("train", "sigma_start"),
    ("train", "sigma_end"),
    ("train", "rl_learning_rate"),
    ("train", "grad_clip"),
    ("train", "polyak"),
    ("train", "min_buffer_episodes"),
    ("train", "min_buffer_transitions"),
    ("train", "state_access"),
    ("train", "share_agent_net"),
    ("eval", "eval_interval_steps"),
    ("eval", "eval_episodes"),
    ("eval", "check_isolation"),
    ("eval", "trace_consensus"),
];

#[derive(Debug)]
pub enum ConfigError {
    UnknownKey(String),
    BadValue { key: String, value: String, reason: String },
    Io(std::io::Error),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::UnknownKey(key) => write!(f, "unknown config key `{key}`"),
            ConfigError::BadValue { key, value, reason } => {
                write!(f, "bad value `{value}` for key `{key}`: {reason}")
            }
            ConfigError::Io(e) => write!(f, "config i/o error: {e}"),
        }
    }
}

impl std::error::Error for ConfigError {}

/// A full run description: training parameters plus the output directory.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn defaults(algorithm: Algorithm, scenario: Scenario) -> RunConfig {
        let train = TrainConfig::new(algorithm, scenario);
        let out_dir =
            PathBuf::from(format!("runs/{}_{}_s{}", algorithm.name(), scenario.name(), train.seed));
        RunConfig { train, out_dir }
    }

    /// Parses the flat `key = value` format. `[section]` headers and `#`
    /// comments are allowed; keys are globally unique and unknown keys are
    /// hard errors. Per-algorithm defaults come from the `algorithm` and
    /// `scenario` keys, wherever they appear in the file.
    pub fn parse_str(text: &str) -> Result<RunConfig, ConfigError> {
        let mut pairs: Vec<(String, String)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line.starts_with('[') && line.ends_with(']') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::BadValue {
                    key: format!("line {}", lineno + 1),
                    value: line.to_string(),
                    reason: "expected `key = value`".to_string(),
                });
            };
            pairs.push((key.trim().to_string(), value.trim().to_string()));
        }

        // defaults depend on the algorithm/scenario pair
        let mut algorithm = Algorithm::ColaQmix;
        let mut scenario = Scenario::GridPredatorPrey;
        for (key, value) in &pairs {
            match key.as_str() {
                "algorithm" => algorithm = parse_algorithm(key, value)?,
                "scenario" => scenario = parse_scenario(key, value)?,
                _ => {}
            }
        }
        let mut cfg = RunConfig::defaults(algorithm, scenario);
        for (key, value) in &pairs {
            cfg.set(key, value)?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(ConfigError::Io)?;
        RunConfig::parse_str(&text)
    }

    /// Applies `COLA_<KEY>` pairs; unknown suffixes are hard errors.
    pub fn apply_env_overrides(
        &mut self,
        vars: impl Iterator<Item = (String, String)>,
    ) -> Result<(), ConfigError> {
        for (name, value) in vars {
            let Some(suffix) = name.strip_prefix(ENV_PREFIX) else { continue };
            self.set(&suffix.to_lowercase(), &value)?;
        }
        Ok(())
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let t = &mut self.train;
        match key {
            "algorithm" => t.algorithm = parse_algorithm(key, value)?,
            "scenario" => t.scenario = parse_scenario(key, value)?,
            "seed" => t.seed = parse_num(key, value)?,
            "total_env_steps" => t.total_env_steps = parse_num(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "k" => t.consensus_classes = parse_num(key, value)?,
            "consensus_input" => {
                t.consensus_input = match value {
                    "observation" => ConsensusInput::Observation,
                    "hidden_state" => ConsensusInput::HiddenState,
                    _ => return bad(key, value, "expected observation|hidden_state"),
                }
            }
            "centering" => t.centering = parse_bool(key, value)?,
            "consensus_lr" => t.consensus_lr = parse_f64(key, value)?,
            "gamma" => t.gamma = parse_f64(key, value)?,
            "batch_size" => t.batch_size = parse_num(key, value)?,
            "buffer_capacity" => t.buffer_capacity = parse_num(key, value)?,
            "target_update_interval" => t.target_update_interval = parse_num(key, value)?,
            "update_interval_steps" => t.update_interval_steps = parse_num(key, value)?,
            "epsilon_start" => t.epsilon_start = parse_f64(key, value)?,
            "epsilon_end" => t.epsilon_end = parse_f64(key, value)?,
            "epsilon_decay_steps" => t.epsilon_decay_steps = parse_num(key, value)?,
            "sigma_start" => t.sigma_start = parse_f64(key, value)?,
            "sigma_end" => t.sigma_end = parse_f64(key, value)?,
            "rl_learning_rate" => t.rl_learning_rate = parse_f64(key, value)?,
            "grad_clip" => t.grad_clip = parse_f64(key, value)?,
            "polyak" => t.polyak = parse_f64(key, value)?,
            "min_buffer_episodes" => t.min_buffer_episodes = parse_num(key, value)?,
            "min_buffer_transitions" => t.min_buffer_transitions = parse_num(key, value)?,
            "state_access" => {
                t.state_access = match value {
                    "full" => StateAccess::Full,
                    "observations_only" => StateAccess::ObservationsOnly,
                    _ => return bad(key, value, "expected full|observations_only"),
                }
            }
            "share_agent_net" => t.share_agent_net = parse_bool(key, value)?,
            "eval_interval_steps" => t.eval_interval_steps = parse_num(key, value)?,
            "eval_episodes" => t.eval_episodes = parse_num(key, value)?,
            "check_isolation" => t.check_isolation = parse_bool(key, value)?,
            "trace_consensus" => t.trace_consensus = parse_bool(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        let t = &self.train;
        match key {
            "algorithm" => t.algorithm.name().to_string(),
            "scenario" => t.scenario.name().to_string(),
            "seed" => t.seed.to_string(),
            "total_env_steps" => t.total_env_steps.to_string(),
            "out_dir" => self.out_dir.display().to_string(),
            "k" => t.consensus_classes.to_string(),
            "consensus_input" => match t.consensus_input {
                ConsensusInput::Observation => "observation".to_string(),
                ConsensusInput::HiddenState => "hidden_state".to_string(),
            },
            "centering" => t.centering.to_string(),
            "consensus_lr" => t.consensus_lr.to_string(),
            "gamma" => t.gamma.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "buffer_capacity" => t.buffer_capacity.to_string(),
            "target_update_interval" => t.target_update_interval.to_string(),
            "update_interval_steps" => t.update_interval_steps.to_string(),
            "epsilon_start" => t.epsilon_start.to_string(),
            "epsilon_end" => t.epsilon_end.to_string(),
            "epsilon_decay_steps" => t.epsilon_decay_steps.to_string(),
            "sigma_start" => t.sigma_start.to_string(),
            "sigma_end" => t.sigma_end.to_string(),
            "rl_learning_rate" => t.rl_learning_rate.to_string(),
            "grad_clip" => t.grad_clip.to_string(),
            "polyak" => t.polyak.to_string(),
            "min_buffer_episodes" => t.min_buffer_episodes.to_string(),
            "min_buffer_transitions" => t.min_buffer_transitions.to_string(),
            "state_access" => match t.state_access {
                StateAccess::Full => "full".to_string(),
                StateAccess::ObservationsOnly => "observations_only".to_string(),
            },
            "share_agent_net" => t.share_agent_net.to_string(),
            "eval_interval_steps" => t.eval_interval_steps.to_string(),
            "eval_episodes" => t.eval_episodes.to_string(),
            "check_isolation" => t.check_isolation.to_string(),
            "trace_consensus" => t.trace_consensus.to_string(),
            _ => unreachable!("get() on unknown key {key}"),
        }
    }

    /// Canonical text form; `parse_str(serialize(c)) == c`.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let mut section = "";
        for &(sec, key) in KEYS {
            if sec != section {
                if !out.is_empty() {
                    out.push('\n');
                }
                out.push_str(&format!("[{sec}]\n"));
                section = sec;
            }
            out.push_str(&format!("{key} = {}\n", self.get(key)));
        }
        out
    }
}

fn bad<T>(key: &str, value: &str, reason: &str) -> Result<T, ConfigError> {
    Err(ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: reason.to_string(),
    })
}

fn parse_algorithm(key: &str, value: &str) -> Result<Algorithm, ConfigError> {
    Algorithm::from_name(value).ok_or(()).or_else(|_| {
        bad(key, value, "expected cola_qmix|qmix|cola_vdn|vdn|cola_maddpg|maddpg")
    })
}

fn parse_scenario(key: &str, value: &str) -> Result<Scenario, ConfigError> {
    Scenario::from_name(value).ok_or(()).or_else(|_| {
        bad(key, value, "expected navigation|predator_prey|pantomime|grid_predator_prey")
    })
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().or_else(|_| bad(key, value, "expected an unsigned integer"))
}

fn parse_f64(key: &str, value: &str) -> Result<f64, ConfigError> {
    value.parse().or_else(|_| bad(key, value, "expected a number"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "on" | "1" => Ok(true),
        "false" | "off" | "0" => Ok(false),
        _ => bad(key, value, "expected true|false"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_identity() {
        let text = "algorithm = cola_maddpg\nscenario = pantomime\nseed = 9\nk = 8\n";
        let cfg = RunConfig::parse_str(text).unwrap();
        assert_eq!(cfg.train.batch_size, 1024); // MADDPG default applied
        let cfg2 = RunConfig::parse_str(&cfg.serialize()).unwrap();
        assert_eq!(cfg, cfg2);
    }

    #[test]
    fn unknown_key_is_a_hard_error_naming_the_key() {
        let err = RunConfig::parse_str("leraning_rate = 0.1\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("leraning_rate"), "message was: {msg}");
    }

    #[test]
    fn sections_and_comments_are_tolerated() {
        let text = "# comment\n[run]\nalgorithm = vdn\nscenario = grid_predator_prey\n\n[train]\ngamma = 0.5\n";
        let cfg = RunConfig::parse_str(text).unwrap();
        assert_eq!(cfg.train.algorithm, Algorithm::Vdn);
        assert_eq!(cfg.train.gamma, 0.5);
    }

    #[test]
    fn env_overrides_apply_and_reject_unknown_suffixes() {
        let mut cfg = RunConfig::defaults(Algorithm::Vdn, Scenario::GridPredatorPrey);
        cfg.apply_env_overrides(
            vec![
                ("COLA_TOTAL_ENV_STEPS".to_string(), "123".to_string()),
                ("PATH".to_string(), "/usr/bin".to_string()),
            ]
            .into_iter(),
        )
        .unwrap();
        assert_eq!(cfg.train.total_env_steps, 123);

        let err = cfg
            .apply_env_overrides(vec![("COLA_NOPE".to_string(), "1".to_string())].into_iter())
            .unwrap_err();
        assert!(err.to_string().contains("nope"));
    }

    #[test]
    fn defaults_differ_by_algorithm_family() {
        let vd = RunConfig::defaults(Algorithm::ColaQmix, Scenario::GridPredatorPrey);
        assert_eq!(vd.train.gamma, 0.99);
        assert_eq!(vd.train.batch_size, 32);
        assert_eq!(vd.train.rl_learning_rate, 0.0005);
        let ac = RunConfig::defaults(Algorithm::ColaMaddpg, Scenario::Pantomime);
        assert_eq!(ac.train.gamma, 0.95);
        assert_eq!(ac.train.batch_size, 1024);
        assert_eq!(ac.train.rl_learning_rate, 0.01);
        assert_eq!(ac.train.buffer_capacity, 1_000_000);
    }
}
