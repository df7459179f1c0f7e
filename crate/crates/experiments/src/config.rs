//! Experiment configuration: a flat TOML table. Unknown keys are rejected
//! so that a misspelled hyperparameter never silently falls back to its
//! default.
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `environment` | `"restart"` | `restart`, `restart-heterogeneous`, `circular`, `deadline`, `deadline-heterogeneous` |
//! | `algorithm` | `"qwi"` | `qwi`, `qwinn`, `q`, `dqn`, `neurwin`, `oracle` |
//! | `arms`, `active` | 5, 1 | N and M |
//! | `gamma`, `epsilon` | 0.9, 1.0 | discount and exploration rate |
//! | `horizon` | 20000 | training steps (NeurWIN: mini-batches) |
//! | `seed` | 0 | base seed; replication `r` uses `seed + r` |
//! | `checkpoint_every` | 500 | metric cadence in steps |
//! | `replications` | 1 | independent runs |
//! | `output_dir` | `"results"` | where logs are written |
//! | `states` | family default | restart/circular state count |
//! | `restart_x`, `restart_y` | 0.9 | restart parameters |
//! | `deadline_cost`, `deadline_grid` | 0.8, `"standard"` | deadline cost and grid (`standard` or `large`) |
//! | `hidden` | learner default | hidden layer widths |
//! | `learning_rate` | 0.001 | neural learners |
//! | `neurwin_sensitivity`, `neurwin_episodes`, `neurwin_episode_length` | 1, 5, 50 | NeurWIN |
//! | `bre_budget` | 2000000 | largest `|S| * C(N, M)` evaluated exactly |
//! | `misordering_samples` | 10000 | joint states sampled when enumeration is over budget |
//! | `value_eval` | `"auto"` | `auto` (only when BRE is skipped), `always`, `never` |
//! | `rollouts`, `rollout_length` | 64, 200 | Monte-Carlo value evaluation |
//! | `spectrum_rows`, `spectrum_arm` | 256, 0 | Bellman-error batch for the spectrum |

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{config_error, io_error, ExperimentError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Environment {
    Restart,
    RestartHeterogeneous,
    Circular,
    Deadline,
    DeadlineHeterogeneous,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Qwi,
    Qwinn,
    Q,
    Dqn,
    Neurwin,
    Oracle,
}

impl Algorithm {
    /// Learners that maintain per-state index estimates.
    pub fn is_index_learner(self) -> bool {
        matches!(self, Algorithm::Qwi | Algorithm::Qwinn | Algorithm::Neurwin)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeadlineGrid {
    Standard,
    Large,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueEval {
    Auto,
    Always,
    Never,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub environment: Environment,
    pub algorithm: Algorithm,
    pub arms: usize,
    pub active: usize,
    pub gamma: f64,
    pub epsilon: f64,
    pub horizon: u64,
    pub seed: u64,
    pub checkpoint_every: u64,
    pub replications: usize,
    pub output_dir: PathBuf,
    pub states: Option<usize>,
    pub restart_x: f64,
    pub restart_y: f64,
    pub deadline_cost: f64,
    pub deadline_grid: DeadlineGrid,
    pub hidden: Option<Vec<usize>>,
    pub learning_rate: f64,
    pub neurwin_sensitivity: f64,
    pub neurwin_episodes: usize,
    pub neurwin_episode_length: usize,
    pub bre_budget: u64,
    pub misordering_samples: usize,
    pub value_eval: ValueEval,
    pub rollouts: usize,
    pub rollout_length: usize,
    pub spectrum_rows: usize,
    pub spectrum_arm: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            environment: Environment::Restart,
            algorithm: Algorithm::Qwi,
            arms: 5,
            active: 1,
            gamma: 0.9,
            epsilon: 1.0,
            horizon: 20_000,
            seed: 0,
            checkpoint_every: 500,
            replications: 1,
            output_dir: PathBuf::from("results"),
            states: None,
            restart_x: 0.9,
            restart_y: 0.9,
            deadline_cost: 0.8,
            deadline_grid: DeadlineGrid::Standard,
            hidden: None,
            learning_rate: 1e-3,
            neurwin_sensitivity: 1.0,
            neurwin_episodes: 5,
            neurwin_episode_length: 50,
            bre_budget: 2_000_000,
            misordering_samples: 10_000,
            value_eval: ValueEval::Auto,
            rollouts: 64,
            rollout_length: 200,
            spectrum_rows: 256,
            spectrum_arm: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// Reads and validates a config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_error(path))?;
        let config = Self::from_toml_str(&text).map_err(|source| ExperimentError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.active == 0 || self.active >= self.arms {
            return Err(config_error(format!(
                "need 0 < active < arms, got active = {}, arms = {}",
                self.active, self.arms
            )));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(config_error(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(config_error(format!("epsilon must lie in [0, 1], got {}", self.epsilon)));
        }
        if self.replications == 0 {
            return Err(config_error("replications must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(config_error("learning_rate must be positive"));
        }
        if self.hidden.as_ref().is_some_and(|h| h.is_empty() || h.contains(&0)) {
            return Err(config_error("hidden widths must be a nonempty list of positive sizes"));
        }
        if self.rollouts == 0 || self.rollout_length == 0 {
            return Err(config_error("rollouts and rollout_length must be positive"));
        }
        if self.misordering_samples == 0 || self.spectrum_rows == 0 {
            return Err(config_error("misordering_samples and spectrum_rows must be positive"));
        }
        if self.spectrum_arm >= self.arms {
            return Err(config_error("spectrum_arm out of range"));
        }
        if self.states.is_some_and(|s| s < 2) {
            return Err(config_error("states must be at least 2"));
        }
        match self.environment {
            Environment::Deadline | Environment::DeadlineHeterogeneous if self.states.is_some() => {
                return Err(config_error("deadline state spaces are set by deadline_grid, not states"));
            }
            Environment::DeadlineHeterogeneous if !self.arms.is_multiple_of(4) => {
                return Err(config_error("deadline-heterogeneous needs a multiple of 4 arms (four cost groups)"));
            }
            _ => {}
        }
        Ok(())
    }

    /// Seed of replication `r`.
    pub fn replication_seed(&self, r: usize) -> u64 {
        self.seed.wrapping_add(r as u64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_missing_keys() {
        let c = ExperimentConfig::from_toml_str("algorithm = \"qwinn\"\narms = 3\n").unwrap();
        assert_eq!(c.algorithm, Algorithm::Qwinn);
        assert_eq!(c.arms, 3);
        assert_eq!(c.gamma, 0.9);
        assert_eq!(c.epsilon, 1.0);
        assert_eq!(c.checkpoint_every, 500);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml_str("learning_rat = 0.1\n").is_err());
        assert!(ExperimentConfig::from_toml_str("algorithm = \"sarsa\"\n").is_err());
    }

    #[test]
    fn round_trip() {
        let c = ExperimentConfig {
            environment: Environment::DeadlineHeterogeneous,
            arms: 8,
            hidden: Some(vec![8, 8]),
            ..ExperimentConfig::default()
        };
        let back = ExperimentConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn validation() {
        let ok = ExperimentConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            ExperimentConfig { active: 5, ..ok.clone() },
            ExperimentConfig { gamma: 1.0, ..ok.clone() },
            ExperimentConfig { epsilon: 1.5, ..ok.clone() },
            ExperimentConfig { replications: 0, ..ok.clone() },
            ExperimentConfig { hidden: Some(vec![]), ..ok.clone() },
            ExperimentConfig {
                environment: Environment::Deadline,
                states: Some(10),
                ..ok.clone()
            },
            ExperimentConfig {
                environment: Environment::DeadlineHeterogeneous,
                arms: 6,
                ..ok.clone()
            },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }
}
