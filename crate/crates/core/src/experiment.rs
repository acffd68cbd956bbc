//! End-to-end runs: demonstrations, training, and evaluation from one config.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::envsim::generate_demonstrations;
use crate::error::{Error, Result};
use crate::evalbench::{evaluate, markov_fit, EvalConfig, EvalReport, EvalTask, Predictor};
use crate::gailtrain::{toml_key, train, TrainConfig, TrainOptions, TrainOutput};
use crate::types::Trajectory;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Expert episodes used as demonstrations.
    pub demo_episodes: usize,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            demo_episodes: 20,
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.demo_episodes == 0 {
            return Err(Error::config("demo_episodes", "must be at least 1"));
        }
        if self.eval.test_episodes == 0 {
            return Err(Error::config("eval.test_episodes", "must be at least 1"));
        }
        if self.eval.gen_samples == 0 {
            return Err(Error::config("eval.gen_samples", "must be at least 1"));
        }
        self.train.validate()
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(toml_key(&e), e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Same experiment under another seed: training, environment and evaluation.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.train.seed = seed;
        c.train.env.set_seed(seed);
        c.eval.seed = seed;
        c
    }

    pub fn demonstrations(&self) -> Result<Vec<Trajectory>> {
        generate_demonstrations(&self.train.env, self.demo_episodes)
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub demos: Vec<Trajectory>,
    pub trained: TrainOutput,
    pub report: EvalReport,
}

/// Evaluates a trained model against both baselines, the Markov model fitted
/// on `demos`.
pub fn evaluate_trained(
    cfg: &ExperimentConfig,
    trained: &TrainOutput,
    demos: &[Trajectory],
    task: EvalTask,
) -> Result<EvalReport> {
    let markov = markov_fit(demos)?;
    let p = Predictor {
        policy: &trained.policy,
        constraints: trained.constraints(),
        g_sampling: cfg.train.g_sampling,
    };
    evaluate(&cfg.train.env, &p, &markov, &cfg.eval, task)
}

/// Generates demonstrations, trains, and evaluates.
pub fn run_experiment(cfg: &ExperimentConfig, opts: TrainOptions, task: EvalTask) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let demos = cfg.demonstrations()?;
    let trained = train(&cfg.train, &demos, opts)?;
    let report = evaluate_trained(cfg, &trained, &demos, task)?;
    Ok(ExperimentOutcome { demos, trained, report })
}

/// Median of a sample; the mean of the middle pair for even sizes.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.to_vec();
    if v.is_empty() || v.iter().any(|x| x.is_nan()) {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_examples() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[1.0, f64::NAN]), None);
    }

    #[test]
    fn config_round_trip_and_key_errors() {
        let cfg = ExperimentConfig::default().with_seed(3);
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
        match ExperimentConfig::from_toml_str("demo_episodez = 3") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "demo_episodez"),
            other => panic!("{other:?}"),
        }
        assert!(ExperimentConfig::from_toml_str("demo_episodes = 0").is_err());
        assert_eq!(ExperimentConfig::from_toml_str("").unwrap(), ExperimentConfig::default());
    }
}
