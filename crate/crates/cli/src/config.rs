use std::path::Path;

use anyhow::{bail, Context, Result};
use mtse::asr_model::AsrModelConfig;
use mtse::datasim::CorpusConfig;
use mtse::se_model::SeModelConfig;
use mtse::trainer::TrainSchedule;
use serde::{Deserialize, Serialize};

/// Everything a run depends on besides its input files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Master seed; `--seed` takes precedence.
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub se_model: SeModelConfig,
    pub asr_model: AsrModelConfig,
    pub se_training: TrainSchedule,
    pub asr_training: TrainSchedule,
    pub mtl_training: TrainSchedule,
    pub sweep: SweepConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub probabilities: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            probabilities: vec![0.0, 0.5, 1.0],
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            corpus: CorpusConfig::default(),
            se_model: SeModelConfig::default(),
            asr_model: AsrModelConfig::default(),
            se_training: TrainSchedule {
                eval_every: 100,
                ..TrainSchedule::default()
            },
            asr_training: TrainSchedule {
                iterations: 1500,
                learning_rate: 2e-3,
                ..TrainSchedule::default()
            },
            mtl_training: TrainSchedule::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                Self::parse(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => Self::default(),
        };
        if let Some(s) = seed {
            cfg.seed = s;
        }
        for s in [&mut cfg.se_training, &mut cfg.asr_training, &mut cfg.mtl_training] {
            s.seed = cfg.seed;
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.corpus.validate()?;
        cfg.se_model.validate()?;
        cfg.asr_model.validate()?;
        for s in [&cfg.se_training, &cfg.asr_training, &cfg.mtl_training] {
            s.validate()?;
        }
        if cfg.sweep.probabilities.len() < 2 {
            bail!("sweep.probabilities needs at least two values");
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_roundtrips() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::parse("sede = 3").is_err());
        assert!(ExperimentConfig::parse("[mtl_training]\nse_step_prob = 0.5").is_err());
        assert!(ExperimentConfig::parse("[se_model]\nlstm_hiden = 3").is_err());
    }

    #[test]
    fn seed_flag_overrides_every_schedule() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "seed = 4\n[mtl_training]\niterations = 7").unwrap();
        let cfg = ExperimentConfig::load(Some(&p), None).unwrap();
        assert_eq!((cfg.seed, cfg.mtl_training.seed, cfg.mtl_training.iterations), (4, 4, 7));
        let cfg = ExperimentConfig::load(Some(&p), Some(11)).unwrap();
        assert_eq!((cfg.se_training.seed, cfg.asr_training.seed), (11, 11));
    }
}
