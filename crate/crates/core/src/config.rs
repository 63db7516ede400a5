//! One config to drive a whole run. Every section has working defaults
//! (the full-scale recipe); profiles and user files override from there.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::distill::DistillConfig;
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::policy::BcConfig;
use crate::rl::{DirectConfig, IdqlConfig, ResidualTrainConfig};
use crate::rng::{DEMO_SEED_LEN, EVAL_SEED_LEN};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub env: EnvConfig,
    /// Demonstration episodes to record (demo seed band).
    pub demos: usize,
    pub bc: BcConfig,
    pub residual: ResidualTrainConfig,
    pub direct: DirectConfig,
    pub idql: IdqlConfig,
    pub distill: DistillConfig,
    /// Episodes for final evaluations (eval seed band, paired across
    /// methods by construction).
    pub eval_episodes: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            env: EnvConfig::default(),
            demos: 50,
            bc: BcConfig::default(),
            residual: ResidualTrainConfig::default(),
            direct: DirectConfig::default(),
            idql: IdqlConfig::default(),
            distill: DistillConfig::default(),
            eval_episodes: 200,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.bc.validate()?;
        self.residual.validate()?;
        self.direct.validate()?;
        self.idql.validate()?;
        self.distill.validate()?;
        if self.demos == 0 || self.demos as u64 > DEMO_SEED_LEN {
            return Err(Error::Config(format!(
                "demos must be in 1..={DEMO_SEED_LEN}, got {}",
                self.demos
            )));
        }
        if self.eval_episodes == 0 || self.eval_episodes as u64 > EVAL_SEED_LEN {
            return Err(Error::Config(format!(
                "eval_episodes must be in 1..={EVAL_SEED_LEN}, got {}",
                self.eval_episodes
            )));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg = RunConfig::from_json(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses without validating, so callers can apply overrides first.
    pub fn from_json(text: &str) -> std::result::Result<RunConfig, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("cannot serialize config: {e}")))?;
        text.push('\n');
        fs::write(path, text)
            .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn unknown_fields_are_rejected_with_context() {
        let err = RunConfig::from_json(r#"{"sed": 1}"#).unwrap_err();
        assert!(err.to_string().contains("sed"), "error was: {err}");
    }

    #[test]
    fn partial_overrides_keep_other_defaults() {
        let cfg = RunConfig::from_json(r#"{"seed": 7, "demos": 10}"#).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.demos, 10);
        assert_eq!(cfg.eval_episodes, RunConfig::default().eval_episodes);
        cfg.validate().unwrap();
    }

    #[test]
    fn nested_sections_parse_and_cascade_validation() {
        let cfg = RunConfig::from_json(
            r#"{"residual": {"ppo": {"num_envs": 8, "steps_per_iter": 40}}}"#,
        )
        .unwrap();
        assert_eq!(cfg.residual.ppo.num_envs, 8);
        assert_eq!(cfg.residual.ppo.steps_per_iter, 40);
        cfg.validate().unwrap();

        let bad = RunConfig::from_json(r#"{"residual": {"alpha": 2.0}}"#).unwrap();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        let mut cfg = RunConfig::default();
        cfg.seed = 99;
        cfg.save(&path).unwrap();
        let back = RunConfig::load(&path).unwrap();
        assert_eq!(back.seed, 99);
    }
}
