//! Trajectory datasets on disk: JSON-lines, one trajectory per line, each
//! line carrying the digest of the env config it was generated under.
//! Readers refuse mismatched digests unless explicitly overridden.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{EnvConfig, ACTION_DIM, STATE_DIM};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Trajectory {
    pub states: Vec<[f32; STATE_DIM]>,
    pub actions: Vec<[f32; ACTION_DIM]>,
    pub rewards: Vec<f32>,
    pub success: bool,
    pub seed: u64,
    pub config_digest: String,
    /// Provenance tag set by dataset mixing ("d1"/"d2"); absent otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<String>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    fn check_shape(&self, line: usize) -> Result<()> {
        if self.states.len() != self.actions.len() + 1 || self.rewards.len() != self.actions.len() {
            return Err(Error::Dependency(format!(
                "trajectory on line {line} is malformed: {} states, {} actions, {} rewards",
                self.states.len(),
                self.actions.len(),
                self.rewards.len()
            )));
        }
        Ok(())
    }
}

/// In-memory dataset plus the digest all member trajectories share.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn new(trajectories: Vec<Trajectory>) -> Self {
        Dataset { trajectories }
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Total number of (state, action) steps.
    pub fn step_count(&self) -> usize {
        self.trajectories.iter().map(|t| t.len()).sum()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for t in &self.trajectories {
            serde_json::to_writer(&mut w, t)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Loads a JSON-lines dataset, checking every line's digest against
    /// `expect` (pass `None` to skip the check, e.g. for inspection tools).
    pub fn load(path: &Path, expect: Option<&EnvConfig>) -> Result<Dataset> {
        let f = File::open(path).map_err(|e| {
            Error::Dependency(format!("cannot open dataset {}: {e}", path.display()))
        })?;
        let expect_digest = expect.map(|c| c.digest());
        let mut trajectories = Vec::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let t: Trajectory = serde_json::from_str(&line).map_err(|e| {
                Error::Dependency(format!(
                    "malformed trajectory on line {} of {}: {e}",
                    i + 1,
                    path.display()
                ))
            })?;
            t.check_shape(i + 1)?;
            if let Some(d) = &expect_digest {
                if &t.config_digest != d {
                    return Err(Error::Dependency(format!(
                        "dataset {} line {} was generated under a different env config \
                         (digest {}.. vs expected {}..); pass the matching config or override",
                        path.display(),
                        i + 1,
                        &t.config_digest[..12.min(t.config_digest.len())],
                        &d[..12]
                    )));
                }
            }
            trajectories.push(t);
        }
        Ok(Dataset { trajectories })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{rollout, EnvConfig, ScriptedExpert};

    #[test]
    fn round_trips_through_jsonl() {
        let cfg = EnvConfig::default();
        let mut expert = ScriptedExpert::with_seed(3);
        let t1 = rollout(&mut expert, &cfg, 3, None).unwrap();
        let t2 = rollout(&mut expert, &cfg, 4, None).unwrap();
        let ds = Dataset::new(vec![t1, t2]);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demos.jsonl");
        ds.save(&path).unwrap();
        let back = Dataset::load(&path, Some(&cfg)).unwrap();
        assert_eq!(ds.trajectories, back.trajectories);
    }

    #[test]
    fn digest_mismatch_is_refused_but_override_loads() {
        let cfg = EnvConfig::default();
        let mut expert = ScriptedExpert::with_seed(5);
        let t = rollout(&mut expert, &cfg, 5, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demos.jsonl");
        Dataset::new(vec![t]).save(&path).unwrap();

        let other = EnvConfig {
            pos_tol: 0.02,
            ..EnvConfig::default()
        };
        assert!(matches!(
            Dataset::load(&path, Some(&other)),
            Err(Error::Dependency(_))
        ));
        assert_eq!(Dataset::load(&path, None).unwrap().len(), 1);
    }

    #[test]
    fn saving_twice_is_byte_identical() {
        let cfg = EnvConfig::default();
        let mut expert = ScriptedExpert::with_seed(8);
        let t = rollout(&mut expert, &cfg, 8, None).unwrap();
        let ds = Dataset::new(vec![t]);
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
        ds.save(&p1).unwrap();
        ds.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }
}
