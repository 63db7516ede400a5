//! Action chunking: policies predict `pred_horizon` future actions per
//! query and the executor replays the first `exec_horizon` before
//! re-querying.

use serde::{Deserialize, Serialize};

use crate::data::Trajectory;
use crate::env::{ACTION_DIM, STATE_DIM};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields, default)]
pub struct ChunkSpec {
    /// Actions predicted per query (Tp).
    pub pred_horizon: usize,
    /// Actions executed per query (Texec <= Tp).
    pub exec_horizon: usize,
    /// Observation frames per query; fixed at 1.
    pub obs_horizon: usize,
}

impl Default for ChunkSpec {
    fn default() -> Self {
        ChunkSpec {
            pred_horizon: 8,
            exec_horizon: 4,
            obs_horizon: 1,
        }
    }
}

impl ChunkSpec {
    pub fn new(pred_horizon: usize, exec_horizon: usize) -> Result<Self> {
        let spec = ChunkSpec {
            pred_horizon,
            exec_horizon,
            obs_horizon: 1,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Single-action spec used by the unchunked baseline.
    pub fn single() -> Self {
        ChunkSpec {
            pred_horizon: 1,
            exec_horizon: 1,
            obs_horizon: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pred_horizon == 0 || self.exec_horizon == 0 {
            return Err(Error::Config("chunk horizons must be positive".into()));
        }
        if self.exec_horizon > self.pred_horizon {
            return Err(Error::Config(format!(
                "exec_horizon ({}) exceeds pred_horizon ({})",
                self.exec_horizon, self.pred_horizon
            )));
        }
        if self.obs_horizon != 1 {
            return Err(Error::Config(format!(
                "obs_horizon is fixed at 1, got {}",
                self.obs_horizon
            )));
        }
        Ok(())
    }

    /// Flattened chunk length: pred_horizon * action dim.
    pub fn chunk_dim(&self) -> usize {
        self.pred_horizon * ACTION_DIM
    }
}

/// Windows a trajectory into (state, flattened action chunk) training
/// pairs, one per action index; chunks reaching past the end repeat the
/// final action. Values are raw (unnormalized).
pub fn make_chunk_targets(
    traj: &Trajectory,
    chunk: &ChunkSpec,
) -> Vec<([f32; STATE_DIM], Vec<f32>)> {
    let n = traj.actions.len();
    let mut pairs = Vec::with_capacity(n);
    for t in 0..n {
        let mut flat = Vec::with_capacity(chunk.chunk_dim());
        for j in 0..chunk.pred_horizon {
            let idx = (t + j).min(n - 1);
            flat.extend_from_slice(&traj.actions[idx]);
        }
        pairs.push((traj.states[t], flat));
    }
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvConfig;
    use proptest::prelude::*;

    fn traj_with_actions(n: usize) -> Trajectory {
        let mut states = Vec::with_capacity(n + 1);
        let mut actions = Vec::with_capacity(n);
        for t in 0..=n {
            let mut s = [0.0f32; STATE_DIM];
            s[0] = t as f32;
            states.push(s);
        }
        for t in 0..n {
            let mut a = [0.0f32; ACTION_DIM];
            a[0] = 10.0 + t as f32;
            actions.push(a);
        }
        Trajectory {
            states,
            actions,
            rewards: vec![0.0; n],
            success: false,
            seed: 0,
            config_digest: EnvConfig::default().digest(),
            origin: None,
        }
    }

    #[test]
    fn three_actions_tp2_windows_and_pads() {
        let traj = traj_with_actions(3);
        let spec = ChunkSpec::new(2, 1).unwrap();
        let pairs = make_chunk_targets(&traj, &spec);
        assert_eq!(pairs.len(), 3);
        // (s0,[a0,a1]), (s1,[a1,a2]), (s2,[a2,a2])
        assert_eq!(pairs[0].0[0], 0.0);
        assert_eq!((pairs[0].1[0], pairs[0].1[ACTION_DIM]), (10.0, 11.0));
        assert_eq!((pairs[1].1[0], pairs[1].1[ACTION_DIM]), (11.0, 12.0));
        assert_eq!((pairs[2].1[0], pairs[2].1[ACTION_DIM]), (12.0, 12.0));
    }

    #[test]
    fn tp1_reduces_to_per_step_pairs() {
        let traj = traj_with_actions(4);
        let pairs = make_chunk_targets(&traj, &ChunkSpec::single());
        assert_eq!(pairs.len(), 4);
        for (t, (s, c)) in pairs.iter().enumerate() {
            assert_eq!(s[0], t as f32);
            assert_eq!(c.len(), ACTION_DIM);
            assert_eq!(c[0], 10.0 + t as f32);
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(ChunkSpec::new(0, 0).is_err());
        assert!(ChunkSpec::new(4, 5).is_err());
        let bad = ChunkSpec {
            obs_horizon: 2,
            ..ChunkSpec::default()
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn pair_count_and_padding(n in 1usize..40, tp in 1usize..12) {
            let traj = traj_with_actions(n);
            let spec = ChunkSpec::new(tp, 1).unwrap();
            let pairs = make_chunk_targets(&traj, &spec);
            prop_assert_eq!(pairs.len(), n);
            for (t, (s, c)) in pairs.iter().enumerate() {
                prop_assert_eq!(c.len(), spec.chunk_dim());
                prop_assert_eq!(s[0], t as f32);
                for j in 0..tp {
                    let expect = 10.0 + (t + j).min(n - 1) as f32;
                    prop_assert_eq!(c[j * ACTION_DIM], expect);
                }
            }
        }
    }
}
