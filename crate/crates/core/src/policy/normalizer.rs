//! Per-dimension min/max normalization to [-1, 1] for states and actions.
//!
//! Limits are fit once at BC time and travel with the policy checkpoint;
//! residual training reuses the stored limits so every learner sees the
//! same coordinates.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::env::{ACTION_DIM, STATE_DIM};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Normalizer {
    pub state_min: Vec<f32>,
    pub state_max: Vec<f32>,
    pub action_min: Vec<f32>,
    pub action_max: Vec<f32>,
}

impl Normalizer {
    /// Ranges [-1, 1] everywhere, making normalize and denormalize exact
    /// no-ops. Useful wherever a policy should act in raw coordinates.
    pub fn identity(state_dim: usize, action_dim: usize) -> Self {
        Normalizer {
            state_min: vec![-1.0; state_dim],
            state_max: vec![1.0; state_dim],
            action_min: vec![-1.0; action_dim],
            action_max: vec![1.0; action_dim],
        }
    }

    /// Per-dimension min/max over every state and action in the dataset.
    /// Dimensions that never vary are flagged (warn) and normalize to 0.
    pub fn fit(ds: &Dataset) -> Result<Self> {
        if ds.is_empty() || ds.trajectories.iter().all(|t| t.is_empty()) {
            return Err(Error::Config("cannot fit a normalizer on an empty dataset".into()));
        }
        let mut n = Normalizer {
            state_min: vec![f32::INFINITY; STATE_DIM],
            state_max: vec![f32::NEG_INFINITY; STATE_DIM],
            action_min: vec![f32::INFINITY; ACTION_DIM],
            action_max: vec![f32::NEG_INFINITY; ACTION_DIM],
        };
        for t in &ds.trajectories {
            for s in &t.states {
                for i in 0..STATE_DIM {
                    n.state_min[i] = n.state_min[i].min(s[i]);
                    n.state_max[i] = n.state_max[i].max(s[i]);
                }
            }
            for a in &t.actions {
                for i in 0..ACTION_DIM {
                    n.action_min[i] = n.action_min[i].min(a[i]);
                    n.action_max[i] = n.action_max[i].max(a[i]);
                }
            }
        }
        let (ds_deg, da_deg) = n.degenerate_dims();
        if !ds_deg.is_empty() || !da_deg.is_empty() {
            log::warn!(
                "normalizer fit found constant dimensions (state {ds_deg:?}, action {da_deg:?}); \
                 they will normalize to 0"
            );
        }
        Ok(n)
    }

    /// Indices of constant (min = max) dimensions: (state, action).
    pub fn degenerate_dims(&self) -> (Vec<usize>, Vec<usize>) {
        let deg = |min: &[f32], max: &[f32]| {
            min.iter()
                .zip(max)
                .enumerate()
                .filter(|(_, (lo, hi))| lo == hi)
                .map(|(i, _)| i)
                .collect::<Vec<_>>()
        };
        (
            deg(&self.state_min, &self.state_max),
            deg(&self.action_min, &self.action_max),
        )
    }

    #[inline]
    fn norm1(x: f32, lo: f32, hi: f32) -> f32 {
        if hi > lo {
            2.0 * (x - lo) / (hi - lo) - 1.0
        } else {
            0.0
        }
    }

    #[inline]
    fn denorm1(z: f32, lo: f32, hi: f32) -> f32 {
        if hi > lo {
            lo + (z + 1.0) * 0.5 * (hi - lo)
        } else {
            lo
        }
    }

    pub fn normalize_state(&self, s: &[f32], out: &mut [f32]) {
        assert_eq!(s.len(), STATE_DIM);
        assert_eq!(out.len(), STATE_DIM);
        for i in 0..STATE_DIM {
            out[i] = Self::norm1(s[i], self.state_min[i], self.state_max[i]);
        }
    }

    pub fn normalize_action(&self, a: &[f32], out: &mut [f32]) {
        assert_eq!(a.len(), ACTION_DIM);
        assert_eq!(out.len(), ACTION_DIM);
        for i in 0..ACTION_DIM {
            out[i] = Self::norm1(a[i], self.action_min[i], self.action_max[i]);
        }
    }

    pub fn denormalize_action(&self, z: &[f32], out: &mut [f32]) {
        assert_eq!(z.len(), ACTION_DIM);
        assert_eq!(out.len(), ACTION_DIM);
        for i in 0..ACTION_DIM {
            out[i] = Self::denorm1(z[i], self.action_min[i], self.action_max[i]);
        }
    }

    /// Normalizes a flattened [Tp, ACTION_DIM] chunk in place-compatible
    /// fashion (`out` may be the chunk itself length-wise).
    pub fn normalize_chunk(&self, chunk: &[f32], out: &mut [f32]) {
        assert_eq!(chunk.len() % ACTION_DIM, 0);
        assert_eq!(chunk.len(), out.len());
        for (a, o) in chunk.chunks_exact(ACTION_DIM).zip(out.chunks_exact_mut(ACTION_DIM)) {
            self.normalize_action(a, o);
        }
    }

    pub fn denormalize_chunk(&self, chunk: &[f32], out: &mut [f32]) {
        assert_eq!(chunk.len() % ACTION_DIM, 0);
        assert_eq!(chunk.len(), out.len());
        for (a, o) in chunk.chunks_exact(ACTION_DIM).zip(out.chunks_exact_mut(ACTION_DIM)) {
            self.denormalize_action(a, o);
        }
    }
}
