//! Regression policies: a skip-connected MLP maps the state directly to an
//! action (single-step variant) or an action chunk (chunked variant).

use rand_chacha::ChaCha8Rng;

use super::{ChunkSpec, Normalizer};
use crate::env::STATE_DIM;
use crate::error::{Error, Result};
use crate::numerics::{Activation, Net, ResMlp, Scratch};

#[derive(Clone, Debug)]
pub struct MlpPolicy {
    /// state(15) -> flattened chunk (pred_horizon * 5), normalized space.
    pub net: ResMlp,
    pub chunk: ChunkSpec,
    pub normalizer: Normalizer,
}

impl MlpPolicy {
    pub fn new(
        chunk: ChunkSpec,
        normalizer: Normalizer,
        width: usize,
        blocks: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        chunk.validate()?;
        let net = ResMlp::new(
            STATE_DIM,
            width,
            blocks,
            chunk.chunk_dim(),
            Activation::Relu,
            Activation::Linear,
            rng,
        )?;
        Ok(MlpPolicy {
            net,
            chunk,
            normalizer,
        })
    }

    pub fn check_dims(&self) -> Result<()> {
        if self.net.in_dim() != STATE_DIM || self.net.out_dim() != self.chunk.chunk_dim() {
            return Err(Error::Dependency(format!(
                "policy net dims {}->{} do not match chunk spec (want {}->{})",
                self.net.in_dim(),
                self.net.out_dim(),
                STATE_DIM,
                self.chunk.chunk_dim()
            )));
        }
        Ok(())
    }

    /// Deterministic chunk prediction in normalized space, clamped to
    /// [-1, 1] like every executed chunk.
    pub fn predict(&self, state_norm: &[f32], scratch: &mut Scratch) -> Vec<f32> {
        let mut y = Vec::new();
        self.net.forward_batch(state_norm, 1, &mut y, scratch);
        for v in &mut y {
            *v = v.clamp(-1.0, 1.0);
        }
        y
    }
}
