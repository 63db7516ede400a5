//! On-policy fine-tuning: PPO with GAE for the residual policy, direct
//! chunk-level PPO on the MLP baseline, and online value-guided chunk
//! selection over the frozen diffusion policy.

mod buffer;
mod direct;
mod gae;
mod idql;
mod ppo;
mod residual_trainer;

pub use buffer::RolloutBuffer;
pub use direct::{train_mlp_direct, DirectConfig, DirectResult};
pub use gae::{compute_gae, normalize_advantages};
pub use idql::{
    idql_q_update, idql_select, train_idql, IdqlConfig, IdqlController, IdqlResult, IdqlSelection,
    QNet,
};
pub use ppo::{ppo_update, ActorOptimizer, KlReference, PpoConfig, PpoUpdateStats};
pub use residual_trainer::{train_residual_ppo, ResidualTrainConfig, ResidualTrainResult};

use crate::env::{step, Action, EnvConfig, EnvState, ACTION_DIM};
use crate::policy::Normalizer;

/// Result of executing one chunk prefix in the env.
pub(crate) struct ChunkStepOut {
    pub reward: f32,
    pub env_steps: u32,
    pub done: bool,
    pub success: bool,
}

/// Executes up to `exec_horizon` leading rows of a flattened normalized
/// chunk, clamping each row to [-1, 1] and denormalizing like any executed
/// chunk. Stops early when the episode ends; the reward is the sum over the
/// steps actually taken. This is the transition of the chunk-level MDP the
/// direct and selection baselines train on.
pub(crate) fn execute_chunk_prefix(
    env: &mut EnvState,
    chunk_norm: &[f32],
    exec_horizon: usize,
    normalizer: &Normalizer,
    cfg: &EnvConfig,
) -> ChunkStepOut {
    let mut out = ChunkStepOut {
        reward: 0.0,
        env_steps: 0,
        done: false,
        success: false,
    };
    let mut clamped = [0.0f32; ACTION_DIM];
    let mut raw = [0.0f32; ACTION_DIM];
    for row in chunk_norm.chunks_exact(ACTION_DIM).take(exec_horizon) {
        for (c, &v) in clamped.iter_mut().zip(row) {
            *c = v.clamp(-1.0, 1.0);
        }
        normalizer.denormalize_action(&clamped, &mut raw);
        let s = step(env, &Action::from_vec(&raw), cfg);
        out.reward += s.reward;
        out.env_steps += 1;
        out.success |= s.info.success;
        if s.done {
            out.done = true;
            break;
        }
    }
    out
}
