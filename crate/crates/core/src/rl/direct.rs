//! Direct PPO fine-tuning of the chunked regression policy.
//!
//! The policy's net becomes the mean of a Gaussian over whole flattened
//! chunks, so one decision of the MDP spans `exec_horizon` env steps: the
//! reward is the sum over those steps and the discount per decision is
//! gamma^exec_horizon. A KL penalty against the frozen starting policy
//! keeps the fine-tuned mean from abandoning the behavior prior, which the
//! sparse reward alone would happily destroy.

use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distill::eval_policy;
use crate::env::{reset, EnvConfig, EnvState, STATE_DIM};
use crate::error::{Error, Result};
use crate::metrics::TrainRow;
use crate::numerics::{Adam, Net, ResMlp, Scratch};
use crate::policy::{ChunkExecutor, ChunkPolicy, ChunkSpec, MlpPolicy, Normalizer, ROLLOUT_STREAM};
use crate::residual::{Critic, GaussianActor};
use crate::rng::{named_rng, train_episode_seed, EVAL_SEED_BASE};

use super::ppo::{ppo_update, ActorOptimizer, KlReference, PpoConfig};
use super::{execute_chunk_prefix, RolloutBuffer};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DirectConfig {
    pub ppo: PpoConfig,
    /// Weight of the KL penalty against the frozen initial policy.
    pub kl_coef: f64,
    /// Initial (learned, state-independent) log-std over chunk entries.
    /// Tight by design: the pretrained mean is already competent.
    pub init_log_std: f32,
    pub critic_hidden: Vec<usize>,
    pub eval_episodes: usize,
}

impl Default for DirectConfig {
    fn default() -> Self {
        DirectConfig {
            ppo: PpoConfig {
                update_epochs: 1,
                lr_actor: 1e-4,
                lr_critic: 1e-4,
                ..PpoConfig::default()
            },
            kl_coef: 0.5,
            init_log_std: -4.0,
            critic_hidden: vec![256, 256],
            eval_episodes: 32,
        }
    }
}

impl DirectConfig {
    pub fn validate(&self) -> Result<()> {
        self.ppo.validate()?;
        if self.kl_coef < 0.0 {
            return Err(Error::Config("kl_coef must be non-negative".into()));
        }
        if self.critic_hidden.is_empty() {
            return Err(Error::Config("critic_hidden must be non-empty".into()));
        }
        if self.eval_episodes == 0 {
            return Err(Error::Config("eval_episodes must be positive".into()));
        }
        Ok(())
    }
}

pub struct DirectResult {
    /// The fine-tuned policy: tuned mean net under the original chunk spec
    /// and normalizer.
    pub policy: MlpPolicy,
    /// Final per-entry log-std of the chunk Gaussian.
    pub log_std: Vec<f32>,
    pub critic: Critic,
    pub rows: Vec<TrainRow>,
}

/// Deterministic view of the actor mean as a chunk policy, for evaluation
/// without copying the net.
struct MeanChunkPolicy<'a> {
    net: &'a ResMlp,
    chunk: &'a ChunkSpec,
    normalizer: &'a Normalizer,
}

impl ChunkPolicy for MeanChunkPolicy<'_> {
    fn chunk_spec(&self) -> &ChunkSpec {
        self.chunk
    }

    fn normalizer(&self) -> &Normalizer {
        self.normalizer
    }

    fn predict_chunk(
        &self,
        state_raw: &[f32],
        _rng: &mut ChaCha8Rng,
        scratch: &mut Scratch,
    ) -> Vec<f32> {
        let mut sn = [0.0f32; STATE_DIM];
        self.normalizer.normalize_state(state_raw, &mut sn);
        let mut y = Vec::new();
        self.net.forward_batch(&sn, 1, &mut y, scratch);
        for v in &mut y {
            *v = v.clamp(-1.0, 1.0);
        }
        y
    }
}

struct ChunkLane {
    env: EnvState,
    rng: ChaCha8Rng,
    episodes_started: u64,
}

impl ChunkLane {
    fn start(lane_idx: usize, run_seed: u64, cfg: &EnvConfig) -> Result<Self> {
        let mut lane = ChunkLane {
            env: reset(cfg, 0)?,
            rng: named_rng(0, ROLLOUT_STREAM),
            episodes_started: 0,
        };
        lane.next_episode(lane_idx, run_seed, cfg)?;
        Ok(lane)
    }

    fn next_episode(&mut self, lane_idx: usize, run_seed: u64, cfg: &EnvConfig) -> Result<()> {
        let counter = ((lane_idx as u64) << 32) | self.episodes_started;
        let episode_seed = train_episode_seed(run_seed, counter);
        self.env = reset(cfg, episode_seed)?;
        self.rng = named_rng(episode_seed, ROLLOUT_STREAM);
        self.episodes_started += 1;
        Ok(())
    }
}

/// PPO over whole chunks, starting from (and regularized toward) a cloned
/// behavior policy. The learning rates stay constant; this recipe relies on
/// single-epoch updates and the KL anchor instead of a schedule.
pub fn train_mlp_direct(
    policy: &MlpPolicy,
    env_cfg: &EnvConfig,
    cfg: &DirectConfig,
    seed: u64,
    mut on_row: impl FnMut(&TrainRow) -> Result<()>,
) -> Result<DirectResult> {
    cfg.validate()?;
    policy.check_dims()?;
    let start = Instant::now();
    let chunk = policy.chunk;
    let chunk_dim = chunk.chunk_dim();
    let exec = chunk.exec_horizon;
    let chunk_steps = cfg.ppo.steps_per_iter.div_ceil(exec);
    let gamma_chunk = cfg.ppo.gamma.powi(exec as i32);

    let mut actor = GaussianActor::new(policy.net.clone(), cfg.init_log_std);
    let frozen = actor.clone();
    let mut critic = Critic::new(
        STATE_DIM,
        &cfg.critic_hidden,
        &mut named_rng(seed, "critic-init"),
    )?;
    let mut actor_opt = ActorOptimizer::new(&actor);
    let mut critic_opt = Adam::new(critic.net.param_count(), 0.0);

    let mut lanes = (0..cfg.ppo.num_envs)
        .map(|i| ChunkLane::start(i, seed, env_cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut buffer = RolloutBuffer::new(cfg.ppo.num_envs, chunk_steps, STATE_DIM, chunk_dim);

    let mut rows = Vec::new();
    let mut env_steps: u64 = 0;
    let mut it: u64 = 0;

    while env_steps < cfg.ppo.total_env_steps {
        let mut successes_in_buffer: u64 = 0;
        for (lane_idx, lane) in lanes.iter_mut().enumerate() {
            let mut sn = [0.0f32; STATE_DIM];
            let mut last_done = false;
            for t in 0..chunk_steps {
                let state_raw = lane.env.to_vec();
                policy.normalizer.normalize_state(&state_raw, &mut sn);
                let (chunk_action, log_prob) = actor.sample(&sn, &mut lane.rng);
                let value = critic.value1(&sn);

                let out =
                    execute_chunk_prefix(&mut lane.env, &chunk_action, exec, &policy.normalizer, env_cfg);
                env_steps += out.env_steps as u64;
                if out.success {
                    successes_in_buffer += 1;
                }
                buffer.set(t, lane_idx, &sn, &chunk_action, log_prob, out.reward, out.done, value);
                last_done = out.done;
                if out.done {
                    lane.next_episode(lane_idx, seed, env_cfg)?;
                }
            }
            buffer.bootstrap[lane_idx] = if last_done {
                0.0
            } else {
                let state_raw = lane.env.to_vec();
                policy.normalizer.normalize_state(&state_raw, &mut sn);
                critic.value1(&sn)
            };
        }
        assert_eq!(
            buffer.reward_sum(),
            successes_in_buffer as f64,
            "chunk rewards must partition the sparse episode reward"
        );

        buffer.finish(gamma_chunk, cfg.ppo.gae_lambda);
        let stats = ppo_update(
            &mut actor,
            &mut critic,
            &mut actor_opt,
            &mut critic_opt,
            &buffer,
            &cfg.ppo,
            cfg.ppo.lr_actor,
            cfg.ppo.lr_critic,
            Some(KlReference {
                actor: &frozen,
                coef: cfg.kl_coef,
            }),
        )?;

        let mean_view = MeanChunkPolicy {
            net: &actor.mean_net,
            chunk: &chunk,
            normalizer: &policy.normalizer,
        };
        let eval = eval_policy(
            |_| ChunkExecutor::new(&mean_view),
            env_cfg,
            cfg.eval_episodes,
            EVAL_SEED_BASE,
        )?;

        it += 1;
        let row = TrainRow {
            iter: it,
            env_steps,
            eval_success: eval.success_rate,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            approx_kl: stats.approx_kl,
            entropy: stats.entropy,
            clip_frac: stats.clip_frac,
            lr_actor: cfg.ppo.lr_actor,
            lr_critic: cfg.ppo.lr_critic,
            wallclock_s: start.elapsed().as_secs_f64(),
        };
        on_row(&row)?;
        rows.push(row);
    }

    Ok(DirectResult {
        policy: MlpPolicy {
            net: actor.mean_net.clone(),
            chunk,
            normalizer: policy.normalizer.clone(),
        },
        log_std: actor.log_std,
        critic,
        rows,
    })
}
