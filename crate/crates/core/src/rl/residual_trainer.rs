//! Sparse-reward PPO over a Gaussian residual on a frozen chunked base
//! policy. The base is borrowed immutably for the whole run, so its
//! parameters cannot drift; only the residual actor and the critic learn.

use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distill::eval_policy;
use crate::env::{reset, step, Action, EnvConfig, EnvState, ACTION_DIM, STATE_DIM};
use crate::error::Result;
use crate::metrics::TrainRow;
use crate::numerics::{Adam, CosineSchedule, Net, Scratch};
use crate::policy::{ChunkPolicy, ROLLOUT_STREAM};
use crate::residual::{
    augment_obs, combine_action, validate_alpha, CombinedController, CombinedCursor, Critic,
    ResidualPolicy, AUG_DIM, RESIDUAL_ALPHA, RESIDUAL_STREAM,
};
use crate::rng::{named_rng, train_episode_seed, EVAL_SEED_BASE};

use super::ppo::{ppo_update, ActorOptimizer, PpoConfig};
use super::RolloutBuffer;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResidualTrainConfig {
    pub ppo: PpoConfig,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    /// Residual scale inside `clamp(base + alpha * residual, -1, 1)`.
    pub alpha: f32,
    /// Deterministic eval episodes per iteration (eval seed band).
    pub eval_episodes: usize,
}

impl Default for ResidualTrainConfig {
    fn default() -> Self {
        ResidualTrainConfig {
            ppo: PpoConfig::default(),
            actor_hidden: vec![256, 256],
            critic_hidden: vec![256, 256],
            alpha: RESIDUAL_ALPHA,
            eval_episodes: 32,
        }
    }
}

impl ResidualTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.ppo.validate()?;
        validate_alpha(self.alpha)?;
        if self.actor_hidden.is_empty() || self.critic_hidden.is_empty() {
            return Err(crate::Error::Config("hidden layer lists must be non-empty".into()));
        }
        if self.eval_episodes == 0 {
            return Err(crate::Error::Config("eval_episodes must be positive".into()));
        }
        Ok(())
    }

    pub fn iterations(&self) -> u64 {
        let per_iter = (self.ppo.num_envs * self.ppo.steps_per_iter) as u64;
        self.ppo.total_env_steps.div_ceil(per_iter)
    }
}

pub struct ResidualTrainResult {
    pub residual: ResidualPolicy,
    pub critic: Critic,
    pub rows: Vec<TrainRow>,
}

/// One persistent rollout lane. Episodes continue across iteration
/// boundaries; each episode re-derives its base and residual streams from
/// its own seed, so a rollout is reproducible independent of lane history.
struct Lane {
    env: EnvState,
    cursor: CombinedCursor,
    base_rng: ChaCha8Rng,
    res_rng: ChaCha8Rng,
    episodes_started: u64,
}

impl Lane {
    fn start(lane_idx: usize, run_seed: u64, cfg: &EnvConfig) -> Result<Self> {
        let mut lane = Lane {
            env: reset(cfg, 0)?,
            cursor: CombinedCursor::new(),
            base_rng: named_rng(0, ROLLOUT_STREAM),
            res_rng: named_rng(0, RESIDUAL_STREAM),
            episodes_started: 0,
        };
        lane.next_episode(lane_idx, run_seed, cfg)?;
        Ok(lane)
    }

    fn next_episode(&mut self, lane_idx: usize, run_seed: u64, cfg: &EnvConfig) -> Result<()> {
        // Lane index in the high bits keeps per-lane counters disjoint.
        let counter = ((lane_idx as u64) << 32) | self.episodes_started;
        let episode_seed = train_episode_seed(run_seed, counter);
        self.env = reset(cfg, episode_seed)?;
        self.cursor.reset();
        self.base_rng = named_rng(episode_seed, ROLLOUT_STREAM);
        self.res_rng = named_rng(episode_seed, RESIDUAL_STREAM);
        self.episodes_started += 1;
        Ok(())
    }
}

/// Trains a residual policy with PPO on the sparse insertion reward.
/// `on_row` sees every iteration row as it is produced (for live CSV
/// logging); the same rows come back in the result.
pub fn train_residual_ppo<P: ChunkPolicy + ?Sized>(
    base: &P,
    env_cfg: &EnvConfig,
    cfg: &ResidualTrainConfig,
    seed: u64,
    mut on_row: impl FnMut(&TrainRow) -> Result<()>,
) -> Result<ResidualTrainResult> {
    cfg.validate()?;
    let start = Instant::now();
    let normalizer = base.normalizer();

    let mut residual = ResidualPolicy::new(
        &cfg.actor_hidden,
        cfg.alpha,
        &mut named_rng(seed, "residual-init"),
    )?;
    let mut critic = Critic::new(AUG_DIM, &cfg.critic_hidden, &mut named_rng(seed, "critic-init"))?;
    let mut actor_opt = ActorOptimizer::new(&residual.actor);
    let mut critic_opt = Adam::new(critic.net.param_count(), 0.0);

    let iters = cfg.iterations();
    let actor_sched = CosineSchedule::new(cfg.ppo.lr_actor, 0, iters as usize)?;
    let critic_sched = CosineSchedule::new(cfg.ppo.lr_critic, 0, iters as usize)?;

    let mut lanes = (0..cfg.ppo.num_envs)
        .map(|i| Lane::start(i, seed, env_cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut buffer = RolloutBuffer::new(cfg.ppo.num_envs, cfg.ppo.steps_per_iter, AUG_DIM, ACTION_DIM);
    let mut scratch = Scratch::new();

    let mut rows = Vec::with_capacity(iters as usize);
    let mut env_steps: u64 = 0;

    for it in 0..iters {
        let mut successes_in_buffer: u64 = 0;
        for (lane_idx, lane) in lanes.iter_mut().enumerate() {
            let mut state_norm = [0.0f32; STATE_DIM];
            let mut aug = [0.0f32; AUG_DIM];
            let mut combined = [0.0f32; ACTION_DIM];
            let mut raw = [0.0f32; ACTION_DIM];
            let mut last_done = false;
            for t in 0..cfg.ppo.steps_per_iter {
                let state_raw = lane.env.to_vec();
                let base_n =
                    lane.cursor.next_base(base, &state_raw, &mut lane.base_rng, &mut scratch);
                normalizer.normalize_state(&state_raw, &mut state_norm);
                augment_obs(&state_norm, &base_n, &mut aug);

                let (res, log_prob) = residual.actor.sample(&aug, &mut lane.res_rng);
                let value = critic.value1(&aug);
                combine_action(&base_n, &res, cfg.alpha, &mut combined);
                normalizer.denormalize_action(&combined, &mut raw);

                let out = step(&mut lane.env, &Action::from_vec(&raw), env_cfg);
                if out.info.success {
                    successes_in_buffer += 1;
                }
                buffer.set(t, lane_idx, &aug, &res, log_prob, out.reward, out.done, value);
                last_done = out.done;
                if out.done {
                    lane.next_episode(lane_idx, seed, env_cfg)?;
                }
            }
            // Bootstrap from the mid-episode state the buffer stops in.
            // Peeking clones the cursor and base stream so the real draws
            // replay identically at the next iteration's first step.
            buffer.bootstrap[lane_idx] = if last_done {
                0.0
            } else {
                let state_raw = lane.env.to_vec();
                let mut cur = lane.cursor.clone();
                let mut rng = lane.base_rng.clone();
                let base_n = cur.next_base(base, &state_raw, &mut rng, &mut scratch);
                normalizer.normalize_state(&state_raw, &mut state_norm);
                augment_obs(&state_norm, &base_n, &mut aug);
                critic.value1(&aug)
            };
        }
        env_steps += (cfg.ppo.num_envs * cfg.ppo.steps_per_iter) as u64;
        assert_eq!(
            buffer.reward_sum(),
            successes_in_buffer as f64,
            "sparse reward accounting drifted from the success count"
        );

        buffer.finish(cfg.ppo.gamma, cfg.ppo.gae_lambda);
        let lr_actor = actor_sched.lr_at(it as usize);
        let lr_critic = critic_sched.lr_at(it as usize);
        let stats = ppo_update(
            &mut residual.actor,
            &mut critic,
            &mut actor_opt,
            &mut critic_opt,
            &buffer,
            &cfg.ppo,
            lr_actor,
            lr_critic,
            None,
        )?;

        let eval = eval_policy(
            |_| CombinedController::new(base, &residual, true),
            env_cfg,
            cfg.eval_episodes,
            EVAL_SEED_BASE,
        )?;

        let row = TrainRow {
            iter: it + 1,
            env_steps,
            eval_success: eval.success_rate,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            approx_kl: stats.approx_kl,
            entropy: stats.entropy,
            clip_frac: stats.clip_frac,
            lr_actor,
            lr_critic,
            wallclock_s: start.elapsed().as_secs_f64(),
        };
        on_row(&row)?;
        rows.push(row);
    }

    Ok(ResidualTrainResult {
        residual,
        critic,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{ChunkSpec, DiffusionPolicy, NoiseSchedule, Normalizer};

    fn tiny_base() -> DiffusionPolicy {
        let mut rng = named_rng(7, "test-base");
        DiffusionPolicy::new(
            ChunkSpec::new(4, 2).unwrap(),
            NoiseSchedule::new(50, 4).unwrap(),
            Normalizer::identity(STATE_DIM, ACTION_DIM),
            &[32, 32],
            &mut rng,
        )
        .unwrap()
    }

    fn smoke_cfg() -> ResidualTrainConfig {
        ResidualTrainConfig {
            ppo: PpoConfig {
                num_envs: 4,
                steps_per_iter: 32,
                total_env_steps: 256,
                update_epochs: 5,
                ..PpoConfig::default()
            },
            actor_hidden: vec![32, 32],
            critic_hidden: vec![32, 32],
            eval_episodes: 4,
            ..ResidualTrainConfig::default()
        }
    }

    #[test]
    fn smoke_run_completes_and_reports() {
        let base = tiny_base();
        let cfg = smoke_cfg();
        let env_cfg = EnvConfig::default();
        let mut seen = 0;
        let out = train_residual_ppo(&base, &env_cfg, &cfg, 3, |row| {
            assert_eq!(row.iter, seen + 1);
            seen += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(out.rows.len(), 2, "256 steps over 4x32 lanes is two iterations");
        assert_eq!(seen, 2);
        assert_eq!(out.rows[0].env_steps, 128);
        assert_eq!(out.rows[1].env_steps, 256);
        for r in &out.rows {
            assert!(r.policy_loss.is_finite() && r.value_loss.is_finite());
            assert!((0.0..=1.0).contains(&r.eval_success));
        }
    }

    #[test]
    fn rerun_reproduces_metrics_and_weights() {
        let base = tiny_base();
        let cfg = smoke_cfg();
        let env_cfg = EnvConfig::default();
        let a = train_residual_ppo(&base, &env_cfg, &cfg, 11, |_| Ok(())).unwrap();
        let b = train_residual_ppo(&base, &env_cfg, &cfg, 11, |_| Ok(())).unwrap();
        let cols_a: Vec<String> = a.rows.iter().map(|r| r.deterministic_cols()).collect();
        let cols_b: Vec<String> = b.rows.iter().map(|r| r.deterministic_cols()).collect();
        assert_eq!(cols_a, cols_b);
        assert_eq!(a.residual.actor.mean_net.params(), b.residual.actor.mean_net.params());
        assert_eq!(a.residual.actor.log_std, b.residual.actor.log_std);
        assert_eq!(a.critic.net.params(), b.critic.net.params());
    }

    #[test]
    fn different_seeds_learn_different_weights() {
        let base = tiny_base();
        let cfg = smoke_cfg();
        let env_cfg = EnvConfig::default();
        let a = train_residual_ppo(&base, &env_cfg, &cfg, 1, |_| Ok(())).unwrap();
        let b = train_residual_ppo(&base, &env_cfg, &cfg, 2, |_| Ok(())).unwrap();
        assert_ne!(a.residual.actor.mean_net.params(), b.residual.actor.mean_net.params());
    }

    #[test]
    fn row_callback_errors_abort_training() {
        let base = tiny_base();
        let cfg = smoke_cfg();
        let env_cfg = EnvConfig::default();
        let err = train_residual_ppo(&base, &env_cfg, &cfg, 5, |_| {
            Err(crate::Error::Config("stop".into()))
        });
        assert!(err.is_err());
    }
}
