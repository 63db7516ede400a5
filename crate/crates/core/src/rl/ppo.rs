//! Clipped-surrogate PPO update over a full rollout buffer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    clip_global_norm, diag_entropy, diag_log_prob, Adam, Net, Scratch, LOG_STD_LIMIT,
};
use crate::residual::{Critic, GaussianActor};

use super::gae::normalize_advantages;
use super::RolloutBuffer;

/// Shared on-policy hyperparameters. Defaults are the residual-PPO values;
/// the baselines override what their recipes change.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub target_kl: f64,
    pub update_epochs: usize,
    pub minibatches: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub normalize_adv: bool,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub num_envs: usize,
    pub steps_per_iter: usize,
    pub total_env_steps: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            gamma: 0.999,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            target_kl: 0.1,
            update_epochs: 50,
            minibatches: 1,
            value_coef: 1.0,
            entropy_coef: 0.0,
            max_grad_norm: 1.0,
            normalize_adv: true,
            lr_actor: 3e-4,
            lr_critic: 5e-3,
            num_envs: 64,
            steps_per_iter: 200,
            total_env_steps: 2_000_000,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma must be in (0, 1], got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(Error::Config(format!(
                "gae_lambda must be in [0, 1], got {}",
                self.gae_lambda
            )));
        }
        if !(self.clip_eps > 0.0) {
            return Err(Error::Config(format!("clip_eps must be positive, got {}", self.clip_eps)));
        }
        if !(self.target_kl > 0.0) {
            return Err(Error::Config(format!(
                "target_kl must be positive, got {}",
                self.target_kl
            )));
        }
        if self.minibatches != 1 {
            return Err(Error::Config(format!(
                "only single-minibatch (full batch) updates are supported, got {}",
                self.minibatches
            )));
        }
        if self.update_epochs == 0 || self.num_envs == 0 || self.steps_per_iter == 0 {
            return Err(Error::Config(
                "update_epochs, num_envs, steps_per_iter must be positive".into(),
            ));
        }
        // lr 0 is permitted (schedule tails hit it); negatives are not.
        if self.lr_actor < 0.0 || self.lr_critic < 0.0 {
            return Err(Error::Config("learning rates must be non-negative".into()));
        }
        if !(self.max_grad_norm > 0.0) {
            return Err(Error::Config(format!(
                "max_grad_norm must be positive, got {}",
                self.max_grad_norm
            )));
        }
        if self.total_env_steps == 0 {
            return Err(Error::Config("total_env_steps must be positive".into()));
        }
        Ok(())
    }
}

/// Stats of one `ppo_update` call, taken from the last epoch that was
/// evaluated (which is the epoch that tripped early stopping, if any).
#[derive(Clone, Copy, Debug, Default)]
pub struct PpoUpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub approx_kl: f64,
    pub entropy: f64,
    pub clip_frac: f64,
    /// Number of epochs whose parameter updates were applied.
    pub epochs_run: usize,
}

/// Adam pair for a Gaussian actor: mean network and log-std vector step
/// together but keep separate moment buffers.
pub struct ActorOptimizer {
    mean: Adam,
    log_std: Adam,
}

impl ActorOptimizer {
    pub fn new<N: Net>(actor: &GaussianActor<N>) -> Self {
        ActorOptimizer {
            mean: Adam::new(actor.mean_net.param_count(), 0.0),
            log_std: Adam::new(actor.log_std.len(), 0.0),
        }
    }

    pub fn step<N: Net>(
        &mut self,
        actor: &mut GaussianActor<N>,
        grad_mean: &[f32],
        grad_log_std: &[f32],
        lr: f32,
    ) {
        self.mean.step(actor.mean_net.params_mut(), grad_mean, lr);
        self.log_std.step(&mut actor.log_std, grad_log_std, lr);
    }
}

/// Frozen-reference KL regularizer: coefficient times
/// mean_i KL(current(. | s_i) || reference(. | s_i)), diagonal Gaussians.
pub struct KlReference<'a, N: Net> {
    pub actor: &'a GaussianActor<N>,
    pub coef: f64,
}

/// Runs up to `update_epochs` full-batch clipped-surrogate updates.
///
/// Per epoch: recompute log-probs, ratio = exp(new - old), surrogate
/// -mean(min(ratio * A, clip(ratio) * A)), value MSE against returns, and
/// the optional KL term; stop before applying the update of any epoch whose
/// approx KL (mean of ratio - 1 - log ratio) exceeds `target_kl`. Gradients
/// of actor mean, log-std, and critic are clipped to a joint global norm.
pub fn ppo_update<N: Net>(
    actor: &mut GaussianActor<N>,
    critic: &mut Critic,
    actor_opt: &mut ActorOptimizer,
    critic_opt: &mut Adam,
    buffer: &RolloutBuffer,
    cfg: &PpoConfig,
    lr_actor: f64,
    lr_critic: f64,
    kl_ref: Option<KlReference<'_, N>>,
) -> Result<PpoUpdateStats> {
    cfg.validate()?;
    let b = buffer.len();
    let d = actor.act_dim();
    assert_eq!(buffer.act_dim, d, "buffer action dim does not match actor");
    assert_eq!(
        buffer.obs_dim,
        actor.mean_net.in_dim(),
        "buffer obs dim does not match actor"
    );
    assert_eq!(
        critic.net.in_dim(),
        buffer.obs_dim,
        "buffer obs dim does not match critic"
    );

    let mut adv = buffer.advantages.clone();
    if cfg.normalize_adv {
        normalize_advantages(&mut adv);
    }

    let mut scratch = Scratch::new();

    // Reference means and variances are frozen: compute once per call.
    let ref_cache = kl_ref.as_ref().map(|r| {
        let mut mq = Vec::new();
        r.actor.mean_net.forward_batch(&buffer.obs, b, &mut mq, &mut scratch);
        let var_q: Vec<f64> = r.actor.log_std.iter().map(|&s| (2.0 * s as f64).exp()).collect();
        let ls_q: Vec<f64> = r.actor.log_std.iter().map(|&s| s as f64).collect();
        (mq, var_q, ls_q, r.coef)
    });

    let mut means = Vec::new();
    let mut values = Vec::new();
    let mut dy_actor = vec![0.0f32; b * d];
    let mut dy_critic = vec![0.0f32; b];
    let mut grad_mean = vec![0.0f32; actor.mean_net.param_count()];
    let mut grad_std = vec![0.0f32; d];
    let mut grad_critic = vec![0.0f32; critic.net.param_count()];

    let mut stats = PpoUpdateStats::default();
    for _epoch in 0..cfg.update_epochs {
        actor.mean_net.forward_batch(&buffer.obs, b, &mut means, &mut scratch);
        critic.net.forward_batch(&buffer.obs, b, &mut values, &mut scratch);

        let sigma: Vec<f64> = actor.log_std.iter().map(|&s| (s as f64).exp()).collect();
        let inv_b = 1.0 / b as f64;
        let mut policy_loss = 0.0f64;
        let mut value_loss = 0.0f64;
        let mut approx_kl = 0.0f64;
        let mut clipped = 0usize;
        let mut kl_term = 0.0f64;
        dy_actor.iter_mut().for_each(|v| *v = 0.0);

        for i in 0..b {
            let mean_i = &means[i * d..(i + 1) * d];
            let act_i = &buffer.actions[i * d..(i + 1) * d];
            let lp = diag_log_prob(mean_i, &actor.log_std, act_i);
            let log_ratio = lp - buffer.log_probs[i];
            let ratio = log_ratio.exp();
            let a = adv[i] as f64;

            let unclipped = ratio * a;
            let clamped = ratio.clamp(1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * a;
            policy_loss -= unclipped.min(clamped) * inv_b;
            approx_kl += (ratio - 1.0 - log_ratio) * inv_b;
            if (ratio - 1.0).abs() > cfg.clip_eps {
                clipped += 1;
            }

            // Gradient of the surrogate flows only through the active
            // (unclipped) branch; the clipped branch is constant in theta.
            let coeff = if unclipped <= clamped { -ratio * a * inv_b } else { 0.0 };
            for k in 0..d {
                let z = (act_i[k] as f64 - mean_i[k] as f64) / sigma[k];
                if coeff != 0.0 {
                    dy_actor[i * d + k] = (coeff * z / sigma[k]) as f32;
                    grad_std[k] += (coeff * (z * z - 1.0)) as f32;
                }
            }

            let v_err = values[i] as f64 - buffer.returns[i] as f64;
            value_loss += v_err * v_err * inv_b;
            dy_critic[i] = (cfg.value_coef * 2.0 * v_err * inv_b) as f32;

            if let Some((mq, var_q, ls_q, coef)) = &ref_cache {
                let mq_i = &mq[i * d..(i + 1) * d];
                for k in 0..d {
                    let dm = mean_i[k] as f64 - mq_i[k] as f64;
                    let ls_p = actor.log_std[k] as f64;
                    kl_term += (ls_q[k] - ls_p + (sigma[k] * sigma[k] + dm * dm) / (2.0 * var_q[k])
                        - 0.5)
                        * inv_b;
                    dy_actor[i * d + k] += (coef * inv_b * dm / var_q[k]) as f32;
                }
            }
        }
        let entropy = diag_entropy(&actor.log_std);
        let clip_frac = clipped as f64 * inv_b;

        if let Some((_, var_q, _, coef)) = &ref_cache {
            // log-std part of the KL gradient is sample-independent.
            for k in 0..d {
                grad_std[k] += (coef * (sigma[k] * sigma[k] / var_q[k] - 1.0)) as f32;
            }
        }
        if cfg.entropy_coef != 0.0 {
            for g in grad_std.iter_mut() {
                *g -= cfg.entropy_coef as f32;
            }
        }

        let total_probe = policy_loss
            + cfg.value_coef * value_loss
            + ref_cache.as_ref().map_or(0.0, |(_, _, _, c)| c * kl_term);
        if !total_probe.is_finite() {
            return Err(Error::Numeric(format!(
                "ppo update diverged: policy_loss {policy_loss}, value_loss {value_loss}, \
                 kl_term {kl_term}"
            )));
        }

        stats = PpoUpdateStats {
            policy_loss,
            value_loss,
            approx_kl,
            entropy,
            clip_frac,
            epochs_run: stats.epochs_run,
        };
        if approx_kl > cfg.target_kl {
            break;
        }

        grad_mean.iter_mut().for_each(|v| *v = 0.0);
        grad_critic.iter_mut().for_each(|v| *v = 0.0);
        actor
            .mean_net
            .backward_batch(&buffer.obs, b, &dy_actor, &mut grad_mean, None, &mut scratch);
        critic
            .net
            .backward_batch(&buffer.obs, b, &dy_critic, &mut grad_critic, None, &mut scratch);
        clip_global_norm(
            &mut [&mut grad_mean, &mut grad_std, &mut grad_critic],
            cfg.max_grad_norm,
        );
        actor_opt.step(actor, &grad_mean, &grad_std, lr_actor as f32);
        critic_opt.step(critic.net.params_mut(), &grad_critic, lr_critic as f32);
        grad_std.iter_mut().for_each(|v| *v = 0.0);
        stats.epochs_run += 1;

        if actor.log_std.iter().any(|s| !s.is_finite() || s.abs() > LOG_STD_LIMIT) {
            return Err(Error::Numeric(format!(
                "policy log-std left [-{LOG_STD_LIMIT}, {LOG_STD_LIMIT}]: {:?}",
                actor.log_std
            )));
        }
    }
    Ok(stats)
}
