//! Residual Gaussian corrections layered on a frozen base chunk policy.
//!
//! The residual actor observes [normalized state ‖ normalized base action]
//! and emits a correction in normalized action space:
//! `a = clamp(a_base + alpha * a_res, -1, 1)`, denormalized before the env
//! step. With `alpha = 0` the combined rollout must reproduce the base
//! rollout bit for bit, which is why base and residual draw from separate
//! rng streams.

use rand_chacha::ChaCha8Rng;

use crate::env::{Action, Controller, EnvConfig, EnvState, ACTION_DIM, STATE_DIM};
use crate::error::{Error, Result};
use crate::numerics::{diag_log_prob, diag_sample, Activation, Mlp, Net, Scratch};
use crate::policy::{ChunkPolicy, ROLLOUT_STREAM};
use crate::rng::named_rng;

/// Augmented observation: normalized state plus normalized base action.
pub const AUG_DIM: usize = STATE_DIM + ACTION_DIM;

/// Rng stream label for residual-action sampling. Distinct from
/// [`ROLLOUT_STREAM`] so attaching a residual never shifts base draws.
pub const RESIDUAL_STREAM: &str = "policy-residual";

/// Diagonal-Gaussian head: mean network plus a state-independent log-std
/// vector. The PPO update treats mean params and log_std as one actor.
#[derive(Clone, Debug)]
pub struct GaussianActor<N: Net> {
    pub mean_net: N,
    pub log_std: Vec<f32>,
}

impl<N: Net> GaussianActor<N> {
    pub fn new(mean_net: N, init_log_std: f32) -> Self {
        let dim = mean_net.out_dim();
        GaussianActor {
            mean_net,
            log_std: vec![init_log_std; dim],
        }
    }

    pub fn act_dim(&self) -> usize {
        self.mean_net.out_dim()
    }

    pub fn param_count(&self) -> usize {
        self.mean_net.param_count() + self.log_std.len()
    }

    /// Samples an action and returns it with its log-density.
    pub fn sample(&self, obs: &[f32], rng: &mut ChaCha8Rng) -> (Vec<f32>, f64) {
        let mean = self.mean_net.forward1(obs);
        let x = diag_sample(&mean, &self.log_std, rng);
        let lp = diag_log_prob(&mean, &self.log_std, &x);
        (x, lp)
    }

    pub fn mean1(&self, obs: &[f32]) -> Vec<f32> {
        self.mean_net.forward1(obs)
    }
}

/// Residual policy: actor over the augmented observation plus the scale
/// applied to its output before combination.
#[derive(Clone, Debug)]
pub struct ResidualPolicy {
    pub actor: GaussianActor<Mlp>,
    pub alpha: f32,
}

pub const RESIDUAL_INIT_LOG_STD: f32 = -1.5;
pub const RESIDUAL_ALPHA: f32 = 0.1;

impl ResidualPolicy {
    /// Fresh residual actor: hidden ReLU layers over the augmented obs, last
    /// layer scaled down so the initial combined policy tracks the base.
    pub fn new(hidden: &[usize], alpha: f32, rng: &mut ChaCha8Rng) -> Result<Self> {
        validate_alpha(alpha)?;
        let mut sizes = vec![AUG_DIM];
        sizes.extend_from_slice(hidden);
        sizes.push(ACTION_DIM);
        let mut mean_net = Mlp::new(&sizes, Activation::Relu, Activation::Linear, rng)?;
        mean_net.scale_last_layer(0.01);
        Ok(ResidualPolicy {
            actor: GaussianActor::new(mean_net, RESIDUAL_INIT_LOG_STD),
            alpha,
        })
    }

    pub fn validate(&self) -> Result<()> {
        validate_alpha(self.alpha)?;
        if self.actor.log_std.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("residual log_std is not finite".into()));
        }
        Ok(())
    }
}

pub fn validate_alpha(alpha: f32) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!(
            "residual alpha must lie in [0, 1], got {alpha}"
        )));
    }
    Ok(())
}

/// Scalar value head on the augmented observation; the final bias starts
/// above zero so early sparse-reward value estimates are not pinned at 0.
#[derive(Clone, Debug)]
pub struct Critic {
    pub net: Mlp,
}

pub const CRITIC_LAST_BIAS: f32 = 0.25;

impl Critic {
    pub fn new(in_dim: usize, hidden: &[usize], rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut sizes = vec![in_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let mut net = Mlp::new(&sizes, Activation::Relu, Activation::Linear, rng)?;
        net.set_last_bias(CRITIC_LAST_BIAS);
        Ok(Critic { net })
    }

    pub fn value1(&self, obs: &[f32]) -> f32 {
        self.net.forward1(obs)[0]
    }
}

/// [normalized state ‖ normalized base action], fixed order.
pub fn augment_obs(state_norm: &[f32], base_action_norm: &[f32], out: &mut [f32]) {
    assert_eq!(state_norm.len(), STATE_DIM, "state must have {STATE_DIM} entries");
    assert_eq!(base_action_norm.len(), ACTION_DIM, "base action must have {ACTION_DIM} entries");
    assert_eq!(out.len(), AUG_DIM);
    out[..STATE_DIM].copy_from_slice(state_norm);
    out[STATE_DIM..].copy_from_slice(base_action_norm);
}

/// `clamp(base + alpha * res, -1, 1)` in normalized action space.
pub fn combine_action(base: &[f32], res: &[f32], alpha: f32, out: &mut [f32]) {
    assert_eq!(base.len(), ACTION_DIM);
    assert_eq!(res.len(), ACTION_DIM);
    assert_eq!(out.len(), ACTION_DIM);
    for i in 0..ACTION_DIM {
        out[i] = (base[i] + alpha * res[i]).clamp(-1.0, 1.0);
    }
}

/// Walks a base policy's chunks one executed action at a time, re-querying
/// every `exec_horizon` steps. Episode resets drop any pending actions.
#[derive(Clone, Debug, Default)]
pub struct CombinedCursor {
    chunk: Vec<f32>,
    idx: usize,
}

impl CombinedCursor {
    pub fn new() -> Self {
        CombinedCursor::default()
    }

    pub fn reset(&mut self) {
        self.chunk.clear();
        self.idx = 0;
    }

    /// Next normalized base action for `state_raw`, sampling a fresh chunk
    /// from `base` when the executed window is exhausted. Copies out so the
    /// caller can keep it across the env step.
    pub fn next_base<P: ChunkPolicy + ?Sized>(
        &mut self,
        base: &P,
        state_raw: &[f32],
        rng: &mut ChaCha8Rng,
        scratch: &mut Scratch,
    ) -> [f32; ACTION_DIM] {
        let spec = base.chunk_spec();
        if self.chunk.is_empty() || self.idx >= spec.exec_horizon {
            self.chunk = base.predict_chunk(state_raw, rng, scratch);
            debug_assert_eq!(self.chunk.len(), spec.chunk_dim());
            self.idx = 0;
        }
        let mut out = [0.0f32; ACTION_DIM];
        out.copy_from_slice(&self.chunk[self.idx * ACTION_DIM..(self.idx + 1) * ACTION_DIM]);
        self.idx += 1;
        out
    }
}

/// Frozen base + residual, driving episodes for evaluation. Training
/// rollouts use the same stream labels but run through the PPO lane
/// machinery, which additionally records values and log-probs.
pub struct CombinedController<'a, P: ChunkPolicy + ?Sized> {
    base: &'a P,
    residual: &'a ResidualPolicy,
    pub deterministic: bool,
    cursor: CombinedCursor,
    base_rng: ChaCha8Rng,
    res_rng: ChaCha8Rng,
    scratch: Scratch,
}

impl<'a, P: ChunkPolicy + ?Sized> CombinedController<'a, P> {
    pub fn new(base: &'a P, residual: &'a ResidualPolicy, deterministic: bool) -> Self {
        CombinedController {
            base,
            residual,
            deterministic,
            cursor: CombinedCursor::new(),
            base_rng: named_rng(0, ROLLOUT_STREAM),
            res_rng: named_rng(0, RESIDUAL_STREAM),
            scratch: Scratch::new(),
        }
    }
}

impl<P: ChunkPolicy + ?Sized> Controller for CombinedController<'_, P> {
    fn begin_episode(&mut self, episode_seed: u64) {
        self.base_rng = named_rng(episode_seed, ROLLOUT_STREAM);
        self.res_rng = named_rng(episode_seed, RESIDUAL_STREAM);
        self.cursor.reset();
    }

    fn act(&mut self, state: &EnvState, _cfg: &EnvConfig) -> Action {
        let state_raw = state.to_vec();
        let base_n =
            self.cursor
                .next_base(self.base, &state_raw, &mut self.base_rng, &mut self.scratch);

        let mut state_norm = [0.0f32; STATE_DIM];
        self.base.normalizer().normalize_state(&state_raw, &mut state_norm);
        let mut aug = [0.0f32; AUG_DIM];
        augment_obs(&state_norm, &base_n, &mut aug);

        let res = if self.deterministic {
            self.residual.actor.mean1(&aug)
        } else {
            self.residual.actor.sample(&aug, &mut self.res_rng).0
        };
        let mut combined = [0.0f32; ACTION_DIM];
        combine_action(&base_n, &res, self.residual.alpha, &mut combined);

        let mut raw = [0.0f32; ACTION_DIM];
        self.base.normalizer().denormalize_action(&combined, &mut raw);
        Action::from_vec(&raw)
    }
}
