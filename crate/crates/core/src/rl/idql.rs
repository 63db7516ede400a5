//! Online value-guided chunk selection over a frozen diffusion policy.
//!
//! No policy parameters move. Each decision draws a batch of candidate
//! chunks from the stochastic sampler (eta 1 plus a small Gaussian dither),
//! scores them with a learned Q, and executes the best one. Q regresses
//! toward chunk-level GAE returns computed with the mean candidate Q as the
//! state value, so better value estimates sharpen the selection and
//! vice versa.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::distill::eval_policy;
use crate::env::{reset, Action, EnvConfig, EnvState, ACTION_DIM, STATE_DIM};
use crate::error::{Error, Result};
use crate::metrics::TrainRow;
use crate::numerics::{
    clip_global_norm, mse_loss_grad, Activation, Adam, CosineSchedule, Mlp, Net, Scratch,
};
use crate::policy::{DiffusionPolicy, ROLLOUT_STREAM};
use crate::residual::CRITIC_LAST_BIAS;
use crate::rng::{named_rng, train_episode_seed, EVAL_SEED_BASE};

use super::{execute_chunk_prefix, RolloutBuffer};

/// Q([state, chunk]) -> scalar, both inputs normalized.
#[derive(Clone, Debug)]
pub struct QNet {
    pub net: Mlp,
}

impl QNet {
    pub fn new(chunk_dim: usize, hidden: &[usize], rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut sizes = vec![STATE_DIM + chunk_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let mut net = Mlp::new(&sizes, Activation::Relu, Activation::Linear, rng)?;
        net.set_last_bias(CRITIC_LAST_BIAS);
        Ok(QNet { net })
    }

    pub fn chunk_dim(&self) -> usize {
        self.net.in_dim() - STATE_DIM
    }

    pub fn value1(&self, state_norm: &[f32], chunk_norm: &[f32]) -> f32 {
        let mut x = Vec::with_capacity(self.net.in_dim());
        x.extend_from_slice(state_norm);
        x.extend_from_slice(chunk_norm);
        self.net.forward1(&x)[0]
    }
}

/// All candidates of one decision, for inspection and tests.
pub struct IdqlSelection {
    /// n_samples flattened normalized chunks, clamped to [-1, 1].
    pub chunks: Vec<f32>,
    pub q_values: Vec<f32>,
    /// Argmax of `q_values`; ties resolve to the lowest index.
    pub index: usize,
    /// Mean candidate Q, the state-value estimate for GAE.
    pub mean_q: f32,
}

impl IdqlSelection {
    pub fn best_chunk(&self) -> &[f32] {
        let cd = self.chunks.len() / self.q_values.len();
        &self.chunks[self.index * cd..(self.index + 1) * cd]
    }
}

/// Draws `n_samples` candidate chunks (stochastic sampler, eta 1, plus
/// Gaussian dither of the given log-std) and picks the Q-argmax.
pub fn idql_select(
    base: &DiffusionPolicy,
    q: &QNet,
    state_raw: &[f32],
    n_samples: usize,
    noise_log_std: f32,
    rng: &mut ChaCha8Rng,
    scratch: &mut Scratch,
) -> IdqlSelection {
    assert!(n_samples > 0, "selection needs at least one candidate");
    let cd = base.chunk.chunk_dim();
    assert_eq!(q.chunk_dim(), cd, "Q net disagrees with the chunk spec");

    let mut sn = [0.0f32; STATE_DIM];
    base.normalizer.normalize_state(state_raw, &mut sn);
    let mut states = vec![0.0f32; n_samples * STATE_DIM];
    for row in states.chunks_exact_mut(STATE_DIM) {
        row.copy_from_slice(&sn);
    }

    // Candidate streams split off the caller's stream, so the whole
    // decision consumes a deterministic amount of caller entropy.
    let mut lanes: Vec<ChaCha8Rng> = (0..n_samples)
        .map(|_| ChaCha8Rng::from_rng(&mut *rng).expect("rng reseed is infallible"))
        .collect();
    let mut chunks = Vec::new();
    base.ddim_sample_batch(&states, n_samples, 1.0, &mut lanes, &mut chunks, scratch);

    let sigma = noise_log_std.exp();
    for v in chunks.iter_mut() {
        let z: f32 = StandardNormal.sample(rng);
        *v = (*v + sigma * z).clamp(-1.0, 1.0);
    }

    let in_dim = STATE_DIM + cd;
    let mut qin = vec![0.0f32; n_samples * in_dim];
    for (i, row) in qin.chunks_exact_mut(in_dim).enumerate() {
        row[..STATE_DIM].copy_from_slice(&sn);
        row[STATE_DIM..].copy_from_slice(&chunks[i * cd..(i + 1) * cd]);
    }
    let mut q_values = Vec::new();
    q.net.forward_batch(&qin, n_samples, &mut q_values, scratch);

    let mut index = 0;
    for i in 1..n_samples {
        if q_values[i] > q_values[index] {
            index = i;
        }
    }
    let mean_q = q_values.iter().sum::<f32>() / n_samples as f32;
    IdqlSelection {
        chunks,
        q_values,
        index,
        mean_q,
    }
}

/// Full-batch regression of Q([state, chunk]) onto `targets`. Returns the
/// last epoch's MSE.
pub fn idql_q_update(
    q: &mut QNet,
    opt: &mut Adam,
    inputs: &[f32],
    b: usize,
    targets: &[f32],
    epochs: usize,
    lr: f64,
    max_grad_norm: f64,
    scratch: &mut Scratch,
) -> Result<f64> {
    let mut grad = vec![0.0f32; q.net.param_count()];
    let mut loss = 0.0;
    for _ in 0..epochs {
        grad.fill(0.0);
        loss = mse_loss_grad(&q.net, inputs, b, targets, &mut grad, scratch);
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("Q regression diverged (loss {loss})")));
        }
        clip_global_norm(&mut [&mut grad], max_grad_norm);
        opt.step(q.net.params_mut(), &grad, lr as f32);
    }
    Ok(loss)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdqlConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub num_envs: usize,
    /// Env steps per lane per iteration (converted to chunk decisions).
    pub steps_per_iter: usize,
    pub total_env_steps: u64,
    pub n_samples: usize,
    pub noise_log_std: f32,
    pub q_epochs: usize,
    pub q_lr: f64,
    pub q_hidden: Vec<usize>,
    pub max_grad_norm: f64,
    pub eval_episodes: usize,
}

impl Default for IdqlConfig {
    fn default() -> Self {
        IdqlConfig {
            gamma: 0.999,
            gae_lambda: 0.95,
            num_envs: 64,
            steps_per_iter: 200,
            total_env_steps: 2_000_000,
            n_samples: 20,
            noise_log_std: -4.0,
            q_epochs: 10,
            q_lr: 1e-4,
            q_hidden: vec![256, 256],
            max_grad_norm: 1.0,
            eval_episodes: 32,
        }
    }
}

impl IdqlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.gamma && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma must be in (0, 1], got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(Error::Config(format!(
                "gae_lambda must be in [0, 1], got {}",
                self.gae_lambda
            )));
        }
        if self.num_envs == 0
            || self.steps_per_iter == 0
            || self.total_env_steps == 0
            || self.n_samples == 0
            || self.q_epochs == 0
            || self.eval_episodes == 0
        {
            return Err(Error::Config("idql sizes must be positive".into()));
        }
        if self.q_lr < 0.0 {
            return Err(Error::Config("q_lr must be non-negative".into()));
        }
        if self.max_grad_norm <= 0.0 {
            return Err(Error::Config("max_grad_norm must be positive".into()));
        }
        if self.q_hidden.is_empty() {
            return Err(Error::Config("q_hidden must be non-empty".into()));
        }
        Ok(())
    }
}

pub struct IdqlResult {
    pub q: QNet,
    pub rows: Vec<TrainRow>,
}

/// Rolls the selection policy and refits Q each iteration. The sampler and
/// its parameters never change; learning lives entirely in Q.
pub fn train_idql(
    base: &DiffusionPolicy,
    env_cfg: &EnvConfig,
    cfg: &IdqlConfig,
    seed: u64,
    mut on_row: impl FnMut(&TrainRow) -> Result<()>,
) -> Result<IdqlResult> {
    cfg.validate()?;
    let start = Instant::now();
    let cd = base.chunk.chunk_dim();
    let exec = base.chunk.exec_horizon;
    let chunk_steps = cfg.steps_per_iter.div_ceil(exec);
    let gamma_chunk = cfg.gamma.powi(exec as i32);

    let mut q = QNet::new(cd, &cfg.q_hidden, &mut named_rng(seed, "q-init"))?;
    let mut opt = Adam::new(q.net.param_count(), 0.0);
    let iters_hint = cfg
        .total_env_steps
        .div_ceil((cfg.num_envs * cfg.steps_per_iter) as u64)
        .max(1);
    let sched = CosineSchedule::new(cfg.q_lr, 0, iters_hint as usize)?;

    struct SelLane {
        env: EnvState,
        rng: ChaCha8Rng,
        episodes_started: u64,
    }
    impl SelLane {
        fn next_episode(&mut self, lane_idx: usize, run_seed: u64, cfg: &EnvConfig) -> Result<()> {
            let counter = ((lane_idx as u64) << 32) | self.episodes_started;
            let episode_seed = train_episode_seed(run_seed, counter);
            self.env = reset(cfg, episode_seed)?;
            self.rng = named_rng(episode_seed, ROLLOUT_STREAM);
            self.episodes_started += 1;
            Ok(())
        }
    }
    let mut lanes = Vec::with_capacity(cfg.num_envs);
    for i in 0..cfg.num_envs {
        let mut lane = SelLane {
            env: reset(env_cfg, 0)?,
            rng: named_rng(0, ROLLOUT_STREAM),
            episodes_started: 0,
        };
        lane.next_episode(i, seed, env_cfg)?;
        lanes.push(lane);
    }

    let mut buffer = RolloutBuffer::new(cfg.num_envs, chunk_steps, STATE_DIM, cd);
    let mut scratch = Scratch::new();
    let mut rows = Vec::new();
    let mut env_steps: u64 = 0;
    let mut it: u64 = 0;

    while env_steps < cfg.total_env_steps {
        let mut successes_in_buffer: u64 = 0;
        for (lane_idx, lane) in lanes.iter_mut().enumerate() {
            let mut sn = [0.0f32; STATE_DIM];
            let mut last_done = false;
            for t in 0..chunk_steps {
                let state_raw = lane.env.to_vec();
                base.normalizer.normalize_state(&state_raw, &mut sn);
                let sel = idql_select(
                    base,
                    &q,
                    &state_raw,
                    cfg.n_samples,
                    cfg.noise_log_std,
                    &mut lane.rng,
                    &mut scratch,
                );
                let chosen = sel.best_chunk().to_vec();
                let out = execute_chunk_prefix(&mut lane.env, &chosen, exec, &base.normalizer, env_cfg);
                env_steps += out.env_steps as u64;
                if out.success {
                    successes_in_buffer += 1;
                }
                buffer.set(t, lane_idx, &sn, &chosen, 0.0, out.reward, out.done, sel.mean_q);
                last_done = out.done;
                if out.done {
                    lane.next_episode(lane_idx, seed, env_cfg)?;
                }
            }
            buffer.bootstrap[lane_idx] = if last_done {
                0.0
            } else {
                // Peek value of the pending state without consuming the
                // lane's stream.
                let state_raw = lane.env.to_vec();
                let mut peek = lane.rng.clone();
                let sel = idql_select(
                    base,
                    &q,
                    &state_raw,
                    cfg.n_samples,
                    cfg.noise_log_std,
                    &mut peek,
                    &mut scratch,
                );
                sel.mean_q
            };
        }
        assert_eq!(
            buffer.reward_sum(),
            successes_in_buffer as f64,
            "chunk rewards must partition the sparse episode reward"
        );

        buffer.finish(gamma_chunk, cfg.gae_lambda);
        let n = buffer.len();
        let in_dim = STATE_DIM + cd;
        let mut qin = vec![0.0f32; n * in_dim];
        for i in 0..n {
            qin[i * in_dim..i * in_dim + STATE_DIM]
                .copy_from_slice(&buffer.obs[i * STATE_DIM..(i + 1) * STATE_DIM]);
            qin[i * in_dim + STATE_DIM..(i + 1) * in_dim]
                .copy_from_slice(&buffer.actions[i * cd..(i + 1) * cd]);
        }
        let lr = sched.lr_at(it.min(iters_hint - 1) as usize);
        let loss = idql_q_update(
            &mut q,
            &mut opt,
            &qin,
            n,
            &buffer.returns,
            cfg.q_epochs,
            lr,
            cfg.max_grad_norm,
            &mut scratch,
        )?;

        let eval = eval_policy(
            |_| IdqlController::new(base, &q, cfg.n_samples, cfg.noise_log_std),
            env_cfg,
            cfg.eval_episodes,
            EVAL_SEED_BASE,
        )?;

        it += 1;
        let row = TrainRow {
            iter: it,
            env_steps,
            eval_success: eval.success_rate,
            policy_loss: 0.0,
            value_loss: loss,
            approx_kl: 0.0,
            entropy: 0.0,
            clip_frac: 0.0,
            lr_actor: 0.0,
            lr_critic: lr,
            wallclock_s: start.elapsed().as_secs_f64(),
        };
        on_row(&row)?;
        rows.push(row);
    }

    Ok(IdqlResult { q, rows })
}

/// Drives episodes with Q-guided selection; used for eval and harvesting.
/// Stochastic by construction, but reproducible per episode seed.
pub struct IdqlController<'a> {
    base: &'a DiffusionPolicy,
    q: &'a QNet,
    n_samples: usize,
    noise_log_std: f32,
    rng: ChaCha8Rng,
    chunk: Vec<f32>,
    idx: usize,
    scratch: Scratch,
}

impl<'a> IdqlController<'a> {
    pub fn new(base: &'a DiffusionPolicy, q: &'a QNet, n_samples: usize, noise_log_std: f32) -> Self {
        IdqlController {
            base,
            q,
            n_samples,
            noise_log_std,
            rng: named_rng(0, ROLLOUT_STREAM),
            chunk: Vec::new(),
            idx: 0,
            scratch: Scratch::new(),
        }
    }
}

impl crate::env::Controller for IdqlController<'_> {
    fn begin_episode(&mut self, episode_seed: u64) {
        self.rng = named_rng(episode_seed, ROLLOUT_STREAM);
        self.chunk.clear();
        self.idx = 0;
    }

    fn act(&mut self, state: &EnvState, _cfg: &EnvConfig) -> Action {
        let exec = self.base.chunk.exec_horizon;
        if self.chunk.is_empty() || self.idx >= exec {
            let sel = idql_select(
                self.base,
                self.q,
                &state.to_vec(),
                self.n_samples,
                self.noise_log_std,
                &mut self.rng,
                &mut self.scratch,
            );
            self.chunk = sel.best_chunk().to_vec();
            self.idx = 0;
        }
        let row = &self.chunk[self.idx * ACTION_DIM..(self.idx + 1) * ACTION_DIM];
        self.idx += 1;
        let mut raw = [0.0f32; ACTION_DIM];
        self.base.normalizer.denormalize_action(row, &mut raw);
        Action::from_vec(&raw)
    }
}
