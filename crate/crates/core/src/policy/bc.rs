//! Behavior cloning for the three base-policy families.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::env::STATE_DIM;
use crate::error::{Error, Result};
use crate::numerics::{mse_loss_grad, Adam, CosineSchedule, Net, Scratch};
use crate::rng::named_rng;

use super::{
    make_chunk_targets, BasePolicy, ChunkSpec, DiffusionPolicy, MlpPolicy, NoiseSchedule,
    Normalizer,
};

/// Which base-policy family to clone.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    /// Chunked diffusion policy.
    Diffusion,
    /// Single-step MLP regression (prediction horizon forced to 1).
    MlpS,
    /// Chunked MLP regression.
    MlpC,
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            PolicyKind::Diffusion => "diffusion",
            PolicyKind::MlpS => "mlp-s",
            PolicyKind::MlpC => "mlp-c",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BcConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub max_lr: f64,
    pub warmup_steps: usize,
    pub weight_decay: f32,
    pub log_interval: usize,
    pub chunk: ChunkSpec,
    pub k_train: usize,
    pub k_infer: usize,
    /// Hidden layer widths of the diffusion denoiser.
    pub denoiser_hidden: Vec<usize>,
    /// Residual-MLP width and block count for the regression baselines.
    pub mlp_width: usize,
    pub mlp_blocks: usize,
}

impl Default for BcConfig {
    fn default() -> Self {
        BcConfig {
            batch_size: 256,
            steps: 3000,
            max_lr: 1e-4,
            warmup_steps: 500,
            weight_decay: 1e-6,
            log_interval: 100,
            chunk: ChunkSpec::default(),
            k_train: 100,
            k_infer: 4,
            denoiser_hidden: vec![512, 512, 512],
            mlp_width: 256,
            mlp_blocks: 2,
        }
    }
}

impl BcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.steps == 0 {
            return Err(Error::Config("batch_size and steps must be positive".into()));
        }
        if !(self.max_lr > 0.0) {
            return Err(Error::Config(format!("max_lr must be positive, got {}", self.max_lr)));
        }
        if self.log_interval == 0 {
            return Err(Error::Config("log_interval must be positive".into()));
        }
        self.chunk.validate()?;
        if self.mlp_width == 0 || self.mlp_blocks == 0 {
            return Err(Error::Config("mlp_width and mlp_blocks must be positive".into()));
        }
        Ok(())
    }
}

/// One logged training interval.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct BcRow {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
}

/// The chunk spec a given policy kind actually trains with.
pub fn effective_chunk(kind: PolicyKind, cfg: &BcConfig) -> ChunkSpec {
    match kind {
        PolicyKind::MlpS => ChunkSpec::single(),
        _ => cfg.chunk,
    }
}

/// Clones a dataset into a base policy with Adam + cosine schedule.
/// Diffusion trains the noise predictor; MLPs regress chunks directly.
pub fn bc_train(
    kind: PolicyKind,
    dataset: &Dataset,
    cfg: &BcConfig,
    seed: u64,
) -> Result<(BasePolicy, Vec<BcRow>)> {
    cfg.validate()?;
    let normalizer = Normalizer::fit(dataset)?;
    let chunk = effective_chunk(kind, cfg);
    let cd = chunk.chunk_dim();

    // Flatten (state, chunk) pairs in normalized space.
    let mut states: Vec<f32> = Vec::new();
    let mut chunks: Vec<f32> = Vec::new();
    for traj in &dataset.trajectories {
        for (s_raw, c_raw) in make_chunk_targets(traj, &chunk) {
            let mut s = [0.0f32; STATE_DIM];
            normalizer.normalize_state(&s_raw, &mut s);
            states.extend_from_slice(&s);
            let before = chunks.len();
            chunks.resize(before + cd, 0.0);
            normalizer.normalize_chunk(&c_raw, &mut chunks[before..]);
        }
    }
    let n = states.len() / STATE_DIM;
    if n == 0 {
        return Err(Error::Config("dataset has no transitions".into()));
    }

    let mut init_rng = named_rng(seed, "policy-init");
    let mut policy = match kind {
        PolicyKind::Diffusion => {
            let schedule = NoiseSchedule::new(cfg.k_train, cfg.k_infer)?;
            BasePolicy::Diffusion(DiffusionPolicy::new(
                chunk,
                schedule,
                normalizer,
                &cfg.denoiser_hidden,
                &mut init_rng,
            )?)
        }
        PolicyKind::MlpS | PolicyKind::MlpC => BasePolicy::Mlp(MlpPolicy::new(
            chunk,
            normalizer,
            cfg.mlp_width,
            cfg.mlp_blocks,
            &mut init_rng,
        )?),
    };

    let param_count = match &policy {
        BasePolicy::Diffusion(p) => p.denoiser.param_count(),
        BasePolicy::Mlp(p) => p.net.param_count(),
    };
    let mut adam = Adam::new(param_count, cfg.weight_decay);
    let schedule = CosineSchedule::new(cfg.max_lr, cfg.warmup_steps, cfg.steps)?;

    let mut batch_rng = named_rng(seed, "bc-batch");
    let mut noise_rng = named_rng(seed, "bc-noise");
    let mut scratch = Scratch::new();
    let mut grad = vec![0.0f32; param_count];
    let b = cfg.batch_size;
    let mut bs = vec![0.0f32; b * STATE_DIM];
    let mut bc = vec![0.0f32; b * cd];

    let mut rows = Vec::new();
    let mut acc = 0.0f64;
    let mut acc_n = 0usize;
    for step in 0..cfg.steps {
        for i in 0..b {
            let j = batch_rng.gen_range(0..n);
            bs[i * STATE_DIM..(i + 1) * STATE_DIM]
                .copy_from_slice(&states[j * STATE_DIM..(j + 1) * STATE_DIM]);
            bc[i * cd..(i + 1) * cd].copy_from_slice(&chunks[j * cd..(j + 1) * cd]);
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        let loss = match &mut policy {
            BasePolicy::Diffusion(p) => {
                p.ddpm_loss(&bs, &bc, b, &mut noise_rng, &mut grad, &mut scratch)
            }
            BasePolicy::Mlp(p) => mse_loss_grad(&p.net, &bs, b, &bc, &mut grad, &mut scratch),
        };
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "behavior cloning diverged at step {step}: loss {loss}"
            )));
        }
        let lr = schedule.lr_at(step);
        match &mut policy {
            BasePolicy::Diffusion(p) => adam.step(p.denoiser.params_mut(), &grad, lr as f32),
            BasePolicy::Mlp(p) => adam.step(p.net.params_mut(), &grad, lr as f32),
        }
        acc += loss;
        acc_n += 1;
        if (step + 1) % cfg.log_interval == 0 || step + 1 == cfg.steps {
            rows.push(BcRow {
                step: (step + 1) as u64,
                loss: acc / acc_n as f64,
                lr,
            });
            acc = 0.0;
            acc_n = 0;
        }
    }
    Ok((policy, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Trajectory;
    use crate::env::{EnvConfig, STATE_DIM};
    use rand::Rng;

    /// Synthetic dataset: states on a grid, actions a fixed affine map of the
    /// first state coordinate. Single-mode, so regression can overfit it.
    fn affine_dataset(n_traj: usize, len: usize) -> Dataset {
        let cfg = EnvConfig::default();
        let digest = cfg.digest();
        let mut rng = named_rng(5, "test-data");
        let mut trajectories = Vec::new();
        for k in 0..n_traj {
            let mut states = Vec::new();
            let mut actions = Vec::new();
            for _ in 0..=len {
                let mut s = [0.0f32; STATE_DIM];
                for v in s.iter_mut() {
                    *v = rng.gen_range(-1.0..1.0);
                }
                states.push(s);
            }
            for s in states.iter().take(len) {
                actions.push([
                    0.5 * s[0],
                    -0.3 * s[0],
                    0.2,
                    0.1 * s[1],
                    s[0].clamp(-0.8, 0.8),
                ]);
            }
            trajectories.push(Trajectory {
                states,
                actions,
                rewards: vec![0.0; len],
                success: false,
                seed: k as u64,
                config_digest: digest.clone(),
                origin: None,
            });
        }
        Dataset::new(trajectories)
    }

    fn small_cfg() -> BcConfig {
        BcConfig {
            batch_size: 64,
            steps: 300,
            max_lr: 3e-3,
            warmup_steps: 20,
            weight_decay: 0.0,
            log_interval: 50,
            chunk: ChunkSpec::new(2, 1).unwrap(),
            denoiser_hidden: vec![64, 64],
            mlp_width: 64,
            mlp_blocks: 1,
            ..BcConfig::default()
        }
    }

    #[test]
    fn mlp_overfits_single_mode_data() {
        let ds = affine_dataset(4, 50);
        let cfg = BcConfig {
            steps: 1200,
            ..small_cfg()
        };
        let (_, rows) = bc_train(PolicyKind::MlpS, &ds, &cfg, 11).unwrap();
        let last = rows.last().unwrap();
        assert!(
            last.loss < 1e-3,
            "single-mode regression should overfit, got {}",
            last.loss
        );
    }

    #[test]
    fn diffusion_loss_decreases() {
        let ds = affine_dataset(4, 50);
        let cfg = small_cfg();
        let (_, rows) = bc_train(PolicyKind::Diffusion, &ds, &cfg, 3).unwrap();
        let first = rows.first().unwrap().loss;
        let last = rows.last().unwrap().loss;
        assert!(
            last < 0.6 * first,
            "noise-prediction loss should drop: first {first}, last {last}"
        );
    }

    #[test]
    fn training_is_seed_deterministic() {
        let ds = affine_dataset(2, 30);
        let cfg = BcConfig {
            steps: 60,
            ..small_cfg()
        };
        let (p1, r1) = bc_train(PolicyKind::MlpC, &ds, &cfg, 9).unwrap();
        let (p2, r2) = bc_train(PolicyKind::MlpC, &ds, &cfg, 9).unwrap();
        assert_eq!(r1.last().unwrap().loss.to_bits(), r2.last().unwrap().loss.to_bits());
        let (a, b) = (p1.as_mlp().unwrap(), p2.as_mlp().unwrap());
        assert_eq!(a.net.params(), b.net.params());
    }

    #[test]
    fn different_seeds_differ() {
        let ds = affine_dataset(2, 30);
        let cfg = BcConfig {
            steps: 60,
            ..small_cfg()
        };
        let (p1, _) = bc_train(PolicyKind::MlpC, &ds, &cfg, 1).unwrap();
        let (p2, _) = bc_train(PolicyKind::MlpC, &ds, &cfg, 2).unwrap();
        assert_ne!(
            p1.as_mlp().unwrap().net.params(),
            p2.as_mlp().unwrap().net.params()
        );
    }

    #[test]
    fn mlp_s_forces_single_step_chunk() {
        let ds = affine_dataset(2, 20);
        let cfg = BcConfig {
            steps: 10,
            warmup_steps: 2,
            ..small_cfg()
        };
        let (p, _) = bc_train(PolicyKind::MlpS, &ds, &cfg, 4).unwrap();
        assert_eq!(p.as_mlp().unwrap().chunk.pred_horizon, 1);
        assert_eq!(p.kind(), PolicyKind::MlpS);
        let (p, _) = bc_train(PolicyKind::MlpC, &ds, &cfg, 4).unwrap();
        assert_eq!(p.as_mlp().unwrap().chunk.pred_horizon, 2);
        assert_eq!(p.kind(), PolicyKind::MlpC);
    }

    #[test]
    fn rejects_empty_dataset() {
        let ds = Dataset::new(Vec::new());
        let err = bc_train(PolicyKind::MlpS, &ds, &small_cfg(), 0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
