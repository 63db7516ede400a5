//! Diffusion policy over action chunks: noise-prediction training (DDPM)
//! and few-step deterministic sampling (DDIM).
//!
//! The denoiser is a plain MLP on [state, noisy chunk, timestep embedding];
//! at these input sizes a convolutional backbone buys nothing.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{ChunkSpec, NoiseSchedule, Normalizer};
use crate::env::STATE_DIM;
use crate::error::{Error, Result};
use crate::numerics::{Activation, Mlp, Net, Scratch};

/// Sinusoidal timestep embedding width (half sine, half cosine).
pub const TIME_EMB_DIM: usize = 32;

/// Writes the embedding of diffusion step `k` into `out`:
/// out[i] = sin(k * w_i), out[H+i] = cos(k * w_i) for i < H = 16, with
/// frequencies w_i = 10000^(-i / (H-1)).
pub fn time_embedding(k: usize, out: &mut [f32]) {
    assert_eq!(out.len(), TIME_EMB_DIM);
    let half = TIME_EMB_DIM / 2;
    for i in 0..half {
        let w = (10_000.0f64).powf(-(i as f64) / (half as f64 - 1.0));
        let kw = k as f64 * w;
        out[i] = kw.sin() as f32;
        out[half + i] = kw.cos() as f32;
    }
}

#[derive(Clone, Debug)]
pub struct DiffusionPolicy {
    /// [state(15) | noisy chunk | time embedding(32)] -> predicted noise.
    pub denoiser: Mlp,
    pub schedule: NoiseSchedule,
    pub chunk: ChunkSpec,
    pub normalizer: Normalizer,
}

impl DiffusionPolicy {
    pub fn new(
        chunk: ChunkSpec,
        schedule: NoiseSchedule,
        normalizer: Normalizer,
        hidden: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        chunk.validate()?;
        let mut sizes = vec![STATE_DIM + chunk.chunk_dim() + TIME_EMB_DIM];
        sizes.extend_from_slice(hidden);
        sizes.push(chunk.chunk_dim());
        let denoiser = Mlp::new(&sizes, Activation::Mish, Activation::Linear, rng)?;
        let p = DiffusionPolicy {
            denoiser,
            schedule,
            chunk,
            normalizer,
        };
        p.check_dims()?;
        Ok(p)
    }

    pub fn check_dims(&self) -> Result<()> {
        let want_in = STATE_DIM + self.chunk.chunk_dim() + TIME_EMB_DIM;
        if self.denoiser.in_dim() != want_in || self.denoiser.out_dim() != self.chunk.chunk_dim() {
            return Err(Error::Dependency(format!(
                "denoiser dims {}->{} do not match chunk spec (want {}->{})",
                self.denoiser.in_dim(),
                self.denoiser.out_dim(),
                want_in,
                self.chunk.chunk_dim()
            )));
        }
        Ok(())
    }

    fn in_dim(&self) -> usize {
        self.denoiser.in_dim()
    }

    /// Draws (step, noise) per sample and assembles the corrupted denoiser
    /// inputs x_k = sqrt(ab_k) x0 + sqrt(1 - ab_k) eps in normalized action
    /// space. Returns (inputs [b, in_dim], eps targets [b, chunk_dim]).
    /// Per sample, the rng is consumed in the order: step, then noise dims.
    pub fn ddpm_batch(
        &self,
        states_norm: &[f32],
        chunks_norm: &[f32],
        b: usize,
        rng: &mut ChaCha8Rng,
    ) -> (Vec<f32>, Vec<f32>) {
        use rand::Rng;
        let cd = self.chunk.chunk_dim();
        assert_eq!(states_norm.len(), b * STATE_DIM);
        assert_eq!(chunks_norm.len(), b * cd);
        let mut inputs = vec![0.0f32; b * self.in_dim()];
        let mut targets = vec![0.0f32; b * cd];
        let mut emb = [0.0f32; TIME_EMB_DIM];
        for i in 0..b {
            let k = rng.gen_range(1..=self.schedule.k_train);
            let ab = self.schedule.alpha_bar(k);
            let (sig, noise) = (ab.sqrt(), (1.0 - ab).sqrt());
            let row = &mut inputs[i * self.in_dim()..(i + 1) * self.in_dim()];
            row[..STATE_DIM].copy_from_slice(&states_norm[i * STATE_DIM..(i + 1) * STATE_DIM]);
            for d in 0..cd {
                let eps: f32 = StandardNormal.sample(rng);
                targets[i * cd + d] = eps;
                let x0 = chunks_norm[i * cd + d] as f64;
                row[STATE_DIM + d] = (sig * x0 + noise * eps as f64) as f32;
            }
            time_embedding(k, &mut emb);
            row[STATE_DIM + cd..].copy_from_slice(&emb);
        }
        (inputs, targets)
    }

    /// Noise-prediction loss on a normalized batch, accumulating denoiser
    /// gradients into `grad`. Loss = mean over all b * chunk_dim entries of
    /// (eps_hat - eps)^2.
    pub fn ddpm_loss(
        &self,
        states_norm: &[f32],
        chunks_norm: &[f32],
        b: usize,
        rng: &mut ChaCha8Rng,
        grad: &mut [f32],
        scratch: &mut Scratch,
    ) -> f64 {
        let (inputs, targets) = self.ddpm_batch(states_norm, chunks_norm, b, rng);
        crate::numerics::mse_loss_grad(&self.denoiser, &inputs, b, &targets, grad, scratch)
    }

    /// One DDIM pass over a batch of normalized states. Each lane draws its
    /// own initial x_K (and, for eta > 0, per-step noise) from its rng.
    /// Output is clamped to [-1, 1] per coordinate.
    pub fn ddim_sample_batch(
        &self,
        states_norm: &[f32],
        b: usize,
        eta: f64,
        rngs: &mut [ChaCha8Rng],
        out: &mut Vec<f32>,
        scratch: &mut Scratch,
    ) {
        let cd = self.chunk.chunk_dim();
        assert_eq!(states_norm.len(), b * STATE_DIM);
        assert_eq!(rngs.len(), b);
        let mut x = vec![0.0f32; b * cd];
        for (lane, rng) in rngs.iter_mut().enumerate() {
            for d in 0..cd {
                x[lane * cd + d] = StandardNormal.sample(rng);
            }
        }

        let mut inputs = vec![0.0f32; b * self.in_dim()];
        let mut emb = [0.0f32; TIME_EMB_DIM];
        let mut eps_hat = Vec::new();
        for (t, prev) in self.schedule.ddim_pairs() {
            time_embedding(t, &mut emb);
            for i in 0..b {
                let row = &mut inputs[i * self.in_dim()..(i + 1) * self.in_dim()];
                row[..STATE_DIM].copy_from_slice(&states_norm[i * STATE_DIM..(i + 1) * STATE_DIM]);
                row[STATE_DIM..STATE_DIM + cd].copy_from_slice(&x[i * cd..(i + 1) * cd]);
                row[STATE_DIM + cd..].copy_from_slice(&emb);
            }
            self.denoiser.forward_batch(&inputs, b, &mut eps_hat, scratch);

            let ab_t = self.schedule.alpha_bar(t);
            let ab_p = self.schedule.alpha_bar(prev);
            let sigma = eta
                * ((1.0 - ab_p) / (1.0 - ab_t)).sqrt()
                * (1.0 - ab_t / ab_p).sqrt();
            let dir_coef = (1.0 - ab_p - sigma * sigma).max(0.0).sqrt();
            for (lane, rng) in rngs.iter_mut().enumerate() {
                for d in 0..cd {
                    let idx = lane * cd + d;
                    let e = eps_hat[idx] as f64;
                    let x0 = (x[idx] as f64 - (1.0 - ab_t).sqrt() * e) / ab_t.sqrt();
                    let mut next = ab_p.sqrt() * x0 + dir_coef * e;
                    if sigma > 0.0 {
                        let z: f32 = StandardNormal.sample(rng);
                        next += sigma * z as f64;
                    }
                    x[idx] = next as f32;
                }
            }
        }
        for v in &mut x {
            *v = v.clamp(-1.0, 1.0);
        }
        out.clear();
        out.extend_from_slice(&x);
    }

    /// Single-state convenience wrapper around [`Self::ddim_sample_batch`].
    pub fn ddim_sample(
        &self,
        state_norm: &[f32],
        eta: f64,
        rng: &mut ChaCha8Rng,
        scratch: &mut Scratch,
    ) -> Vec<f32> {
        let mut out = Vec::new();
        // The batch path iterates a slice of rngs; hand it a window of one.
        let mut lane = rng.clone();
        self.ddim_sample_batch(
            state_norm,
            1,
            eta,
            std::slice::from_mut(&mut lane),
            &mut out,
            scratch,
        );
        *rng = lane;
        out
    }
}
