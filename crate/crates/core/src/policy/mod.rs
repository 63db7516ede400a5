//! Base chunked policies: normalization, chunking, diffusion (DDPM/DDIM),
//! MLP regression baselines, behavior-cloning training, and the executor
//! that replays predicted chunks into the environment.

mod bc;
mod chunk;
mod diffusion;
mod mlp_policy;
mod noise;
mod normalizer;

pub use bc::{bc_train, BcConfig, BcRow, PolicyKind};
pub use chunk::{make_chunk_targets, ChunkSpec};
pub use diffusion::{time_embedding, DiffusionPolicy, TIME_EMB_DIM};
pub use mlp_policy::MlpPolicy;
pub use noise::NoiseSchedule;
pub use normalizer::Normalizer;

use rand_chacha::ChaCha8Rng;

use crate::env::{Action, Controller, EnvConfig, EnvState, ACTION_DIM, STATE_DIM};
use crate::numerics::Scratch;
use crate::rng::named_rng;

/// Anything that predicts normalized action chunks from raw states.
pub trait ChunkPolicy: Send + Sync {
    fn chunk_spec(&self) -> &ChunkSpec;
    fn normalizer(&self) -> &Normalizer;

    /// Predicts a flattened normalized chunk (values in [-1, 1]) for a raw
    /// state vector. Stochastic policies draw from `rng`.
    fn predict_chunk(&self, state_raw: &[f32], rng: &mut ChaCha8Rng, scratch: &mut Scratch)
        -> Vec<f32>;
}

impl ChunkPolicy for DiffusionPolicy {
    fn chunk_spec(&self) -> &ChunkSpec {
        &self.chunk
    }

    fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    fn predict_chunk(
        &self,
        state_raw: &[f32],
        rng: &mut ChaCha8Rng,
        scratch: &mut Scratch,
    ) -> Vec<f32> {
        let mut s = [0.0f32; STATE_DIM];
        self.normalizer.normalize_state(state_raw, &mut s);
        self.ddim_sample(&s, 0.0, rng, scratch)
    }
}

impl ChunkPolicy for MlpPolicy {
    fn chunk_spec(&self) -> &ChunkSpec {
        &self.chunk
    }

    fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    fn predict_chunk(
        &self,
        state_raw: &[f32],
        _rng: &mut ChaCha8Rng,
        scratch: &mut Scratch,
    ) -> Vec<f32> {
        let mut s = [0.0f32; STATE_DIM];
        self.normalizer.normalize_state(state_raw, &mut s);
        self.predict(&s, scratch)
    }
}

/// A trained base policy of any kind.
#[derive(Clone, Debug)]
pub enum BasePolicy {
    Diffusion(DiffusionPolicy),
    Mlp(MlpPolicy),
}

impl BasePolicy {
    pub fn kind(&self) -> PolicyKind {
        match self {
            BasePolicy::Diffusion(_) => PolicyKind::Diffusion,
            BasePolicy::Mlp(p) => {
                if p.chunk.pred_horizon == 1 {
                    PolicyKind::MlpS
                } else {
                    PolicyKind::MlpC
                }
            }
        }
    }

    pub fn as_diffusion(&self) -> Option<&DiffusionPolicy> {
        match self {
            BasePolicy::Diffusion(p) => Some(p),
            BasePolicy::Mlp(_) => None,
        }
    }

    pub fn as_mlp(&self) -> Option<&MlpPolicy> {
        match self {
            BasePolicy::Mlp(p) => Some(p),
            BasePolicy::Diffusion(_) => None,
        }
    }
}

impl ChunkPolicy for BasePolicy {
    fn chunk_spec(&self) -> &ChunkSpec {
        match self {
            BasePolicy::Diffusion(p) => p.chunk_spec(),
            BasePolicy::Mlp(p) => p.chunk_spec(),
        }
    }

    fn normalizer(&self) -> &Normalizer {
        match self {
            BasePolicy::Diffusion(p) => p.normalizer(),
            BasePolicy::Mlp(p) => p.normalizer(),
        }
    }

    fn predict_chunk(
        &self,
        state_raw: &[f32],
        rng: &mut ChaCha8Rng,
        scratch: &mut Scratch,
    ) -> Vec<f32> {
        match self {
            BasePolicy::Diffusion(p) => p.predict_chunk(state_raw, rng, scratch),
            BasePolicy::Mlp(p) => p.predict_chunk(state_raw, rng, scratch),
        }
    }
}

/// Rng stream label for base chunk sampling during rollouts. Combined
/// (base + residual) rollouts use the same label so the base consumes an
/// identical stream with or without a residual attached.
pub const ROLLOUT_STREAM: &str = "policy-rollout";

/// Replays predicted chunks: queries the policy, executes the first
/// `exec_horizon` actions, re-queries. Episode ends mid-window simply stop
/// the replay (the rollout loop owns termination).
pub struct ChunkExecutor<'p, P: ChunkPolicy + ?Sized> {
    policy: &'p P,
    rng: ChaCha8Rng,
    scratch: Scratch,
    buf: Vec<f32>,
    idx: usize,
}

impl<'p, P: ChunkPolicy + ?Sized> ChunkExecutor<'p, P> {
    pub fn new(policy: &'p P) -> Self {
        ChunkExecutor {
            policy,
            rng: named_rng(0, ROLLOUT_STREAM),
            scratch: Scratch::new(),
            buf: Vec::new(),
            idx: 0,
        }
    }

    /// The most recent predicted chunk (normalized), for tests.
    pub fn last_chunk(&self) -> &[f32] {
        &self.buf
    }
}

impl<P: ChunkPolicy + ?Sized> Controller for ChunkExecutor<'_, P> {
    fn begin_episode(&mut self, episode_seed: u64) {
        self.rng = named_rng(episode_seed, ROLLOUT_STREAM);
        self.buf.clear();
        self.idx = 0;
    }

    fn act(&mut self, state: &EnvState, _cfg: &EnvConfig) -> Action {
        let spec = self.policy.chunk_spec();
        if self.buf.is_empty() || self.idx >= spec.exec_horizon {
            self.buf = self
                .policy
                .predict_chunk(&state.to_vec(), &mut self.rng, &mut self.scratch);
            debug_assert_eq!(self.buf.len(), spec.chunk_dim());
            self.idx = 0;
        }
        let z = &self.buf[self.idx * ACTION_DIM..(self.idx + 1) * ACTION_DIM];
        self.idx += 1;
        let mut clamped = [0.0f32; ACTION_DIM];
        for (c, &v) in clamped.iter_mut().zip(z) {
            *c = v.clamp(-1.0, 1.0);
        }
        let mut raw = [0.0f32; ACTION_DIM];
        self.policy.normalizer().denormalize_action(&clamped, &mut raw);
        Action::from_vec(&raw)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{reset, step};

    /// Fixed-chunk policy: always predicts the same normalized chunk.
    struct ConstChunk {
        chunk: ChunkSpec,
        norm: Normalizer,
        values: Vec<f32>,
    }

    impl ChunkPolicy for ConstChunk {
        fn chunk_spec(&self) -> &ChunkSpec {
            &self.chunk
        }

        fn normalizer(&self) -> &Normalizer {
            &self.norm
        }

        fn predict_chunk(&self, _s: &[f32], _r: &mut ChaCha8Rng, _sc: &mut Scratch) -> Vec<f32> {
            self.values.clone()
        }
    }

    fn ramp_normalizer() -> Normalizer {
        // Non-trivial affine maps so denormalization is observable.
        Normalizer {
            state_min: vec![-1.0; STATE_DIM],
            state_max: vec![1.0; STATE_DIM],
            action_min: vec![-2.0, -2.0, -1.0, -1.0, -3.0],
            action_max: vec![2.0, 2.0, 1.0, 1.0, 5.0],
        }
    }

    #[test]
    fn executor_replays_denormalized_prefix() {
        let spec = ChunkSpec::new(4, 2).unwrap();
        let mut values = Vec::new();
        for t in 0..4 {
            values.extend_from_slice(&[0.1 * t as f32, -0.1, 0.5, 0.2, 0.0]);
        }
        let policy = ConstChunk {
            chunk: spec,
            norm: ramp_normalizer(),
            values: values.clone(),
        };
        let cfg = EnvConfig::default();
        let mut exec = ChunkExecutor::new(&policy);
        exec.begin_episode(42);
        let mut st = reset(&cfg, 42).unwrap();
        for t in 0..4 {
            let a = exec.act(&st, &cfg);
            // Window of 2: executed actions are chunk rows 0,1,0,1.
            let row = t % 2;
            let mut want = [0.0f32; ACTION_DIM];
            policy
                .norm
                .denormalize_action(&values[row * 5..row * 5 + 5], &mut want);
            assert_eq!(a.to_vec(), want);
            step(&mut st, &a, &cfg);
        }
    }

    #[test]
    fn single_step_spec_requeries_every_step() {
        struct Counting {
            inner: ConstChunk,
            calls: std::sync::atomic::AtomicUsize,
        }
        impl ChunkPolicy for Counting {
            fn chunk_spec(&self) -> &ChunkSpec {
                self.inner.chunk_spec()
            }
            fn normalizer(&self) -> &Normalizer {
                self.inner.normalizer()
            }
            fn predict_chunk(&self, s: &[f32], r: &mut ChaCha8Rng, sc: &mut Scratch) -> Vec<f32> {
                self.calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                self.inner.predict_chunk(s, r, sc)
            }
        }
        let policy = Counting {
            inner: ConstChunk {
                chunk: ChunkSpec::single(),
                norm: ramp_normalizer(),
                values: vec![0.0; ACTION_DIM],
            },
            calls: std::sync::atomic::AtomicUsize::new(0),
        };
        let cfg = EnvConfig::default();
        let mut exec = ChunkExecutor::new(&policy);
        exec.begin_episode(7);
        let st = reset(&cfg, 7).unwrap();
        for _ in 0..5 {
            exec.act(&st, &cfg);
        }
        assert_eq!(policy.calls.load(std::sync::atomic::Ordering::SeqCst), 5);
    }
}
