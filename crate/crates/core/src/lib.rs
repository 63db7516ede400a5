//! Core library for the resip-lab pipeline: a desk-scale study of
//! behavior-cloned chunked policies improved by residual reinforcement
//! learning on a deterministic planar insertion task.
//!
//! Layering, bottom to top:
//! - [`numerics`]: from-scratch MLPs (plain and skip-connected), Adam,
//!   cosine LR schedule, diagonal Gaussians. f32 compute, f64 accumulation.
//! - [`geometry`]: rotation representations (6-D Gram-Schmidt, planar pairs).
//! - [`env`]: the planar precise-insertion environment, scripted expert,
//!   rollout plumbing.
//! - [`policy`]: normalization, action chunking, diffusion (DDPM/DDIM) and
//!   MLP behavior cloning.
//! - [`residual`]: frozen-base + residual Gaussian composition.
//! - [`rl`]: PPO (residual and direct variants), online IDQL reranking.
//! - [`distill`]: success harvesting, student distillation, evaluation.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod distill;
pub mod env;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod numerics;
pub mod policy;
pub mod residual;
pub mod rl;
pub mod rng;
pub mod threads;

pub use error::{Error, Result};
