//! From-scratch learning numerics: dense networks with reverse-mode
//! gradients, Adam with decoupled weight decay, cosine LR schedule, and
//! diagonal Gaussians.
//!
//! Everything computes in f32 with f64 loss/statistic accumulation, single
//! fixed operation order, no threading below this layer: results are
//! bit-reproducible for a given seed on a given target.

mod adam;
mod gaussian;
mod net;
mod schedule;

pub use adam::{clip_global_norm, Adam};
pub use gaussian::{
    diag_entropy, diag_log_prob, diag_sample, DiagGaussian, LOG_STD_LIMIT,
};
pub use net::{mse_loss_grad, Activation, LayerView, Mlp, Net, ResMlp, Scratch};
pub use schedule::CosineSchedule;
