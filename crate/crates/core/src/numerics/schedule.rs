//! Cosine learning-rate schedule with linear warmup.

use crate::error::{Error, Result};

/// lr(step) = max_lr * step / warmup                       for step < warmup
///          = max_lr * 0.5 * (1 + cos(pi * progress))      for warmup <= step <= total
/// where progress runs 0 -> 1 over the cosine phase. Steps beyond `total`
/// clamp to the final value (zero) with a warning.
#[derive(Clone, Copy, Debug)]
pub struct CosineSchedule {
    pub max_lr: f64,
    pub warmup: usize,
    pub total: usize,
}

impl CosineSchedule {
    pub fn new(max_lr: f64, warmup: usize, total: usize) -> Result<Self> {
        if warmup > total {
            return Err(Error::Config(format!(
                "schedule warmup ({warmup}) exceeds total steps ({total})"
            )));
        }
        if !(max_lr > 0.0) || !max_lr.is_finite() {
            return Err(Error::Config(format!("max_lr must be positive, got {max_lr}")));
        }
        Ok(CosineSchedule { max_lr, warmup, total })
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        let step = if step > self.total {
            log::warn!("schedule queried past total ({} > {}), clamping", step, self.total);
            self.total
        } else {
            step
        };
        if step < self.warmup {
            return self.max_lr * step as f64 / self.warmup as f64;
        }
        let span = (self.total - self.warmup).max(1);
        let progress = (step - self.warmup) as f64 / span as f64;
        self.max_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}
