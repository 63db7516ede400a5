//! Diffusion noise schedule: squared-cosine signal decay with clipped
//! per-step betas, plus the evenly spaced step subset used at inference.

use crate::error::{Error, Result};

/// Offset in the squared-cosine signal curve that keeps the first betas
/// away from zero.
const COSINE_S: f64 = 0.008;
/// Per-step beta cap; the raw schedule hits 1.0 at the final step.
const BETA_MAX: f64 = 0.999;

#[derive(Clone, Debug)]
pub struct NoiseSchedule {
    pub k_train: usize,
    pub k_infer: usize,
    /// betas[k] is the noise added by step k+1 (1-indexed diffusion steps).
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    /// alpha_bars[k] = prod of alphas[0..k]; alpha_bar(0) = 1 handled by
    /// [`NoiseSchedule::alpha_bar`].
    pub alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(k_train: usize, k_infer: usize) -> Result<Self> {
        if k_train == 0 {
            return Err(Error::Config("k_train must be positive".into()));
        }
        if k_infer == 0 || k_infer > k_train {
            return Err(Error::Config(format!(
                "k_infer must be in 1..={k_train}, got {k_infer}"
            )));
        }
        // Signal curve f(t) = cos^2((t/K + s)/(1 + s) * pi/2), decreasing
        // from f(0) to ~0 at t = K. alpha_bar(t) = f(t)/f(0); beta clipped.
        let f = |t: f64| {
            let x = (t / k_train as f64 + COSINE_S) / (1.0 + COSINE_S);
            (x * std::f64::consts::FRAC_PI_2).cos().powi(2)
        };
        let f0 = f(0.0);
        let mut betas = Vec::with_capacity(k_train);
        let mut alphas = Vec::with_capacity(k_train);
        let mut alpha_bars = Vec::with_capacity(k_train);
        let mut prev_bar = 1.0f64;
        for k in 1..=k_train {
            let bar_raw = f(k as f64) / f0;
            let beta = (1.0 - bar_raw / prev_bar).min(BETA_MAX);
            let alpha = 1.0 - beta;
            let bar = prev_bar * alpha;
            betas.push(beta);
            alphas.push(alpha);
            alpha_bars.push(bar);
            prev_bar = bar;
        }
        Ok(NoiseSchedule {
            k_train,
            k_infer,
            betas,
            alphas,
            alpha_bars,
        })
    }

    /// Cumulative signal fraction after `k` steps; `alpha_bar(0) = 1`.
    pub fn alpha_bar(&self, k: usize) -> f64 {
        if k == 0 {
            1.0
        } else {
            self.alpha_bars[k - 1]
        }
    }

    /// The `k_infer` evenly spaced inference steps as (step, prev_step)
    /// pairs in sampling order, ending at prev_step = 0. With the default
    /// 100/4: [(100, 75), (75, 50), (50, 25), (25, 0)].
    pub fn ddim_pairs(&self) -> Vec<(usize, usize)> {
        let steps: Vec<usize> = (1..=self.k_infer)
            .map(|i| {
                let t = (self.k_train as f64 * i as f64 / self.k_infer as f64).round() as usize;
                t.max(1)
            })
            .collect();
        let mut pairs = Vec::with_capacity(self.k_infer);
        for i in (0..steps.len()).rev() {
            let prev = if i == 0 { 0 } else { steps[i - 1] };
            pairs.push((steps[i], prev));
        }
        pairs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_schedule_shape() {
        let s = NoiseSchedule::new(100, 4).unwrap();
        assert_eq!(s.betas.len(), 100);
        // Near-1 signal at the start, near-0 at the end.
        assert!(s.alpha_bar(1) > 0.99, "alpha_bar(1) = {}", s.alpha_bar(1));
        assert!(s.alpha_bar(100) < 0.05, "alpha_bar(K) = {}", s.alpha_bar(100));
    }

    #[test]
    fn ddim_pairs_default() {
        let s = NoiseSchedule::new(100, 4).unwrap();
        assert_eq!(s.ddim_pairs(), vec![(100, 75), (75, 50), (50, 25), (25, 0)]);
        let s1 = NoiseSchedule::new(100, 1).unwrap();
        assert_eq!(s1.ddim_pairs(), vec![(100, 0)]);
    }

    #[test]
    fn ddim_pairs_non_divisible() {
        let s = NoiseSchedule::new(10, 3).unwrap();
        let pairs = s.ddim_pairs();
        assert_eq!(pairs.len(), 3);
        assert_eq!(pairs.first().unwrap().0, 10);
        assert_eq!(pairs.last().unwrap().1, 0);
        for w in pairs.windows(2) {
            assert_eq!(w[0].1, w[1].0);
        }
    }

    #[test]
    fn invalid_schedules_rejected() {
        assert!(NoiseSchedule::new(0, 1).is_err());
        assert!(NoiseSchedule::new(10, 0).is_err());
        assert!(NoiseSchedule::new(10, 11).is_err());
    }

    proptest! {
        #[test]
        fn schedule_invariants(k_train in 4usize..400) {
            let s = NoiseSchedule::new(k_train, 1).unwrap();
            let mut prev_beta = 0.0;
            let mut prev_bar = 1.0;
            for k in 0..k_train {
                prop_assert!(s.betas[k] > 0.0 && s.betas[k] < 1.0, "beta out of (0,1)");
                prop_assert!(s.betas[k] + 1e-15 >= prev_beta, "betas must not decrease");
                prop_assert!(s.alpha_bars[k] < prev_bar, "alpha_bar must strictly decrease");
                prop_assert!((s.alphas[k] - (1.0 - s.betas[k])).abs() < 1e-15);
                prev_beta = s.betas[k];
                prev_bar = s.alpha_bars[k];
            }
        }
    }
}
