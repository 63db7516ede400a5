//! Diagonal Gaussian policy head: log-prob, sampling, entropy.
//!
//! Means and log-stds are f32 (network outputs / trainable vectors); all
//! densities accumulate in f64.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_74;

/// log-stds outside [-LOG_STD_LIMIT, LOG_STD_LIMIT] are a policy-collapse
/// smell; helpers stay finite there but trainers treat it as divergence.
pub const LOG_STD_LIMIT: f32 = 20.0;

/// Sum of per-dimension log-densities.
pub fn diag_log_prob(mean: &[f32], log_std: &[f32], x: &[f32]) -> f64 {
    debug_assert_eq!(mean.len(), log_std.len());
    debug_assert_eq!(mean.len(), x.len());
    let mut lp = 0.0f64;
    for i in 0..mean.len() {
        let ls = log_std[i] as f64;
        let z = (x[i] as f64 - mean[i] as f64) / ls.exp();
        lp -= 0.5 * z * z + ls + HALF_LN_2PI;
    }
    lp
}

/// Draws mean + sigma * z, z ~ N(0, I), one f32 normal per dimension.
pub fn diag_sample(mean: &[f32], log_std: &[f32], rng: &mut ChaCha8Rng) -> Vec<f32> {
    debug_assert_eq!(mean.len(), log_std.len());
    mean.iter()
        .zip(log_std)
        .map(|(&m, &ls)| {
            let z: f32 = StandardNormal.sample(rng);
            m + ls.exp() * z
        })
        .collect()
}

/// Entropy of the full diagonal Gaussian: sum_i (0.5 + 0.5 ln 2pi + log_std_i).
pub fn diag_entropy(log_std: &[f32]) -> f64 {
    log_std
        .iter()
        .map(|&ls| 0.5 + HALF_LN_2PI + ls as f64)
        .sum()
}

/// Owned mean/log-std pair for call sites that want a value type.
#[derive(Clone, Debug)]
pub struct DiagGaussian {
    pub mean: Vec<f32>,
    pub log_std: Vec<f32>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f32>, log_std: Vec<f32>) -> Self {
        assert_eq!(mean.len(), log_std.len(), "mean/log_std length mismatch");
        DiagGaussian { mean, log_std }
    }

    pub fn log_prob(&self, x: &[f32]) -> f64 {
        diag_log_prob(&self.mean, &self.log_std, x)
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f32> {
        diag_sample(&self.mean, &self.log_std, rng)
    }

    pub fn entropy(&self) -> f64 {
        diag_entropy(&self.log_std)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::named_rng;

    #[test]
    fn standard_normal_log_prob_at_mode() {
        let lp = diag_log_prob(&[0.0], &[0.0], &[0.0]);
        assert!((lp - (-0.918939)).abs() < 1e-5, "got {lp}");
    }

    #[test]
    fn shifted_scaled_log_prob() {
        // mean 1, std 2 (log_std = ln 2), x = 3.
        let lp = diag_log_prob(&[1.0], &[(2.0f32).ln()], &[3.0]);
        assert!((lp - (-2.112086)).abs() < 1e-5, "got {lp}");
    }

    #[test]
    fn log_prob_is_maximal_at_mean() {
        let mean = [0.3f32, -1.2, 0.7];
        let ls = [0.1f32, -0.5, 0.0];
        let at_mean = diag_log_prob(&mean, &ls, &mean);
        let mut rng = named_rng(11, "gauss-test");
        for _ in 0..50 {
            let x = diag_sample(&mean, &ls, &mut rng);
            assert!(diag_log_prob(&mean, &ls, &x) <= at_mean + 1e-12);
        }
    }

    #[test]
    fn entropies_match_closed_form() {
        let h1 = diag_entropy(&[0.0]);
        assert!((h1 - 1.418939).abs() < 1e-5, "got {h1}");
        let h2 = diag_entropy(&[-1.5]);
        assert!((h2 - (-0.081061)).abs() < 1e-5, "got {h2}");
        // Additivity over dimensions.
        let h3 = diag_entropy(&[0.0, -1.5]);
        assert!((h3 - (h1 + h2)).abs() < 1e-12);
    }

    #[test]
    fn sampling_moments() {
        let mut rng = named_rng(12, "gauss-test");
        let n = 100_000;
        let mut sum = 0.0f64;
        let mut sumsq = 0.0f64;
        for _ in 0..n {
            let x = diag_sample(&[0.0], &[0.0], &mut rng)[0] as f64;
            sum += x;
            sumsq += x * x;
        }
        let mean = sum / n as f64;
        let std = (sumsq / n as f64 - mean * mean).sqrt();
        assert!(mean.abs() < 0.02, "sample mean {mean}");
        assert!((0.98..1.02).contains(&std), "sample std {std}");
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let a = diag_sample(&[0.0; 4], &[-1.5; 4], &mut named_rng(5, "gauss"));
        let b = diag_sample(&[0.0; 4], &[-1.5; 4], &mut named_rng(5, "gauss"));
        assert_eq!(a, b);
    }

    #[test]
    fn tiny_log_std_collapses_to_mean() {
        let mut rng = named_rng(13, "gauss-test");
        let x = diag_sample(&[0.5], &[-20.0], &mut rng);
        assert!((x[0] - 0.5).abs() < 1e-6);
        // Density at the mean is finite (huge but representable).
        assert!(diag_log_prob(&[0.5], &[-20.0], &x).is_finite());
    }

    #[test]
    fn mean_log_prob_consistent_with_entropy() {
        // E[-log p] = entropy; check within 3 standard errors.
        let mean = [0.2f32, -0.4];
        let ls = [-0.3f32, 0.4];
        let mut rng = named_rng(14, "gauss-test");
        let n = 10_000;
        let lps: Vec<f64> = (0..n)
            .map(|_| diag_log_prob(&mean, &ls, &diag_sample(&mean, &ls, &mut rng)))
            .collect();
        let m: f64 = lps.iter().sum::<f64>() / n as f64;
        let var: f64 = lps.iter().map(|&l| (l - m) * (l - m)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        let h = diag_entropy(&ls);
        assert!(
            (-m - h).abs() <= 3.0 * se,
            "mean -log p = {} vs entropy {h}, se {se}",
            -m
        );
    }
}
