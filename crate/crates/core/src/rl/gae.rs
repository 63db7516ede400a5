//! Generalized advantage estimation on a single lane's time series.

/// Backward GAE recursion:
/// delta_t = r_t + gamma * V_{t+1} * (1 - done_t) - V_t,
/// A_t = delta_t + gamma * lambda * (1 - done_t) * A_{t+1},
/// with V_T = `bootstrap` and returns = advantages + values. Accumulates in
/// f64; `dones` entries must be 0 or 1.
pub fn compute_gae(
    rewards: &[f32],
    values: &[f32],
    dones: &[f32],
    bootstrap: f32,
    gamma: f64,
    lambda: f64,
) -> (Vec<f32>, Vec<f32>) {
    let n = rewards.len();
    assert_eq!(values.len(), n, "values misaligned");
    assert_eq!(dones.len(), n, "dones misaligned");
    debug_assert!(dones.iter().all(|&d| d == 0.0 || d == 1.0));
    let mut advantages = vec![0.0f32; n];
    let mut returns = vec![0.0f32; n];
    let mut acc = 0.0f64;
    for t in (0..n).rev() {
        let not_done = 1.0 - dones[t] as f64;
        let next_v = if t + 1 == n { bootstrap as f64 } else { values[t + 1] as f64 };
        let delta = rewards[t] as f64 + gamma * next_v * not_done - values[t] as f64;
        acc = delta + gamma * lambda * not_done * acc;
        advantages[t] = acc as f32;
        returns[t] = (acc + values[t] as f64) as f32;
    }
    (advantages, returns)
}

/// In-place standardization to zero mean / unit population std, with a
/// 1e-8 std floor so constant advantages map to zeros.
pub fn normalize_advantages(adv: &mut [f32]) {
    if adv.len() < 2 {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().map(|&a| a as f64).sum::<f64>() / n;
    let var = adv.iter().map(|&a| (a as f64 - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    for a in adv.iter_mut() {
        *a = ((*a as f64 - mean) / std) as f32;
    }
}
