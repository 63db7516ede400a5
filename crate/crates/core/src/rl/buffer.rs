//! Time-major rollout storage shared by all on-policy trainers.

use super::gae::compute_gae;

/// Fixed-size buffer of `steps * num_envs` transitions, indexed
/// `[step][lane]`. `finish` runs GAE independently per lane, using that
/// lane's bootstrap value at the buffer boundary.
#[derive(Clone, Debug)]
pub struct RolloutBuffer {
    pub num_envs: usize,
    pub steps: usize,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub obs: Vec<f32>,
    pub actions: Vec<f32>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f32>,
    pub dones: Vec<f32>,
    pub values: Vec<f32>,
    /// V(s_T) per lane; masked by a terminal final transition.
    pub bootstrap: Vec<f32>,
    pub advantages: Vec<f32>,
    pub returns: Vec<f32>,
}

impl RolloutBuffer {
    pub fn new(num_envs: usize, steps: usize, obs_dim: usize, act_dim: usize) -> Self {
        let n = num_envs * steps;
        RolloutBuffer {
            num_envs,
            steps,
            obs_dim,
            act_dim,
            obs: vec![0.0; n * obs_dim],
            actions: vec![0.0; n * act_dim],
            log_probs: vec![0.0; n],
            rewards: vec![0.0; n],
            dones: vec![0.0; n],
            values: vec![0.0; n],
            bootstrap: vec![0.0; num_envs],
            advantages: vec![0.0; n],
            returns: vec![0.0; n],
        }
    }

    /// Total number of transitions.
    pub fn len(&self) -> usize {
        self.num_envs * self.steps
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn flat_index(&self, step: usize, lane: usize) -> usize {
        debug_assert!(step < self.steps && lane < self.num_envs);
        step * self.num_envs + lane
    }

    #[allow(clippy::too_many_arguments)]
    pub fn set(
        &mut self,
        step: usize,
        lane: usize,
        obs: &[f32],
        action: &[f32],
        log_prob: f64,
        reward: f32,
        done: bool,
        value: f32,
    ) {
        let i = self.flat_index(step, lane);
        self.obs[i * self.obs_dim..(i + 1) * self.obs_dim].copy_from_slice(obs);
        self.actions[i * self.act_dim..(i + 1) * self.act_dim].copy_from_slice(action);
        self.log_probs[i] = log_prob;
        self.rewards[i] = reward;
        self.dones[i] = if done { 1.0 } else { 0.0 };
        self.values[i] = value;
    }

    /// Computes advantages and returns for every lane.
    pub fn finish(&mut self, gamma: f64, lambda: f64) {
        let mut r = vec![0.0f32; self.steps];
        let mut v = vec![0.0f32; self.steps];
        let mut d = vec![0.0f32; self.steps];
        for lane in 0..self.num_envs {
            for t in 0..self.steps {
                let i = self.flat_index(t, lane);
                r[t] = self.rewards[i];
                v[t] = self.values[i];
                d[t] = self.dones[i];
            }
            let (adv, ret) = compute_gae(&r, &v, &d, self.bootstrap[lane], gamma, lambda);
            for t in 0..self.steps {
                let i = self.flat_index(t, lane);
                self.advantages[i] = adv[t];
                self.returns[i] = ret[t];
            }
        }
    }

    /// Sum of stored rewards; with the sparse env reward this equals the
    /// number of successes collected in the buffer.
    pub fn reward_sum(&self) -> f64 {
        self.rewards.iter().map(|&r| r as f64).sum()
    }
}
