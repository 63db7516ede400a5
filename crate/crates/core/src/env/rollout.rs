//! Episode driving: anything that maps states to actions can be rolled out
//! into a trajectory.

use super::{reset, step, Action, EnvConfig, EnvState, STATE_DIM};
use crate::data::Trajectory;
use crate::error::Result;

pub trait Controller {
    /// Called once before each episode with its seed; controllers re-derive
    /// any per-episode randomness from it.
    fn begin_episode(&mut self, _episode_seed: u64) {}

    fn act(&mut self, state: &EnvState, cfg: &EnvConfig) -> Action;
}

impl<C: Controller + ?Sized> Controller for Box<C> {
    fn begin_episode(&mut self, episode_seed: u64) {
        (**self).begin_episode(episode_seed);
    }

    fn act(&mut self, state: &EnvState, cfg: &EnvConfig) -> Action {
        (**self).act(state, cfg)
    }
}

/// Adapter for plain observation-vector policies.
pub struct FnController<F>(pub F);

impl<F: FnMut(&[f32; STATE_DIM]) -> Action> Controller for FnController<F> {
    fn act(&mut self, state: &EnvState, _cfg: &EnvConfig) -> Action {
        (self.0)(&state.to_vec())
    }
}

/// Runs one episode to completion (or `max_steps`, if given and smaller
/// than the env horizon). The trajectory holds the initial state, every
/// executed action with its reward, and the resulting states; so
/// `states.len() == actions.len() + 1`.
pub fn rollout<C: Controller>(
    ctl: &mut C,
    cfg: &EnvConfig,
    seed: u64,
    max_steps: Option<u32>,
) -> Result<Trajectory> {
    let limit = max_steps.unwrap_or(cfg.max_steps).min(cfg.max_steps);
    ctl.begin_episode(seed);
    let mut state = reset(cfg, seed)?;
    let mut traj = Trajectory {
        states: vec![state.to_vec()],
        actions: Vec::new(),
        rewards: Vec::new(),
        success: false,
        seed,
        config_digest: cfg.digest(),
        origin: None,
    };
    let mut taken = 0;
    while !state.is_done(cfg) && taken < limit {
        let action = ctl.act(&state, cfg);
        let out = step(&mut state, &action, cfg);
        traj.actions.push(action.to_vec());
        traj.rewards.push(out.reward);
        traj.states.push(state.to_vec());
        taken += 1;
    }
    traj.success = state.inserted;
    Ok(traj)
}
