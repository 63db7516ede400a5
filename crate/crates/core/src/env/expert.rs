//! Scripted demonstration policy.
//!
//! A waypoint state machine that grasps the peg, carries it over the
//! socket, aligns, descends, and releases shortly above the socket so the
//! peg drops in (success lands a couple of steps after the release).
//! Two sources of deliberate multimodality make the demos non-trivial to
//! clone: the pre-grasp waypoint is approached from a randomly chosen side,
//! and each settle phase dwells a random 2-5 steps.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Action, EnvConfig, EnvState};
use crate::geometry::planar_angle_diff;
use crate::rng::named_rng;

const PREGRASP_LATERAL: f32 = 0.12;
const PREGRASP_HOVER: f32 = 0.10;
const WAYPOINT_TOL: f32 = 0.02;
const ROT_TOL: f64 = 0.05;
/// Peg height above the socket point while traversing.
const LIFT_CLEARANCE: f32 = 0.20;
/// Peg hover height above the socket before the final descent.
const SOCKET_HOVER: f32 = 0.14;
/// Release height: high enough that the peg needs two fall steps, so the
/// release action and the success step are distinct.
const RELEASE_HEIGHT: f32 = 0.09;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    Approach,
    SettlePre,
    AlignPeg,
    DescendPeg,
    CloseJaw,
    SettleGrasp,
    Lift,
    Traverse,
    AlignSocket,
    SettleAligned,
    DescendSocket,
    Release,
    Hold,
}

pub struct ScriptedExpert {
    rng: ChaCha8Rng,
    /// Pre-grasp approach side, drawn once per episode: -1 or +1.
    branch: f32,
    phase: Phase,
    dwell: u32,
}

impl ScriptedExpert {
    pub fn new(mut rng: ChaCha8Rng) -> Self {
        let branch = if rng.gen::<f32>() < 0.5 { -1.0 } else { 1.0 };
        ScriptedExpert {
            rng,
            branch,
            phase: Phase::Approach,
            dwell: 0,
        }
    }

    pub fn with_seed(seed: u64) -> Self {
        ScriptedExpert::new(named_rng(seed, "expert"))
    }

    /// Which side the pre-grasp waypoint sits on (-1 left, +1 right).
    pub fn branch(&self) -> f32 {
        self.branch
    }

    fn draw_dwell(&mut self) -> u32 {
        self.rng.gen_range(2..=5)
    }

    /// EE target that puts the peg at `desired_peg` under the current
    /// (rigid) grasp, assuming no further relative rotation.
    fn carry_target(state: &EnvState, desired_peg: [f32; 2]) -> [f32; 2] {
        [
            desired_peg[0] + state.ee_pos[0] - state.peg_pos[0],
            desired_peg[1] + state.ee_pos[1] - state.peg_pos[1],
        ]
    }

    /// EE rotation pair that aligns the peg with the socket.
    fn carry_rot(state: &EnvState) -> [f32; 2] {
        let r = state
            .ee_rot
            .compose(&state.peg_rot.inverse())
            .compose(&state.socket_rot);
        [r.c, r.s]
    }

    fn hold(state: &EnvState, gripper: f32) -> Action {
        Action {
            target_pos: state.ee_pos,
            target_rot: [state.ee_rot.c, state.ee_rot.s],
            gripper,
        }
    }

    pub fn act(&mut self, state: &EnvState, cfg: &EnvConfig) -> Action {
        let peg = state.peg_pos;
        let sock = state.socket_pos;
        let lateral = (peg[0] - sock[0]).abs();
        let peg_sock_rot = planar_angle_diff(&state.peg_rot, &state.socket_rot);

        // Phase transitions based on the current state.
        self.phase = match self.phase {
            Phase::Approach => {
                let wp = [peg[0] + self.branch * PREGRASP_LATERAL, peg[1] + PREGRASP_HOVER];
                if dist(state.ee_pos, wp) < WAYPOINT_TOL {
                    self.dwell = self.draw_dwell();
                    Phase::SettlePre
                } else {
                    Phase::Approach
                }
            }
            Phase::SettlePre => {
                if self.dwell == 0 {
                    Phase::AlignPeg
                } else {
                    self.dwell -= 1;
                    Phase::SettlePre
                }
            }
            Phase::AlignPeg => {
                let wp = [peg[0], peg[1] + PREGRASP_HOVER];
                if dist(state.ee_pos, wp) < WAYPOINT_TOL
                    && planar_angle_diff(&state.ee_rot, &state.peg_rot) < ROT_TOL
                {
                    Phase::DescendPeg
                } else {
                    Phase::AlignPeg
                }
            }
            Phase::DescendPeg => {
                if dist(state.ee_pos, peg) < cfg.grasp_radius * 0.5 {
                    Phase::CloseJaw
                } else {
                    Phase::DescendPeg
                }
            }
            Phase::CloseJaw => {
                if state.grasp.is_some() {
                    self.dwell = self.draw_dwell();
                    Phase::SettleGrasp
                } else {
                    Phase::CloseJaw
                }
            }
            Phase::SettleGrasp => {
                if self.dwell == 0 {
                    Phase::Lift
                } else {
                    self.dwell -= 1;
                    Phase::SettleGrasp
                }
            }
            Phase::Lift => {
                if peg[1] > sock[1] + LIFT_CLEARANCE - 0.02 {
                    Phase::Traverse
                } else {
                    Phase::Lift
                }
            }
            Phase::Traverse => {
                if lateral < WAYPOINT_TOL {
                    Phase::AlignSocket
                } else {
                    Phase::Traverse
                }
            }
            Phase::AlignSocket => {
                if lateral < cfg.pos_tol * 0.5
                    && peg_sock_rot < (cfg.ang_tol * 0.5) as f64
                    && (peg[1] - (sock[1] + SOCKET_HOVER)).abs() < WAYPOINT_TOL
                {
                    self.dwell = self.draw_dwell();
                    Phase::SettleAligned
                } else {
                    Phase::AlignSocket
                }
            }
            Phase::SettleAligned => {
                if self.dwell == 0 {
                    Phase::DescendSocket
                } else {
                    self.dwell -= 1;
                    Phase::SettleAligned
                }
            }
            Phase::DescendSocket => {
                if lateral >= cfg.pos_tol * 0.5 {
                    Phase::AlignSocket // drifted; re-align before descending further
                } else if peg[1] <= sock[1] + RELEASE_HEIGHT + WAYPOINT_TOL {
                    Phase::Release
                } else {
                    Phase::DescendSocket
                }
            }
            Phase::Release => Phase::Hold,
            Phase::Hold => Phase::Hold,
        };

        // Action for the (possibly updated) phase.
        let act = match self.phase {
            Phase::Approach => Action {
                target_pos: [peg[0] + self.branch * PREGRASP_LATERAL, peg[1] + PREGRASP_HOVER],
                target_rot: [state.peg_rot.c, state.peg_rot.s],
                gripper: -1.0,
            },
            Phase::SettlePre => Self::hold(state, -1.0),
            Phase::AlignPeg => Action {
                target_pos: [peg[0], peg[1] + PREGRASP_HOVER],
                target_rot: [state.peg_rot.c, state.peg_rot.s],
                gripper: -1.0,
            },
            Phase::DescendPeg => Action {
                target_pos: peg,
                target_rot: [state.peg_rot.c, state.peg_rot.s],
                gripper: -1.0,
            },
            Phase::CloseJaw => Self::hold(state, 1.0),
            Phase::SettleGrasp => Self::hold(state, 1.0),
            Phase::Lift => Action {
                target_pos: Self::carry_target(state, [peg[0], sock[1] + LIFT_CLEARANCE]),
                target_rot: [state.ee_rot.c, state.ee_rot.s],
                gripper: 1.0,
            },
            Phase::Traverse => Action {
                target_pos: Self::carry_target(state, [sock[0], sock[1] + LIFT_CLEARANCE]),
                target_rot: Self::carry_rot(state),
                gripper: 1.0,
            },
            Phase::AlignSocket => Action {
                target_pos: Self::carry_target(state, [sock[0], sock[1] + SOCKET_HOVER]),
                target_rot: Self::carry_rot(state),
                gripper: 1.0,
            },
            Phase::SettleAligned => Self::hold(state, 1.0),
            Phase::DescendSocket => Action {
                target_pos: Self::carry_target(state, [sock[0], sock[1] + RELEASE_HEIGHT]),
                target_rot: Self::carry_rot(state),
                gripper: 1.0,
            },
            Phase::Release | Phase::Hold => Self::hold(state, -1.0),
        };

        // Waypoints stay inside the workspace by construction of the scene;
        // clamp anyway so the guarantee is unconditional.
        Action {
            target_pos: [
                act.target_pos[0].clamp(cfg.workspace[0][0], cfg.workspace[1][0]),
                act.target_pos[1].clamp(cfg.workspace[0][1], cfg.workspace[1][1]),
            ],
            ..act
        }
    }
}

fn dist(a: [f32; 2], b: [f32; 2]) -> f32 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

impl super::Controller for ScriptedExpert {
    fn begin_episode(&mut self, episode_seed: u64) {
        *self = ScriptedExpert::with_seed(episode_seed);
    }

    fn act(&mut self, state: &EnvState, cfg: &EnvConfig) -> Action {
        ScriptedExpert::act(self, state, cfg)
    }
}
