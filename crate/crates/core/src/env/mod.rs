//! Deterministic planar precise-insertion environment.
//!
//! Side-view world on the unit square: a free peg rests on the floor, a
//! socket block stands to the right, and its top-center point is the
//! insertion target. A floating gripper (the end effector) tracks commanded
//! poses under per-step displacement/rotation clamps, can rigidly grasp the
//! peg, and must place it within `pos_tol` of the socket point with matched
//! rotation. Crossing the plate line from above is blocked; pressing down
//! against the plate while laterally misaligned beyond `slip_threshold`
//! perturbs the grasp offset ("slip"), which is the precision failure mode
//! the whole pipeline is built around. Reward is sparse: 1.0 exactly once,
//! at the step where the tolerance check first passes.
//!
//! All randomness (reset jitter, slip directions) comes from a per-episode
//! rng seeded at `reset`; stepping is a pure function of state + action.

mod expert;
mod rollout;

pub use expert::ScriptedExpert;
pub use rollout::{rollout, Controller, FnController};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{planar_angle_diff, planar_normalize, PlanarRot};
use crate::rng::named_rng;

pub const STATE_DIM: usize = 15;
pub const ACTION_DIM: usize = 5;

/// Vertical line the free peg rests on.
pub const FLOOR_Y: f32 = -0.8;
/// Nominal peg position (on the floor, left half).
pub const PEG_NOMINAL: [f32; 2] = [-0.45, FLOOR_Y];
/// Nominal socket point: top-center of the socket block.
pub const SOCKET_NOMINAL: [f32; 2] = [0.45, -0.55];
/// Horizontal half-extent of the socket plate around the socket point.
pub const PLATE_HALFWIDTH: f32 = 0.2;
/// Fixed end-effector start pose.
pub const EE_START: [f32; 2] = [0.0, -0.2];
/// Fall speed of a released peg (per step).
pub const FALL_STEP: f32 = 0.05;
/// Per-step angular tracking clamp (radians).
pub const MAX_STEP_ROT: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Randomness {
    Low,
    Med,
}

impl Randomness {
    /// Uniform position jitter half-range applied to fixture poses.
    pub fn pos_jitter(self) -> f32 {
        match self {
            Randomness::Low => 0.05,
            Randomness::Med => 0.15,
        }
    }

    /// Uniform rotation jitter half-range (radians).
    pub fn rot_jitter(self) -> f32 {
        match self {
            Randomness::Low => 0.2,
            Randomness::Med => 0.6,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Randomness::Low => "low",
            Randomness::Med => "med",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub randomness: Randomness,
    pub max_steps: u32,
    /// Success: peg within this distance of the socket point (strict).
    pub pos_tol: f32,
    /// Success: peg/socket rotation difference below this (strict, radians).
    pub ang_tol: f32,
    /// Close command attaches when the peg is within this of the EE.
    pub grasp_radius: f32,
    /// Per-step EE displacement clamp.
    pub max_step_disp: f32,
    /// Pressing on the plate with more lateral error than this slips.
    pub slip_threshold: f32,
    /// Magnitude of the grasp-offset perturbation per slip event.
    pub slip_magnitude: f32,
    /// Axis-aligned workspace bounds: [[min_x, min_y], [max_x, max_y]].
    pub workspace: [[f32; 2]; 2],
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            randomness: Randomness::Low,
            max_steps: 200,
            pos_tol: 0.015,
            ang_tol: 0.10,
            grasp_radius: 0.05,
            max_step_disp: 0.05,
            slip_threshold: 0.02,
            slip_magnitude: 0.03,
            workspace: [[-1.0, -1.0], [1.0, 1.0]],
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be positive".into()));
        }
        for (name, v) in [
            ("pos_tol", self.pos_tol),
            ("ang_tol", self.ang_tol),
            ("grasp_radius", self.grasp_radius),
            ("max_step_disp", self.max_step_disp),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.slip_threshold < 0.0 || self.slip_magnitude < 0.0 {
            return Err(Error::Config("slip parameters must be non-negative".into()));
        }
        if self.workspace[0][0] >= self.workspace[1][0] || self.workspace[0][1] >= self.workspace[1][1] {
            return Err(Error::Config("workspace min must be below max".into()));
        }
        Ok(())
    }

    /// Digest over the canonical JSON encoding; trajectory files carry this
    /// so readers can refuse data generated under different env semantics.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("env config serializes");
        let mut h = Sha256::new();
        h.update(json.as_bytes());
        format!("{:x}", h.finalize())
    }

    fn clamp_to_workspace(&self, p: [f32; 2]) -> [f32; 2] {
        [
            p[0].clamp(self.workspace[0][0], self.workspace[1][0]),
            p[1].clamp(self.workspace[0][1], self.workspace[1][1]),
        ]
    }
}

/// Rigid transform from EE frame to peg pose while grasped.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GraspOffset {
    /// Peg position in the EE frame.
    pub pos: [f32; 2],
    /// Peg rotation relative to the EE.
    pub rot: PlanarRot,
}

#[derive(Clone, Debug)]
pub struct EnvState {
    pub ee_pos: [f32; 2],
    pub ee_rot: PlanarRot,
    /// Realized EE displacement of the previous step.
    pub ee_vel: [f32; 2],
    /// 1.0 open .. 0.0 closed.
    pub gripper_width: f32,
    pub peg_pos: [f32; 2],
    pub peg_rot: PlanarRot,
    pub socket_pos: [f32; 2],
    pub socket_rot: PlanarRot,
    pub grasp: Option<GraspOffset>,
    pub step: u32,
    pub inserted: bool,
    pub seed: u64,
    rng: ChaCha8Rng,
}

/// 5-dim command: absolute target pose for the EE plus a gripper command.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Action {
    pub target_pos: [f32; 2],
    /// (cos, sin)-style pair; normalized internally, a near-zero pair means
    /// "hold current rotation".
    pub target_rot: [f32; 2],
    /// >= 0 closes the gripper, < 0 opens it.
    pub gripper: f32,
}

impl Action {
    pub fn from_vec(v: &[f32]) -> Action {
        assert_eq!(v.len(), ACTION_DIM, "action vector must have {ACTION_DIM} entries");
        Action {
            target_pos: [v[0], v[1]],
            target_rot: [v[2], v[3]],
            gripper: v[4],
        }
    }

    pub fn to_vec(&self) -> [f32; ACTION_DIM] {
        [
            self.target_pos[0],
            self.target_pos[1],
            self.target_rot[0],
            self.target_rot[1],
            self.gripper,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.to_vec().iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct StepInfo {
    /// The grasp offset was perturbed this step.
    pub slipped: bool,
    /// The insertion check passed this step (reward 1).
    pub success: bool,
    /// Episode hit max_steps without success.
    pub truncated: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct StepOut {
    pub reward: f32,
    pub done: bool,
    pub info: StepInfo,
}

fn dist2(a: [f32; 2], b: [f32; 2]) -> f32 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

/// Draws a fresh episode. Fixture poses get uniform jitter scaled by the
/// randomness level: lateral coordinate + rotation for the peg (its height
/// is pinned by the floor), both coordinates + rotation for the socket
/// point. Re-draws until peg and socket are separated by more than
/// 2 * grasp_radius (at most 100 tries).
pub fn reset(cfg: &EnvConfig, seed: u64) -> Result<EnvState> {
    let mut rng = named_rng(seed, "env");
    let jp = cfg.randomness.pos_jitter();
    let jr = cfg.randomness.rot_jitter();
    let mut uni = |half: f32| (rng.gen::<f32>() * 2.0 - 1.0) * half;

    let mut chosen = None;
    for _ in 0..100 {
        // Draw order is part of the determinism contract:
        // peg x, peg rot, socket x, socket y, socket rot.
        let peg_pos = [PEG_NOMINAL[0] + uni(jp), PEG_NOMINAL[1]];
        let peg_rot = PlanarRot::from_angle(uni(jr) as f64);
        let socket_pos = [SOCKET_NOMINAL[0] + uni(jp), SOCKET_NOMINAL[1] + uni(jp)];
        let socket_rot = PlanarRot::from_angle(uni(jr) as f64);
        if dist2(peg_pos, socket_pos) > 2.0 * cfg.grasp_radius {
            chosen = Some((peg_pos, peg_rot, socket_pos, socket_rot));
            break;
        }
    }
    let (peg_pos, peg_rot, socket_pos, socket_rot) = chosen.ok_or_else(|| {
        Error::Contract("reset could not separate peg and socket within 100 tries".into())
    })?;

    Ok(EnvState {
        ee_pos: EE_START,
        ee_rot: PlanarRot::IDENTITY,
        ee_vel: [0.0, 0.0],
        gripper_width: 1.0,
        peg_pos,
        peg_rot,
        socket_pos,
        socket_rot,
        grasp: None,
        step: 0,
        inserted: false,
        seed,
        rng,
    })
}

impl EnvState {
    pub fn is_done(&self, cfg: &EnvConfig) -> bool {
        self.inserted || self.step >= cfg.max_steps
    }

    /// Observation layout:
    /// [ee_pos(2), ee_rot(2), ee_vel(2), gripper_width(1),
    ///  peg_pos(2), peg_rot(2), socket_pos(2), socket_rot(2)].
    pub fn to_vec(&self) -> [f32; STATE_DIM] {
        [
            self.ee_pos[0],
            self.ee_pos[1],
            self.ee_rot.c,
            self.ee_rot.s,
            self.ee_vel[0],
            self.ee_vel[1],
            self.gripper_width,
            self.peg_pos[0],
            self.peg_pos[1],
            self.peg_rot.c,
            self.peg_rot.s,
            self.socket_pos[0],
            self.socket_pos[1],
            self.socket_rot.c,
            self.socket_rot.s,
        ]
    }

    fn plate_y(&self) -> f32 {
        self.socket_pos[1]
    }

    fn over_plate(&self, x: f32) -> bool {
        (x - self.socket_pos[0]).abs() <= PLATE_HALFWIDTH
    }
}

/// Advances one step. Panics on a done episode or a non-finite action
/// (both are caller bugs; training loops check for divergence upstream).
pub fn step(state: &mut EnvState, action: &Action, cfg: &EnvConfig) -> StepOut {
    assert!(!state.is_done(cfg), "stepping a done episode");
    assert!(action.is_finite(), "non-finite action: {action:?}");

    let old_ee = state.ee_pos;

    // 1. Gripper command. Opening releases immediately (the peg falls later
    //    this same step); closing attaches after motion, at the new poses.
    let closing = action.gripper >= 0.0;
    if !closing {
        state.grasp = None;
    }
    state.gripper_width = if closing { 0.0 } else { 1.0 };

    // 2. EE tracking under displacement/rotation clamps.
    let target = cfg.clamp_to_workspace(action.target_pos);
    let mut disp = [target[0] - state.ee_pos[0], target[1] - state.ee_pos[1]];
    let dn = (disp[0] * disp[0] + disp[1] * disp[1]).sqrt();
    if dn > cfg.max_step_disp {
        let k = cfg.max_step_disp / dn;
        disp = [disp[0] * k, disp[1] * k];
    }
    let mut new_ee = [state.ee_pos[0] + disp[0], state.ee_pos[1] + disp[1]];

    if let Ok(target_rot) = planar_normalize(action.target_rot[0], action.target_rot[1]) {
        let delta = state.ee_rot.inverse().compose(&target_rot).angle();
        let clamped = delta.clamp(-MAX_STEP_ROT, MAX_STEP_ROT);
        state.ee_rot = state.ee_rot.compose(&PlanarRot::from_angle(clamped));
    } // degenerate pair: hold current rotation

    let mut info = StepInfo::default();

    // 3. Peg update.
    if let Some(mut off) = state.grasp {
        let rotated = state.ee_rot.rotate(off.pos);
        let mut peg = [new_ee[0] + rotated[0], new_ee[1] + rotated[1]];
        state.peg_rot = state.ee_rot.compose(&off.rot);

        // Plate line: block downward crossings while laterally over the
        // plate; slipping only happens on a grasped, misaligned press.
        let plate_y = state.plate_y();
        if state.peg_pos[1] >= plate_y && peg[1] < plate_y && state.over_plate(peg[0]) {
            let press = plate_y - peg[1];
            new_ee[1] += press;
            peg[1] = plate_y;
            let lateral = (peg[0] - state.socket_pos[0]).abs();
            if lateral > cfg.slip_threshold && cfg.slip_magnitude > 0.0 {
                info.slipped = true;
                let phi = state.rng.gen::<f32>() * std::f32::consts::TAU;
                off.pos[0] += cfg.slip_magnitude * phi.cos();
                off.pos[1] += cfg.slip_magnitude * phi.sin();
                state.grasp = Some(off);
                let rotated = state.ee_rot.rotate(off.pos);
                peg = [new_ee[0] + rotated[0], new_ee[1] + rotated[1]];
                // Re-resolve support for the shifted peg.
                if state.over_plate(peg[0]) && peg[1] < plate_y && state.peg_pos[1] >= plate_y {
                    let d = plate_y - peg[1];
                    new_ee[1] += d;
                    peg[1] = plate_y;
                }
            }
        }
        // Floor.
        if peg[1] < FLOOR_Y {
            let d = FLOOR_Y - peg[1];
            new_ee[1] += d;
            peg[1] = FLOOR_Y;
        }
        state.peg_pos = peg;
    } else {
        // Free peg: falls straight down to its support line.
        let support = if state.over_plate(state.peg_pos[0]) && state.peg_pos[1] >= state.plate_y() {
            state.plate_y()
        } else {
            FLOOR_Y
        };
        state.peg_pos[1] = (state.peg_pos[1] - FALL_STEP).max(support.min(state.peg_pos[1]));
    }

    // 4. Late attach: closing near the peg grabs it rigidly.
    if closing && state.grasp.is_none() && dist2(state.peg_pos, new_ee) <= cfg.grasp_radius {
        let inv = state.ee_rot.inverse();
        let rel = [state.peg_pos[0] - new_ee[0], state.peg_pos[1] - new_ee[1]];
        state.grasp = Some(GraspOffset {
            pos: inv.rotate(rel),
            rot: inv.compose(&state.peg_rot),
        });
    }

    state.ee_vel = [new_ee[0] - old_ee[0], new_ee[1] - old_ee[1]];
    state.ee_pos = new_ee;
    state.step += 1;

    // 5. Sparse success check, fired at most once per episode.
    let mut reward = 0.0;
    if dist2(state.peg_pos, state.socket_pos) < cfg.pos_tol
        && planar_angle_diff(&state.peg_rot, &state.socket_rot) < cfg.ang_tol as f64
    {
        state.inserted = true;
        info.success = true;
        reward = 1.0;
    }
    let done = state.is_done(cfg);
    info.truncated = done && !state.inserted;
    StepOut { reward, done, info }
}
