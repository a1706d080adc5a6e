//! Execution layer: low-level observation, joint target mapping, phase
//! clock, tracking rewards and the gait-tracking surrogate executor.

mod surrogate;

pub use surrogate::{
    surrogate_executor_step, Capabilities, CommandChannels, CommandTargets, GaitCapability,
    RobotState, Surrogate, SurrogateConfig,
};

use serde::{Deserialize, Serialize};

use crate::decoder::{CommandVector, Gait, COMMAND_DIM, EMBED_DIM};
use crate::error::{ensure_finite, Error, Result};
use crate::reward::RewardBreakdown;

pub const JOINTS: usize = 12;
pub const LEGS: usize = 4;

/// Leg order used for every 12-vector: FL, FR, RL, RR, three joints each
/// (hip, thigh, calf).
pub const LEG_NAMES: [&str; LEGS] = ["FL", "FR", "RL", "RR"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProprioState {
    /// Unit gravity direction expressed in the body frame.
    pub gravity_dir_body: [f64; 3],
    /// Joint position minus nominal pose, rad.
    pub joint_pos_err: [f64; JOINTS],
    pub joint_vel: [f64; JOINTS],
    /// Body-frame linear velocity, m/s.
    pub base_lin_vel: [f64; 3],
    /// Body-frame angular velocity, rad/s.
    pub base_ang_vel: [f64; 3],
    /// Base height above local ground, m.
    pub base_height: f64,
    pub yaw: f64,
}

impl ProprioState {
    /// Standing still on flat ground.
    pub fn at_rest(base_height: f64) -> Self {
        Self {
            gravity_dir_body: [0.0, 0.0, -1.0],
            joint_pos_err: [0.0; JOINTS],
            joint_vel: [0.0; JOINTS],
            base_lin_vel: [0.0; 3],
            base_ang_vel: [0.0; 3],
            base_height,
            yaw: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.gravity_dir_body.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (n - 1.0).abs() > 1e-6 {
            return Err(Error::Input(format!("gravity direction has norm {n}, expected 1")));
        }
        Ok(())
    }
}

/// Per-leg phase offsets `[FL, FR, RL, RR]` from a gait embedding.
pub fn leg_offsets(embedding: &[f64; EMBED_DIM]) -> [f64; LEGS] {
    let [diag, lateral, fore_aft] = *embedding;
    [
        0.0,
        (diag + lateral).fract(),
        (diag + fore_aft).fract(),
        (lateral + fore_aft).fract(),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseClock {
    /// Base phase in cycles, `[0, 1)`.
    pub phase: f64,
    /// Stepping frequency, Hz.
    pub frequency: f64,
    pub gait: Gait,
}

impl PhaseClock {
    pub fn new(gait: Gait, frequency: f64) -> Self {
        Self {
            phase: 0.0,
            frequency,
            gait,
        }
    }

    /// `phase' = fract(phase + frequency * dt)`.
    pub fn advance(&self, dt: f64) -> Result<PhaseClock> {
        if dt <= 0.0 || !dt.is_finite() {
            return Err(Error::Domain(format!("phase step needs dt > 0, got {dt}")));
        }
        let mut phase = (self.phase + self.frequency * dt).rem_euclid(1.0);
        if phase >= 1.0 {
            phase = 0.0;
        }
        Ok(PhaseClock { phase, ..*self })
    }

    pub fn leg_phases(&self) -> [f64; LEGS] {
        let off = leg_offsets(&self.gait.embedding());
        off.map(|o| (self.phase + o).rem_euclid(1.0))
    }
}

/// Flat low-level observation vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LowLevelObs(pub Vec<f64>);

/// Slot layout of [`LowLevelObs`].
pub mod obs_layout {
    use std::ops::Range;
    pub const GRAVITY: Range<usize> = 0..3;
    pub const JOINT_POS_ERR: Range<usize> = 3..15;
    pub const JOINT_VEL: Range<usize> = 15..27;
    pub const PREV_ACTION: Range<usize> = 27..39;
    pub const PREV_ACTION_2: Range<usize> = 39..51;
    pub const COMMAND: Range<usize> = 51..66;
    pub const LEG_PHASE: Range<usize> = 66..70;
    pub const GAIT_ONE_HOT: Range<usize> = 70..74;
    pub const LEN: usize = 74;
}

/// `[g_b, dq, qdot, a_{t-1}, a_{t-2}, c, leg phases, gait one-hot]`.
pub fn build_obs(
    prop: &ProprioState,
    prev_action: &[f64],
    prev_action_2: &[f64],
    command: &CommandVector,
    clock: &PhaseClock,
) -> Result<LowLevelObs> {
    for (name, a) in [("a_{t-1}", prev_action), ("a_{t-2}", prev_action_2)] {
        if a.len() != JOINTS {
            return Err(Error::Input(format!(
                "{name} has {} entries, expected {JOINTS}",
                a.len()
            )));
        }
    }
    let mut v = Vec::with_capacity(obs_layout::LEN);
    v.extend_from_slice(&prop.gravity_dir_body);
    v.extend_from_slice(&prop.joint_pos_err);
    v.extend_from_slice(&prop.joint_vel);
    v.extend_from_slice(prev_action);
    v.extend_from_slice(prev_action_2);
    v.extend_from_slice(&command.to_array());
    v.extend_from_slice(&clock.leg_phases());
    let mut one_hot = [0.0; 4];
    one_hot[clock.gait.index()] = 1.0;
    v.extend_from_slice(&one_hot);
    debug_assert_eq!(v.len(), obs_layout::LEN);
    debug_assert_eq!(COMMAND_DIM, obs_layout::COMMAND.len());
    Ok(LowLevelObs(v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActionMapperConfig {
    pub a_max: f64,
    pub alpha: f64,
    /// Nominal joint pose, rad.
    pub q0: [f64; JOINTS],
}

impl Default for ActionMapperConfig {
    fn default() -> Self {
        Self {
            a_max: 1.0,
            alpha: 0.25,
            q0: [
                0.1, 0.8, -1.5, -0.1, 0.8, -1.5, 0.1, 1.0, -1.5, -0.1, 1.0, -1.5,
            ],
        }
    }
}

/// `q* = q0 + alpha * clip(a, -a_max, a_max)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionMapper {
    a_max: f64,
    alpha: f64,
    q0: [f64; JOINTS],
}

impl ActionMapper {
    pub fn new(cfg: &ActionMapperConfig) -> Result<Self> {
        if !(cfg.a_max > 0.0 && cfg.alpha > 0.0) {
            return Err(Error::Config(format!(
                "action mapper needs a_max > 0 and alpha > 0, got {} and {}",
                cfg.a_max, cfg.alpha
            )));
        }
        ensure_finite(&cfg.q0, "q0").map_err(|e| Error::Config(e.to_string()))?;
        Ok(Self {
            a_max: cfg.a_max,
            alpha: cfg.alpha,
            q0: cfg.q0,
        })
    }

    pub fn a_max(&self) -> f64 {
        self.a_max
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn q0(&self) -> &[f64; JOINTS] {
        &self.q0
    }

    pub fn map(&self, a: &[f64; JOINTS]) -> [f64; JOINTS] {
        let mut q = self.q0;
        for (qj, aj) in q.iter_mut().zip(a) {
            *qj += self.alpha * aj.clamp(-self.a_max, self.a_max);
        }
        q
    }
}

pub fn map_action(a: &[f64; JOINTS], m: &ActionMapper) -> [f64; JOINTS] {
    m.map(a)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LowLevelWeights {
    pub lin_vel: f64,
    pub yaw_rate: f64,
    pub stabilization: f64,
    pub smoothness: f64,
    pub energy: f64,
}

impl Default for LowLevelWeights {
    fn default() -> Self {
        Self {
            lin_vel: 1.0,
            yaw_rate: 0.5,
            stabilization: -1.0,
            smoothness: -0.01,
            energy: -1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LowLevelRewardConfig {
    /// (m/s)^2
    pub sigma_lin: f64,
    /// (rad/s)^2
    pub sigma_yaw: f64,
    pub weights: LowLevelWeights,
}

impl Default for LowLevelRewardConfig {
    fn default() -> Self {
        Self {
            sigma_lin: 0.25,
            sigma_yaw: 0.25,
            weights: LowLevelWeights::default(),
        }
    }
}

/// Commanded planar velocity and yaw rate tracked by the low level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingTarget {
    pub v_x: f64,
    pub v_y: f64,
    pub yaw_rate: f64,
}

pub fn reward_lowlevel(
    prop: &ProprioState,
    target: &TrackingTarget,
    action: &[f64; JOINTS],
    prev_action: &[f64; JOINTS],
    cfg: &LowLevelRewardConfig,
) -> Result<RewardBreakdown> {
    if !(cfg.sigma_lin > 0.0 && cfg.sigma_yaw > 0.0) {
        return Err(Error::Config(format!(
            "tracking sigmas must be positive, got {} and {}",
            cfg.sigma_lin, cfg.sigma_yaw
        )));
    }
    let ex = prop.base_lin_vel[0] - target.v_x;
    let ey = prop.base_lin_vel[1] - target.v_y;
    let ew = prop.base_ang_vel[2] - target.yaw_rate;
    let r_lin = (-(ex * ex + ey * ey) / cfg.sigma_lin).exp();
    let r_yaw = (-(ew * ew) / cfg.sigma_yaw).exp();
    let g = prop.gravity_dir_body;
    let stab = g[0] * g[0] + g[1] * g[1] + (g[2] + 1.0) * (g[2] + 1.0);
    let smooth: f64 = action.iter().zip(prev_action).map(|(a, b)| (a - b) * (a - b)).sum();
    let energy: f64 = prop.joint_vel.iter().map(|v| v * v).sum();
    let w = &cfg.weights;
    Ok(RewardBreakdown::from_terms([
        ("lin_vel", r_lin, w.lin_vel),
        ("yaw_rate", r_yaw, w.yaw_rate),
        ("stabilization", stab, w.stabilization),
        ("smoothness", smooth, w.smoothness),
        ("energy", energy, w.energy),
    ]))
}
