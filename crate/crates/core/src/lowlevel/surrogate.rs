//! Deterministic gait-tracking executor.
//!
//! Stands in for a trained joint-level policy: it tracks the commanded
//! planar velocity and yaw rate through a first-order lag, holds the
//! commanded body height above the local ground and fails in the ways a
//! real gait controller fails when the terrain exceeds what the active gait
//! can handle.

use serde::{Deserialize, Serialize};

use super::{PhaseClock, ProprioState, JOINTS};
use crate::decoder::{CommandBounds, CommandVector, Gait};
use crate::error::{ensure_finite, Error, Result};
use crate::terrain::{HeightField, TerrainTile};

const GRAVITY: f64 = 9.81;

/// Terrain envelope a gait can handle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaitCapability {
    /// Largest upward step the gait climbs, m.
    pub max_step: f64,
    /// Longest unsupported stretch the gait carries the body across, m.
    pub max_span: f64,
    /// Largest lateral slope the gait tolerates, rad.
    pub max_tilt: f64,
}

impl GaitCapability {
    pub const fn new(max_step: f64, max_span: f64, max_tilt: f64) -> Self {
        Self {
            max_step,
            max_span,
            max_tilt,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Capabilities {
    pub trot: GaitCapability,
    pub pronk: GaitCapability,
    pub pace: GaitCapability,
    pub bound: GaitCapability,
}

impl Default for Capabilities {
    fn default() -> Self {
        Self {
            trot: GaitCapability::new(0.25, 0.15, 0.30),
            pronk: GaitCapability::new(0.20, 0.25, 0.20),
            pace: GaitCapability::new(0.12, 0.10, 0.35),
            bound: GaitCapability::new(0.18, 0.65, 0.15),
        }
    }
}

impl Capabilities {
    pub fn get(&self, gait: Gait) -> &GaitCapability {
        match gait {
            Gait::Trot => &self.trot,
            Gait::Pronk => &self.pronk,
            Gait::Pace => &self.pace,
            Gait::Bound => &self.bound,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurrogateConfig {
    /// Planar velocity and yaw-rate lag, s.
    pub velocity_time_constant: f64,
    /// Body height lag, s.
    pub height_time_constant: f64,
    /// Sink rate once the gait has lost footing, m/s.
    pub fall_rate: f64,
    /// Distance ahead of the body at which upcoming steps are sensed, m.
    pub lookahead: f64,
    /// Rises above this are walls: the body is blocked instead of climbing, m.
    pub collision_height: f64,
    /// Body contact force per unit approach speed when blocked, N s/m.
    pub impact_gain: f64,
    /// kg
    pub body_mass: f64,
    /// Half-width of the lateral slope probe, m.
    pub slope_probe: f64,
    /// Joint swing amplitude per unit commanded speed, rad s/m.
    pub swing_gain: f64,
    pub capabilities: Capabilities,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            velocity_time_constant: 0.3,
            height_time_constant: 0.1,
            fall_rate: 1.5,
            lookahead: 0.10,
            collision_height: 0.30,
            impact_gain: 120.0,
            body_mass: 12.0,
            slope_probe: 0.10,
            swing_gain: 0.3,
            capabilities: Capabilities::default(),
        }
    }
}

impl SurrogateConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("velocity_time_constant", self.velocity_time_constant),
            ("height_time_constant", self.height_time_constant),
            ("fall_rate", self.fall_rate),
            ("lookahead", self.lookahead),
            ("collision_height", self.collision_height),
            ("body_mass", self.body_mass),
            ("slope_probe", self.slope_probe),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("surrogate.{name} must be positive, got {v}")));
            }
        }
        if !(self.impact_gain >= 0.0 && self.swing_gain >= 0.0) {
            return Err(Error::Config("surrogate gains must be non-negative".into()));
        }
        for g in Gait::ALL {
            let c = self.capabilities.get(g);
            if !(c.max_step >= 0.0 && c.max_span >= 0.0 && c.max_tilt >= 0.0) {
                return Err(Error::Config(format!("capability of {g} must be non-negative")));
            }
        }
        Ok(())
    }
}

/// Positions of the command channels the executor reads.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommandChannels {
    pub v_x: usize,
    pub v_y: usize,
    pub yaw_rate: usize,
    pub body_height: usize,
    pub gait_frequency: usize,
    pub body_pitch: Option<usize>,
    pub body_roll: Option<usize>,
}

impl CommandChannels {
    pub fn resolve(bounds: &CommandBounds) -> Result<Self> {
        let optional = |name| bounds.index_of(name).ok();
        Ok(Self {
            v_x: bounds.index_of("v_x")?,
            v_y: bounds.index_of("v_y")?,
            yaw_rate: bounds.index_of("yaw_rate")?,
            body_height: bounds.index_of("body_height")?,
            gait_frequency: bounds.index_of("gait_frequency")?,
            body_pitch: optional("body_pitch"),
            body_roll: optional("body_roll"),
        })
    }

    pub fn targets(&self, c: &CommandVector) -> CommandTargets {
        let v = &c.continuous;
        CommandTargets {
            v_x: v[self.v_x],
            v_y: v[self.v_y],
            yaw_rate: v[self.yaw_rate],
            body_height: v[self.body_height],
            gait_frequency: v[self.gait_frequency],
            body_pitch: self.body_pitch.map_or(0.0, |j| v[j]),
            body_roll: self.body_roll.map_or(0.0, |j| v[j]),
            gait: c.gait,
        }
    }
}

/// The physical quantities a command asks for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommandTargets {
    pub v_x: f64,
    pub v_y: f64,
    pub yaw_rate: f64,
    pub body_height: f64,
    pub gait_frequency: f64,
    pub body_pitch: f64,
    pub body_roll: f64,
    pub gait: Gait,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    /// World position of the base, m. `pos[2]` is ground height plus `base_height`.
    pub pos: [f64; 3],
    pub yaw: f64,
    /// Base height above the local ground, m.
    pub base_height: f64,
    /// Body-frame linear velocity, m/s.
    pub lin_vel: [f64; 3],
    /// Body-frame angular velocity, rad/s.
    pub ang_vel: [f64; 3],
    pub q: [f64; JOINTS],
    pub qd: [f64; JOINTS],
    /// Body contact force vector from the last sub-step, N.
    pub body_contact: [f64; 3],
    pub clock: PhaseClock,
    pub roll: f64,
    pub pitch: f64,
    /// Latched once the gait loses footing.
    pub falling: bool,
    /// Distance travelled since the body was last over supported ground, m.
    pub unsupported_run: f64,
    pub out_of_bounds: bool,
}

impl RobotState {
    /// Standing still at `xy` with nominal joints.
    pub fn spawn(
        field: &HeightField,
        xy: [f64; 2],
        yaw: f64,
        base_height: f64,
        q0: &[f64; JOINTS],
        clock: PhaseClock,
    ) -> Result<Self> {
        let ground = field.query_height(xy[0], xy[1])?;
        Ok(Self {
            pos: [xy[0], xy[1], ground + base_height],
            yaw,
            base_height,
            lin_vel: [0.0; 3],
            ang_vel: [0.0; 3],
            q: *q0,
            qd: [0.0; JOINTS],
            body_contact: [0.0; 3],
            clock,
            roll: 0.0,
            pitch: 0.0,
            falling: false,
            unsupported_run: 0.0,
            out_of_bounds: false,
        })
    }

    pub fn planar_speed(&self) -> f64 {
        self.lin_vel[0].hypot(self.lin_vel[1])
    }

    pub fn body_contact_norm(&self) -> f64 {
        let f = self.body_contact;
        (f[0] * f[0] + f[1] * f[1] + f[2] * f[2]).sqrt()
    }

    pub fn proprio(&self, q0: &[f64; JOINTS]) -> ProprioState {
        let (sr, cr) = self.roll.sin_cos();
        let (sp, cp) = self.pitch.sin_cos();
        let mut joint_pos_err = [0.0; JOINTS];
        for j in 0..JOINTS {
            joint_pos_err[j] = self.q[j] - q0[j];
        }
        ProprioState {
            gravity_dir_body: [sp, -sr * cp, -cr * cp],
            joint_pos_err,
            joint_vel: self.qd,
            base_lin_vel: self.lin_vel,
            base_ang_vel: self.ang_vel,
            base_height: self.base_height,
            yaw: self.yaw,
        }
    }

    /// Four foot contacts sharing the body weight (none once falling),
    /// followed by the body contact.
    pub fn contact_forces(&self, body_mass: f64) -> Vec<[f64; 3]> {
        let mut out = Vec::with_capacity(5);
        if !self.falling {
            let per_foot = body_mass * GRAVITY / 4.0;
            out.extend([[0.0, 0.0, per_foot]; 4]);
        }
        out.push(self.body_contact);
        out
    }
}

/// Configured executor bound to a command roster.
#[derive(Debug, Clone)]
pub struct Surrogate {
    cfg: SurrogateConfig,
    channels: CommandChannels,
    q0: [f64; JOINTS],
}

/// Integral of a first-order lag over `dt`: returns the new value and the
/// exact area under the curve.
fn lag(value: f64, target: f64, tau: f64, dt: f64) -> (f64, f64) {
    let decay = (-dt / tau).exp();
    let next = target + (value - target) * decay;
    let area = target * dt + (value - target) * tau * (1.0 - decay);
    (next, area)
}

fn clamp_into(field: &HeightField, x: f64, y: f64) -> (f64, f64) {
    (x.clamp(0.0, field.length_m), y.clamp(0.0, field.width_m))
}

fn ground(field: &HeightField, x: f64, y: f64) -> f64 {
    let (x, y) = clamp_into(field, x, y);
    field
        .query_height(x, y)
        .expect("clamped point lies inside the field")
}

impl Surrogate {
    pub fn new(cfg: &SurrogateConfig, bounds: &CommandBounds, q0: &[f64; JOINTS]) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg: cfg.clone(),
            channels: CommandChannels::resolve(bounds)?,
            q0: *q0,
        })
    }

    pub fn config(&self) -> &SurrogateConfig {
        &self.cfg
    }

    pub fn channels(&self) -> &CommandChannels {
        &self.channels
    }

    pub fn q0(&self) -> &[f64; JOINTS] {
        &self.q0
    }

    /// One physics sub-step of length `dt`.
    pub fn step(
        &self,
        state: &RobotState,
        c: &CommandVector,
        dt: f64,
        tile: &TerrainTile,
    ) -> Result<RobotState> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Domain(format!("sub-step needs dt > 0, got {dt}")));
        }
        ensure_finite(&c.continuous, "command")?;
        let field = &tile.field;
        let cfg = &self.cfg;
        let target = self.channels.targets(c);
        let mut s = state.clone();
        s.body_contact = [0.0; 3];
        s.clock = PhaseClock {
            frequency: target.gait_frequency,
            gait: target.gait,
            ..state.clock
        }
        .advance(dt)?;

        if s.falling || s.out_of_bounds {
            let drop = (cfg.fall_rate * dt).min(s.base_height);
            s.base_height -= drop;
            s.pos[2] -= drop;
            s.lin_vel = [0.0, 0.0, -cfg.fall_rate];
            s.ang_vel = [0.0; 3];
            s.qd = [0.0; JOINTS];
            return Ok(s);
        }

        let tau = cfg.velocity_time_constant;
        let (vx, dx_body) = lag(state.lin_vel[0], target.v_x, tau, dt);
        let (vy, dy_body) = lag(state.lin_vel[1], target.v_y, tau, dt);
        let (wz, dyaw) = lag(state.ang_vel[2], target.yaw_rate, tau, dt);
        let yaw_mid = state.yaw + 0.5 * dyaw;
        let (sy, cy) = yaw_mid.sin_cos();
        let dx = cy * dx_body - sy * dy_body;
        let dy = sy * dx_body + cy * dy_body;
        let mut x = state.pos[0] + dx;
        let mut y = state.pos[1] + dy;
        s.yaw = state.yaw + dyaw;
        s.lin_vel = [vx, vy, 0.0];
        s.ang_vel = [0.0, 0.0, wz];

        if !field.contains(x, y) {
            s.out_of_bounds = true;
            (x, y) = clamp_into(field, x, y);
        }

        let cap = *cfg.capabilities.get(target.gait);
        let step_len = dx.hypot(dy);
        let h_here = ground(field, x, y);
        if step_len > 1e-12 {
            let (ux, uy) = (dx / step_len, dy / step_len);
            let rise = ground(field, x + ux * cfg.lookahead, y + uy * cfg.lookahead) - h_here;
            if rise > cfg.collision_height {
                // A wall: stay put and push against it.
                let speed = step_len / dt;
                let force = cfg.impact_gain * speed;
                s.body_contact = [-ux * force, -uy * force, 0.0];
                x = state.pos[0];
                y = state.pos[1];
                s.lin_vel = [0.0; 3];
            } else if rise > cap.max_step {
                s.falling = true;
            }
        }

        let (xc, yc) = clamp_into(field, x, y);
        if field.is_supported(xc, yc)? {
            s.unsupported_run = 0.0;
        } else {
            s.unsupported_run = state.unsupported_run + (x - state.pos[0]).hypot(y - state.pos[1]);
            if s.unsupported_run > cap.max_span {
                s.falling = true;
            }
        }

        // Lateral and longitudinal slope under the body; wall edges are not slopes.
        let (sy, cy) = s.yaw.sin_cos();
        let r = cfg.slope_probe;
        let side = ground(field, x - sy * r, y + cy * r) - ground(field, x + sy * r, y - cy * r);
        let along = ground(field, x + cy * r, y + sy * r) - ground(field, x - cy * r, y - sy * r);
        let terrain_roll = if side.abs() < cfg.collision_height {
            (side / (2.0 * r)).atan()
        } else {
            0.0
        };
        let terrain_pitch = if along.abs() < cfg.collision_height {
            (along / (2.0 * r)).atan()
        } else {
            0.0
        };
        if terrain_roll.abs() > cap.max_tilt {
            s.falling = true;
        }
        let new_roll = terrain_roll + target.body_roll;
        let new_pitch = -terrain_pitch + target.body_pitch;
        s.ang_vel[0] = (new_roll - state.roll) / dt;
        s.ang_vel[1] = (new_pitch - state.pitch) / dt;
        s.roll = new_roll;
        s.pitch = new_pitch;

        let (z, _) = lag(
            state.base_height,
            target.body_height,
            cfg.height_time_constant,
            dt,
        );
        s.base_height = z;
        let h = ground(field, x, y);
        s.pos = [x, y, h + z];
        s.lin_vel[2] = (s.pos[2] - state.pos[2]) / dt;

        // Synthetic joint motion: swing grows with commanded speed, cadence
        // follows the gait frequency and leg phases.
        let amp = cfg.swing_gain * (target.v_x.hypot(target.v_y) + 0.2 * target.yaw_rate.abs());
        let omega = std::f64::consts::TAU * target.gait_frequency;
        let legs = s.clock.leg_phases();
        for (leg, phi) in legs.iter().enumerate() {
            let (sn, cs) = (std::f64::consts::TAU * phi).sin_cos();
            for (k, gain) in [(0, 0.0), (1, 1.0), (2, -1.0)] {
                let j = 3 * leg + k;
                s.q[j] = self.q0[j] + amp * gain * sn;
                s.qd[j] = amp * gain * omega * cs;
            }
        }
        Ok(s)
    }
}

/// One sub-step of the executor; see [`Surrogate::step`].
pub fn surrogate_executor_step(
    state: &RobotState,
    c: &CommandVector,
    dt: f64,
    tile: &TerrainTile,
    surrogate: &Surrogate,
) -> Result<RobotState> {
    surrogate.step(state, c, dt, tile)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::{decode, HighLevelAction};
    use crate::lowlevel::ActionMapperConfig;
    use crate::terrain::{sample_tile, TerrainConfig, TerrainFamily};

    fn setup() -> (Surrogate, CommandBounds, [f64; JOINTS]) {
        let bounds = CommandBounds::default();
        let q0 = ActionMapperConfig::default().q0;
        let s = Surrogate::new(&SurrogateConfig::default(), &bounds, &q0).unwrap();
        (s, bounds, q0)
    }

    /// Command with the given forward speed and gait, everything else at midpoint.
    fn command(bounds: &CommandBounds, v_x: f64, gait: Gait) -> CommandVector {
        let mut a = [0.0; 13];
        a[0] = bounds.normalize(0, v_x);
        a[12] = gait.channel_value();
        decode(&HighLevelAction(a), bounds, 1.0).unwrap()
    }

    fn spawn(tile: &TerrainTile, q0: &[f64; JOINTS], gait: Gait) -> RobotState {
        RobotState::spawn(&tile.field, tile.start_pos, 0.0, 0.28, q0, PhaseClock::new(gait, 2.0)).unwrap()
    }

    fn run(s: &Surrogate, mut st: RobotState, c: &CommandVector, tile: &TerrainTile, steps: usize) -> RobotState {
        for _ in 0..steps {
            st = s.step(&st, c, 0.02, tile).unwrap();
        }
        st
    }

    #[test]
    fn equilibrium_on_flat_ground() {
        let (s, bounds, q0) = setup();
        let tile = sample_tile(&TerrainConfig::default(), 0, TerrainFamily::Stair, 1).unwrap();
        let st0 = spawn(&tile, &q0, Gait::Trot);
        let c = command(&bounds, 0.0, Gait::Trot);
        let st = run(&s, st0.clone(), &c, &tile, 200);
        assert_eq!(st.pos[0], st0.pos[0]);
        assert_eq!(st.pos[1], st0.pos[1]);
        assert!((st.base_height - 0.28).abs() < 1e-6);
        assert!(!st.falling);
    }

    #[test]
    fn first_order_lag_displacement() {
        let (s, bounds, q0) = setup();
        // Zero tilt angle gives an exactly flat field.
        let mut cfg = TerrainConfig::default();
        cfg.tilt.angle.min = 0.0;
        let flat = sample_tile(&cfg, 0, TerrainFamily::Tilt, 1).unwrap();
        let v = 0.5;
        let st0 = spawn(&flat, &q0, Gait::Trot);
        let c = command(&bounds, v, Gait::Trot);
        let dt = 0.02;
        let st = run(&s, st0.clone(), &c, &flat, 100);
        let t = 2.0;
        let tau: f64 = 0.3;
        let expected = v * (t - tau * (1.0 - (-t / tau).exp()));
        let disp = st.pos[0] - st0.pos[0];
        assert!((disp - expected).abs() <= v * dt, "{disp} vs {expected}");
        assert!((disp - 1.0).abs() < 0.3);
    }

    fn cross(tile: &TerrainTile, gait: Gait) -> RobotState {
        let (s, bounds, q0) = setup();
        let c = command(&bounds, 0.8, gait);
        let mut st = spawn(tile, &q0, gait);
        for _ in 0..600 {
            st = s.step(&st, &c, 0.02, tile).unwrap();
            if st.falling || st.pos[0] > tile.goal_pos[0] {
                break;
            }
        }
        st
    }

    #[test]
    fn bound_crosses_gaps_trot_falls() {
        let tile = sample_tile(&TerrainConfig::default(), 8, TerrainFamily::Gap, 5).unwrap();
        let b = cross(&tile, Gait::Bound);
        assert!(!b.falling && b.pos[0] > tile.goal_pos[0]);
        let t = cross(&tile, Gait::Trot);
        assert!(t.falling);
    }

    #[test]
    fn trot_climbs_stairs_bound_trips() {
        let tile = sample_tile(&TerrainConfig::default(), 8, TerrainFamily::Stair, 5).unwrap();
        let t = cross(&tile, Gait::Trot);
        assert!(!t.falling && t.pos[0] > tile.goal_pos[0]);
        let b = cross(&tile, Gait::Bound);
        assert!(b.falling);
    }

    #[test]
    fn fall_reaches_threshold_quickly() {
        let tile = sample_tile(&TerrainConfig::default(), 8, TerrainFamily::Gap, 5).unwrap();
        let (s, bounds, q0) = setup();
        let c = command(&bounds, 0.8, Gait::Trot);
        let mut st = spawn(&tile, &q0, Gait::Trot);
        while !st.falling {
            st = s.step(&st, &c, 0.02, &tile).unwrap();
        }
        let mut n = 0;
        while st.base_height >= 0.15 {
            st = s.step(&st, &c, 0.02, &tile).unwrap();
            n += 1;
        }
        assert!(n <= 10);
    }

    #[test]
    fn pillar_blocks_with_contact_force() {
        let mut cfg = TerrainConfig::default();
        cfg.pillar.count = crate::terrain::DifficultyParam::new(1.0, 1.0);
        let tile = sample_tile(&cfg, 9, TerrainFamily::Pillar, 2).unwrap();
        let (s, bounds, q0) = setup();
        let p = tile.layout.pillars[0];
        let c = command(&bounds, 1.0, Gait::Trot);
        // Start 0.6 m in front of a pillar, heading straight at it.
        let xy = [p.center[0] - p.radius - 0.6, p.center[1]];
        let mut st = RobotState::spawn(&tile.field, xy, 0.0, 0.28, &q0, PhaseClock::new(Gait::Trot, 2.0)).unwrap();
        let mut peak: f64 = 0.0;
        for _ in 0..100 {
            st = s.step(&st, &c, 0.02, &tile).unwrap();
            peak = peak.max(st.body_contact_norm());
        }
        assert!(st.pos[0] < p.center[0] - p.radius, "{st:?} {p:?}");
        assert!(peak > 40.0, "{peak} {st:?} {p:?}");
    }

    #[test]
    fn leaving_extent_is_flagged() {
        let (s, bounds, q0) = setup();
        let tile = sample_tile(&TerrainConfig::default(), 0, TerrainFamily::Rough, 1).unwrap();
        let c = command(&bounds, -1.0, Gait::Trot);
        let st = run(&s, spawn(&tile, &q0, Gait::Trot), &c, &tile, 100);
        assert!(st.out_of_bounds);
    }

    #[test]
    fn deterministic() {
        let (s, bounds, q0) = setup();
        let tile = sample_tile(&TerrainConfig::default(), 5, TerrainFamily::Rough, 9).unwrap();
        let c = command(&bounds, 0.7, Gait::Pronk);
        let a = run(&s, spawn(&tile, &q0, Gait::Pronk), &c, &tile, 50);
        let b = run(&s, spawn(&tile, &q0, Gait::Pronk), &c, &tile, 50);
        assert_eq!(a, b);
    }

    #[test]
    fn resting_proprio_is_level() {
        let (_, _, q0) = setup();
        let tile = sample_tile(&TerrainConfig::default(), 0, TerrainFamily::Rough, 1).unwrap();
        let p = spawn(&tile, &q0, Gait::Trot).proprio(&q0);
        assert!(p.validate().is_ok());
        assert_eq!(p.gravity_dir_body, [0.0, -0.0, -1.0]);
    }
}
