//! Hierarchical episodic environment.
//!
//! One decision step decodes the high-level action, runs the executor for a
//! fixed number of physics sub-steps, checks termination and reach events,
//! and only then computes the reward. Resetting is left to the caller so the
//! reward of a terminal step always describes the terminal state.
//!
//! [`VecEnv`] steps many environments in parallel, feeds finished episodes
//! to the curriculum and resets them at their new level.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curriculum::{CurriculumState, LevelChange};
use crate::decoder::{
    clip_normalize, CommandVector, Decoder, Gait, HighLevelAction, ACTION_DIM, COMMAND_DIM, CONT_DIM,
};
use crate::error::{Error, Result};
use crate::lowlevel::{
    reward_lowlevel, LowLevelRewardConfig, PhaseClock, RobotState, Surrogate, TrackingTarget,
};
use crate::reward::{self, RewardBreakdown, RewardConfig, RewardInputs};
use crate::terrain::{sample_tile, TerrainConfig, TerrainFamily, TerrainTile};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// Physics sub-steps per decision step.
    pub substeps: usize,
    /// Physics step, s.
    pub dt_phys: f64,
    /// Episode horizon in decision steps.
    pub t_max: usize,
    /// Base height below which the robot has fallen, m.
    pub fall_height: f64,
    /// Body contact force above which a collision ends the episode, N.
    pub collision_force: f64,
    /// Goal distance below which the goal counts as reached, m.
    pub reach_distance: f64,
    /// Forward terrain probes, m ahead of the base along the heading.
    pub probe_distances: Vec<f64>,
    /// Families drawn uniformly at each reset.
    pub families: Vec<TerrainFamily>,
    /// Radius of the uniform start-position perturbation, m.
    pub start_jitter: f64,
    /// Half-range of the uniform start-heading perturbation, rad.
    pub yaw_jitter: f64,
    /// Nominal standing height used at spawn, m.
    pub nominal_height: f64,
    /// Worker threads for batch stepping; 0 uses every core.
    pub workers: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            substeps: 10,
            dt_phys: 0.02,
            t_max: 150,
            fall_height: 0.15,
            collision_force: 40.0,
            reach_distance: 0.5,
            probe_distances: vec![0.2, 0.4, 0.6, 0.9, 1.2],
            families: TerrainFamily::ALL.to_vec(),
            start_jitter: 0.1,
            yaw_jitter: 0.3,
            nominal_height: 0.28,
            workers: 0,
        }
    }
}

impl EnvConfig {
    pub fn step_dt(&self) -> f64 {
        self.substeps as f64 * self.dt_phys
    }

    /// Length of the high-level observation.
    pub fn obs_dim(&self) -> usize {
        obs_layout::PROBES + 2 * self.probe_distances.len() + COMMAND_DIM + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.substeps == 0 || self.t_max == 0 {
            return Err(Error::Config(
                "env.substeps and env.t_max must be positive".into(),
            ));
        }
        for (name, v) in [
            ("env.dt_phys", self.dt_phys),
            ("env.fall_height", self.fall_height),
            ("env.collision_force", self.collision_force),
            ("env.reach_distance", self.reach_distance),
            ("env.nominal_height", self.nominal_height),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.families.is_empty() {
            return Err(Error::Config("env.families must not be empty".into()));
        }
        if !(self.start_jitter >= 0.0 && self.yaw_jitter >= 0.0) {
            return Err(Error::Config("env jitter must be non-negative".into()));
        }
        if self.probe_distances.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::Config("env.probe_distances must be positive".into()));
        }
        Ok(())
    }
}

/// Slot layout of the high-level observation. Probe pairs follow `PROBES`,
/// then the previous normalized command, then `t / T_max`.
pub mod obs_layout {
    /// Goal distance over the normalization radius.
    pub const GOAL_DIST: usize = 0;
    /// Sine and cosine of the goal bearing relative to the heading.
    pub const BEARING: usize = 1;
    pub const BASE_HEIGHT: usize = 3;
    pub const LIN_VEL: usize = 4;
    pub const YAW_RATE: usize = 7;
    pub const GRAVITY: usize = 8;
    /// First probe slot: relative height then supported flag per probe.
    pub const PROBES: usize = 11;
}

/// Immutable pieces shared by every environment.
#[derive(Debug, Clone)]
pub struct HierStack {
    pub terrain: TerrainConfig,
    pub decoder: Decoder,
    pub surrogate: Surrogate,
    pub reward: RewardConfig,
    pub lowlevel_reward: LowLevelRewardConfig,
    pub env: EnvConfig,
}

impl HierStack {
    pub fn new(
        terrain: TerrainConfig,
        decoder: Decoder,
        surrogate: Surrogate,
        reward: RewardConfig,
        lowlevel_reward: LowLevelRewardConfig,
        env: EnvConfig,
    ) -> Result<Self> {
        terrain.validate()?;
        reward.validate()?;
        env.validate()?;
        let step_dt = env.step_dt();
        if (reward.step_dt - step_dt).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "reward.step_dt {} differs from env.substeps * env.dt_phys = {step_dt}",
                reward.step_dt
            )));
        }
        if reward.t_max != env.t_max {
            return Err(Error::Config(format!(
                "reward.t_max {} differs from env.t_max {}",
                reward.t_max, env.t_max
            )));
        }
        Ok(Self {
            terrain,
            decoder,
            surrogate,
            reward,
            lowlevel_reward,
            env,
        })
    }

    /// Command produced by the all-zero action; fills the command history
    /// slot of the first observation.
    pub fn neutral_command(&self) -> CommandVector {
        self.decoder
            .decode(&HighLevelAction([0.0; ACTION_DIM]))
            .expect("zero action decodes under validated bounds")
    }

    /// Continuous channels mapped back to `[-1, 1]`, followed by the embedding.
    pub fn normalized_command(&self, c: &CommandVector) -> [f64; COMMAND_DIM] {
        let mut u = c.to_array();
        let bounds = self.decoder.bounds();
        for (j, v) in u.iter_mut().enumerate().take(CONT_DIM) {
            *v = bounds.normalize(j, *v);
        }
        u
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Failure {
    Fall,
    Collision,
    OutOfBounds,
}

/// Per-step event flags.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepFlags {
    /// The episode ended in failure.
    pub terminated: bool,
    /// The episode reached the horizon without failure.
    pub truncated: bool,
    /// Reach latch: the goal region was entered at some step of this episode.
    pub success: bool,
    /// The goal region is occupied after this step.
    pub reached: bool,
    pub failure: Option<Failure>,
}

impl StepFlags {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub obs: Vec<f64>,
    pub reward: RewardBreakdown,
    pub flags: StepFlags,
    pub command: CommandVector,
    pub goal_distance: f64,
}

/// One decision step as written to trajectory files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub env: usize,
    pub episode: u64,
    pub step: usize,
    pub family: TerrainFamily,
    pub level: usize,
    pub pos: [f64; 3],
    pub yaw: f64,
    pub gait: usize,
    pub command: Vec<f64>,
    pub goal_distance: f64,
    pub reward: RewardBreakdown,
    pub lowlevel_reward: RewardBreakdown,
    pub flags: StepFlags,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub env: usize,
    pub episode: u64,
    pub family: TerrainFamily,
    pub level: usize,
    pub seed: u64,
    pub steps: usize,
    pub success: bool,
    pub failure: Option<Failure>,
    /// Undiscounted sum of rewards.
    pub episode_return: f64,
    /// Decision steps spent in each gait, indexed trot, pronk, pace, bound.
    pub gait_steps: [usize; 4],
}

/// A single hierarchical environment.
#[derive(Debug, Clone)]
pub struct HierEnv {
    stack: Arc<HierStack>,
    tile: TerrainTile,
    robot: RobotState,
    goal: [f64; 3],
    t: usize,
    reached_ever: bool,
    done: bool,
    /// `(a_{t-1}, u_{t-1}, u_{t-2})`; `None` until the first step seeds it.
    history: Option<([f64; ACTION_DIM], [f64; COMMAND_DIM], [f64; COMMAND_DIM])>,
    last_command: CommandVector,
    episode_return: f64,
    gait_steps: [usize; 4],
    last_flags: StepFlags,
}

fn jitter_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15)
}

impl HierEnv {
    /// Samples the tile for `(level, family, seed)` and spawns the robot in
    /// the start zone, standing still.
    pub fn new(stack: Arc<HierStack>, level: usize, family: TerrainFamily, seed: u64) -> Result<Self> {
        let tile = sample_tile(&stack.terrain, level, family, seed)?;
        let mut env = Self {
            robot: RobotState::spawn(
                &tile.field,
                tile.start_pos,
                0.0,
                stack.env.nominal_height,
                stack.surrogate.q0(),
                PhaseClock::new(Gait::Trot, 0.0),
            )?,
            goal: [0.0; 3],
            tile,
            t: 0,
            reached_ever: false,
            done: false,
            history: None,
            last_command: stack.neutral_command(),
            episode_return: 0.0,
            gait_steps: [0; 4],
            last_flags: StepFlags::default(),
            stack,
        };
        env.spawn()?;
        Ok(env)
    }

    fn spawn(&mut self) -> Result<()> {
        let cfg = &self.stack.env;
        let mut rng = jitter_rng(self.tile.seed);
        let r = cfg.start_jitter * rng.random::<f64>().sqrt();
        let ang = rng.random_range(0.0..std::f64::consts::TAU);
        let dyaw = if cfg.yaw_jitter > 0.0 {
            rng.random_range(-cfg.yaw_jitter..=cfg.yaw_jitter)
        } else {
            0.0
        };
        let start = self.tile.start_pos;
        let xy = [start[0] + r * ang.cos(), start[1] + r * ang.sin()];
        let g = self.tile.goal_pos;
        let yaw = (g[1] - xy[1]).atan2(g[0] - xy[0]) + dyaw;
        let neutral = self.stack.neutral_command();
        let targets = self.stack.surrogate.channels().targets(&neutral);
        self.robot = RobotState::spawn(
            &self.tile.field,
            xy,
            yaw,
            cfg.nominal_height,
            self.stack.surrogate.q0(),
            PhaseClock::new(neutral.gait, targets.gait_frequency),
        )?;
        let gz = self.tile.field.query_height(g[0], g[1])?;
        self.goal = [g[0], g[1], gz + self.stack.reward.z_star];
        self.t = 0;
        self.reached_ever = false;
        self.done = false;
        self.history = None;
        self.last_command = neutral;
        self.episode_return = 0.0;
        self.gait_steps = [0; 4];
        self.last_flags = StepFlags::default();
        Ok(())
    }

    /// Starts a new episode on the tile for `(level, family, seed)`.
    pub fn reset(&mut self, level: usize, family: TerrainFamily, seed: u64) -> Result<Vec<f64>> {
        self.tile = sample_tile(&self.stack.terrain, level, family, seed)?;
        self.spawn()?;
        Ok(self.observe())
    }

    pub fn stack(&self) -> &Arc<HierStack> {
        &self.stack
    }

    pub fn tile(&self) -> &TerrainTile {
        &self.tile
    }

    pub fn robot(&self) -> &RobotState {
        &self.robot
    }

    /// Replaces the robot state, e.g. to stage a scenario.
    pub fn set_robot(&mut self, robot: RobotState) {
        self.robot = robot;
    }

    pub fn goal(&self) -> [f64; 3] {
        self.goal
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn last_flags(&self) -> StepFlags {
        self.last_flags
    }

    pub fn goal_distance(&self) -> f64 {
        let p = self.robot.pos;
        let g = self.goal;
        ((p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2) + (p[2] - g[2]).powi(2)).sqrt()
    }

    /// Heading that points the base at the goal.
    pub fn goal_heading(&self) -> f64 {
        let p = self.robot.pos;
        (self.goal[1] - p[1]).atan2(self.goal[0] - p[0])
    }

    pub fn summary(&self, env: usize, episode: u64) -> EpisodeSummary {
        EpisodeSummary {
            env,
            episode,
            family: self.tile.family,
            level: self.tile.level,
            seed: self.tile.seed,
            steps: self.t,
            success: self.reached_ever,
            failure: self.last_flags.failure,
            episode_return: self.episode_return,
            gait_steps: self.gait_steps,
        }
    }

    fn ground_or_edge(&self, x: f64, y: f64) -> (f64, bool) {
        let f = &self.tile.field;
        if f.contains(x, y) {
            let h = f.query_height(x, y).expect("point inside extent");
            (h, f.is_supported(x, y).expect("point inside extent"))
        } else {
            let xc = x.clamp(0.0, f.length_m);
            let yc = y.clamp(0.0, f.width_m);
            (f.query_height(xc, yc).expect("clamped point"), false)
        }
    }

    /// High-level observation of the current state.
    pub fn observe(&self) -> Vec<f64> {
        let cfg = &self.stack.env;
        let r = &self.robot;
        let mut o = Vec::with_capacity(cfg.obs_dim());
        let bearing = self.goal_heading() - r.yaw;
        o.push(self.goal_distance() / self.stack.reward.r_map);
        o.push(bearing.sin());
        o.push(bearing.cos());
        o.push(r.base_height);
        o.extend_from_slice(&r.lin_vel);
        o.push(r.ang_vel[2]);
        o.extend_from_slice(&r.proprio(self.stack.surrogate.q0()).gravity_dir_body);
        let (here, _) = self.ground_or_edge(r.pos[0], r.pos[1]);
        let (sy, cy) = r.yaw.sin_cos();
        for &dist in &cfg.probe_distances {
            let (h, supported) = self.ground_or_edge(r.pos[0] + cy * dist, r.pos[1] + sy * dist);
            o.push(h - here);
            o.push(if supported { 1.0 } else { 0.0 });
        }
        o.extend_from_slice(&self.stack.normalized_command(&self.last_command));
        o.push(self.t as f64 / cfg.t_max as f64);
        debug_assert_eq!(o.len(), cfg.obs_dim());
        o
    }

    /// One decision step.
    pub fn step(&mut self, action: &HighLevelAction) -> Result<StepOutcome> {
        self.step_inner(action, false).map(|(o, _)| o)
    }

    /// Decision step that also returns the low-level tracking reward of the
    /// final sub-step.
    pub fn step_traced(&mut self, action: &HighLevelAction) -> Result<(StepOutcome, RewardBreakdown)> {
        self.step_inner(action, true)
            .map(|(o, ll)| (o, ll.expect("traced step computes the low-level reward")))
    }

    fn step_inner(
        &mut self,
        action: &HighLevelAction,
        trace: bool,
    ) -> Result<(StepOutcome, Option<RewardBreakdown>)> {
        if self.done {
            return Err(Error::Usage("step called on a finished episode; reset first".into()));
        }
        let stack = Arc::clone(&self.stack);
        let cfg = &stack.env;

        // (1) decode
        let x = clip_normalize(action, stack.decoder.a_max())?;
        let command = stack.decoder.decode(action)?;
        let u = stack.normalized_command(&command);

        // (2) sub-steps; keep the strongest body contact of the interval
        let mut peak = [0.0; 3];
        let mut peak_norm = 0.0;
        for _ in 0..cfg.substeps {
            self.robot = stack
                .surrogate
                .step(&self.robot, &command, cfg.dt_phys, &self.tile)?;
            let n = self.robot.body_contact_norm();
            if n > peak_norm {
                peak_norm = n;
                peak = self.robot.body_contact;
            }
        }
        let step_index = self.t;
        self.t += 1;
        self.gait_steps[command.gait.index()] += 1;

        // (3) termination and reach
        let d_t = self.goal_distance();
        let reached = d_t < cfg.reach_distance;
        self.reached_ever |= reached;
        let failure = if self.robot.out_of_bounds {
            Some(Failure::OutOfBounds)
        } else if self.robot.base_height < cfg.fall_height {
            Some(Failure::Fall)
        } else if peak_norm > cfg.collision_force {
            Some(Failure::Collision)
        } else {
            None
        };
        let terminated = failure.is_some();
        let truncated = !terminated && self.t >= cfg.t_max;

        // (4) reward from the post-step state
        let (a_prev, u_prev, u_prev_2) = self.history.unwrap_or((x, u, u));
        let prop = self.robot.proprio(stack.surrogate.q0());
        let mut forces = self.robot.contact_forces(stack.surrogate.config().body_mass);
        if let Some(last) = forces.last_mut() {
            *last = peak;
        }
        let inputs = RewardInputs {
            d_t,
            yaw: self.robot.yaw,
            yaw_star: self.goal_heading(),
            step: step_index,
            prop: &prop,
            action: &x,
            prev_action: &a_prev,
            command: &u,
            prev_command: &u_prev,
            prev_command_2: &u_prev_2,
            contact_forces: &forces,
            speed: self.robot.planar_speed(),
        };
        let reward = reward::total(&inputs, &stack.reward)?;
        self.episode_return += reward.total;
        self.history = Some((x, u, u_prev));
        self.last_command = command;

        let lowlevel = if trace {
            let targets = stack.surrogate.channels().targets(&command);
            let target = TrackingTarget {
                v_x: targets.v_x,
                v_y: targets.v_y,
                yaw_rate: targets.yaw_rate,
            };
            // The executor has no joint-level action; the joint offsets stand in.
            let a = prop.joint_pos_err;
            Some(reward_lowlevel(&prop, &target, &a, &a, &stack.lowlevel_reward)?)
        } else {
            None
        };

        // (5) hand the episode back for reset
        let flags = StepFlags {
            terminated,
            truncated,
            success: self.reached_ever,
            reached,
            failure,
        };
        self.done = flags.done();
        self.last_flags = flags;
        Ok((
            StepOutcome {
                obs: self.observe(),
                reward,
                flags,
                command,
                goal_distance: d_t,
            },
            lowlevel,
        ))
    }
}

/// Seed of episode `episode` in environment `env` of a run seeded `seed`.
pub fn episode_seed(seed: u64, env: usize, episode: u64) -> u64 {
    // SplitMix64 finalizer over the packed triple.
    let mut z = seed
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add((env as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9))
        .wrapping_add(episode.wrapping_mul(0x94d0_49bb_1331_11eb));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
struct Slot {
    env: HierEnv,
    episode: u64,
    rng: ChaCha8Rng,
}

/// Everything produced by one synchronized batch step.
#[derive(Debug, Clone, Default)]
pub struct BatchStep {
    /// Observation to act on next; for finished environments this is the
    /// first observation of the new episode.
    pub obs: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub breakdowns: Vec<RewardBreakdown>,
    pub flags: Vec<StepFlags>,
    /// Last observation of each episode that ended at this step.
    pub final_obs: Vec<Option<Vec<f64>>>,
    pub gaits: Vec<Gait>,
    pub episodes: Vec<EpisodeSummary>,
    pub level_changes: Vec<LevelChange>,
    pub trajectory: Vec<TrajectoryRecord>,
}

/// Vectorized environments with auto-reset and environment-level curriculum.
pub struct VecEnv {
    stack: Arc<HierStack>,
    slots: Vec<Slot>,
    curriculum: CurriculumState,
    pool: rayon::ThreadPool,
    seed: u64,
    record: bool,
}

impl VecEnv {
    pub fn new(stack: Arc<HierStack>, curriculum: CurriculumState, seed: u64) -> Result<Self> {
        let n = curriculum.n_envs();
        if n == 0 {
            return Err(Error::Config("at least one environment is required".into()));
        }
        if curriculum.l_max() != stack.terrain.levels {
            return Err(Error::Config(format!(
                "curriculum has {} levels, terrain has {}",
                curriculum.l_max(),
                stack.terrain.levels
            )));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(stack.env.workers)
            .build()
            .map_err(|e| Error::Runtime(format!("cannot start worker pool: {e}")))?;
        let slots = pool.install(|| {
            (0..n)
                .into_par_iter()
                .map(|i| {
                    let mut rng = ChaCha8Rng::seed_from_u64(episode_seed(seed, i, u64::MAX));
                    let family = draw_family(&stack.env.families, &mut rng);
                    let level = curriculum.level(i)?;
                    let env = HierEnv::new(Arc::clone(&stack), level, family, episode_seed(seed, i, 0))?;
                    Ok(Slot { env, episode: 0, rng })
                })
                .collect::<Result<Vec<_>>>()
        })?;
        Ok(Self {
            stack,
            slots,
            curriculum,
            pool,
            seed,
            record: false,
        })
    }

    /// Enables per-step trajectory records in [`BatchStep::trajectory`].
    pub fn set_recording(&mut self, on: bool) {
        self.record = on;
    }

    pub fn n_envs(&self) -> usize {
        self.slots.len()
    }

    pub fn obs_dim(&self) -> usize {
        self.stack.env.obs_dim()
    }

    pub fn stack(&self) -> &Arc<HierStack> {
        &self.stack
    }

    pub fn curriculum(&self) -> &CurriculumState {
        &self.curriculum
    }

    pub fn env(&self, i: usize) -> &HierEnv {
        &self.slots[i].env
    }

    pub fn observations(&self) -> Vec<Vec<f64>> {
        self.slots.iter().map(|s| s.env.observe()).collect()
    }

    /// Steps every environment with its row of `actions`.
    pub fn batch_step(&mut self, actions: &[Vec<f64>]) -> Result<BatchStep> {
        if actions.len() != self.slots.len() {
            return Err(Error::Input(format!(
                "action batch has {} rows, expected {}",
                actions.len(),
                self.slots.len()
            )));
        }
        let parsed = actions
            .iter()
            .map(|a| HighLevelAction::from_slice(a))
            .collect::<Result<Vec<_>>>()?;
        let record = self.record;
        let results: Vec<Result<(StepOutcome, Option<RewardBreakdown>)>> = self.pool.install(|| {
            self.slots
                .par_iter_mut()
                .zip(parsed.par_iter())
                .map(|(slot, a)| slot.env.step_inner(a, record))
                .collect()
        });

        let n = self.slots.len();
        let mut out = BatchStep {
            obs: Vec::with_capacity(n),
            rewards: Vec::with_capacity(n),
            breakdowns: Vec::with_capacity(n),
            flags: Vec::with_capacity(n),
            final_obs: vec![None; n],
            gaits: Vec::with_capacity(n),
            ..Default::default()
        };
        let mut to_reset = Vec::new();
        for (i, r) in results.into_iter().enumerate() {
            let (o, lowlevel) = r?;
            let slot = &self.slots[i];
            if let Some(ll) = lowlevel {
                let env = &slot.env;
                out.trajectory.push(TrajectoryRecord {
                    env: i,
                    episode: slot.episode,
                    step: env.t() - 1,
                    family: env.tile().family,
                    level: env.tile().level,
                    pos: env.robot().pos,
                    yaw: env.robot().yaw,
                    gait: o.command.gait.index(),
                    command: o.command.to_array().to_vec(),
                    goal_distance: o.goal_distance,
                    reward: o.reward.clone(),
                    lowlevel_reward: ll,
                    flags: o.flags,
                });
            }
            if o.flags.done() {
                out.episodes.push(slot.env.summary(i, slot.episode));
                if let Some(ch) = self.curriculum.record_outcome(i, o.flags.success)? {
                    out.level_changes.push(ch);
                }
                to_reset.push(i);
            }
            out.rewards.push(o.reward.total);
            out.breakdowns.push(o.reward);
            out.flags.push(o.flags);
            out.gaits.push(o.command.gait);
            out.obs.push(o.obs);
        }

        // Reset finished environments at their (possibly new) level.
        let seed = self.seed;
        let families = &self.stack.env.families;
        let levels = self.curriculum.levels();
        let resets: Vec<Result<(usize, Vec<f64>)>> = self.pool.install(|| {
            self.slots
                .par_iter_mut()
                .enumerate()
                .filter(|(i, _)| to_reset.binary_search(i).is_ok())
                .map(|(i, slot)| {
                    slot.episode += 1;
                    let family = draw_family(families, &mut slot.rng);
                    let obs = slot
                        .env
                        .reset(levels[i], family, episode_seed(seed, i, slot.episode))?;
                    Ok((i, obs))
                })
                .collect()
        });
        for r in resets {
            let (i, obs) = r?;
            let last = std::mem::replace(&mut out.obs[i], obs);
            out.final_obs[i] = Some(last);
        }
        Ok(out)
    }
}

fn draw_family(families: &[TerrainFamily], rng: &mut ChaCha8Rng) -> TerrainFamily {
    families[rng.random_range(0..families.len())]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curriculum::CurriculumConfig;
    use crate::decoder::DecoderConfig;
    use crate::lowlevel::{ActionMapperConfig, SurrogateConfig};

    pub(crate) fn stack_with(env: EnvConfig) -> Arc<HierStack> {
        let decoder = Decoder::new(&DecoderConfig::default()).unwrap();
        let surrogate = Surrogate::new(
            &SurrogateConfig::default(),
            decoder.bounds(),
            &ActionMapperConfig::default().q0,
        )
        .unwrap();
        Arc::new(
            HierStack::new(
                TerrainConfig::default(),
                decoder,
                surrogate,
                RewardConfig::default(),
                LowLevelRewardConfig::default(),
                env,
            )
            .unwrap(),
        )
    }

    fn flat_stack() -> Arc<HierStack> {
        stack_with(EnvConfig {
            families: vec![TerrainFamily::Stair],
            start_jitter: 0.0,
            yaw_jitter: 0.0,
            ..Default::default()
        })
    }

    #[test]
    fn reset_distance_matches_tile() {
        let stack = flat_stack();
        let env = HierEnv::new(stack, 0, TerrainFamily::Stair, 3).unwrap();
        let s = env.tile().start_pos;
        let g = env.tile().goal_pos;
        assert!((env.goal_distance() - (g[0] - s[0]).hypot(g[1] - s[1])).abs() < 1e-9);
        let o = env.observe();
        assert_eq!(o.len(), 37);
    }

    #[test]
    fn first_step_smoothness_is_zero() {
        let mut env = HierEnv::new(flat_stack(), 0, TerrainFamily::Stair, 3).unwrap();
        let mut a = [0.3; 13];
        a[12] = -0.9;
        let out = env.step(&HighLevelAction(a)).unwrap();
        for k in ["action_rate", "cmd_sm1", "cmd_sm2"] {
            assert_eq!(out.reward.raw(k), Some(0.0), "{k}");
        }
    }

    #[test]
    fn zero_commands_only_time_out() {
        let mut env = HierEnv::new(flat_stack(), 0, TerrainFamily::Stair, 3).unwrap();
        let zero = HighLevelAction([0.0; 13]);
        let mut steps = 0;
        loop {
            let out = env.step(&zero).unwrap();
            steps += 1;
            if out.flags.done() {
                assert!(out.flags.truncated && !out.flags.terminated);
                assert!(!out.flags.success);
                break;
            }
        }
        assert_eq!(steps, 150);
        assert!(matches!(env.step(&zero), Err(Error::Usage(_))));
    }

    #[test]
    fn at_goal_reach_and_arrive() {
        let mut env = HierEnv::new(flat_stack(), 0, TerrainFamily::Stair, 3).unwrap();
        let mut r = env.robot().clone();
        r.pos[0] = env.goal()[0];
        r.pos[1] = env.goal()[1];
        env.set_robot(r);
        let out = env.step(&HighLevelAction([0.0; 13])).unwrap();
        assert!(out.flags.reached && out.flags.success);
        assert!(out.reward.raw("arrive").unwrap() > 0.0);
        assert!(out.reward.raw("stable").unwrap() > 0.0);
    }

    #[test]
    fn fall_terminates_with_failure() {
        let mut env = HierEnv::new(flat_stack(), 0, TerrainFamily::Stair, 3).unwrap();
        let mut r = env.robot().clone();
        r.falling = true;
        env.set_robot(r);
        let out = env.step(&HighLevelAction([0.0; 13])).unwrap();
        assert!(env.robot().base_height < 0.15);
        assert!(out.flags.terminated && !out.flags.success);
        assert_eq!(out.flags.failure, Some(Failure::Fall));
    }

    #[test]
    fn reach_then_fall_keeps_success() {
        let mut env = HierEnv::new(flat_stack(), 0, TerrainFamily::Stair, 3).unwrap();
        let mut r = env.robot().clone();
        r.pos[0] = env.goal()[0] - 0.3;
        r.pos[1] = env.goal()[1];
        r.falling = true;
        env.set_robot(r);
        // The base sinks below the fall height inside the goal region.
        let out = env.step(&HighLevelAction([0.0; 13])).unwrap();
        assert!(out.flags.terminated);
        assert!(out.flags.success);
    }

    #[test]
    fn batch_of_one_matches_single_env() {
        let stack = flat_stack();
        let cur = CurriculumState::new(&CurriculumConfig::default(), 1, 10).unwrap();
        let mut venv = VecEnv::new(Arc::clone(&stack), cur, 11).unwrap();
        let mut single = HierEnv::new(stack, 0, TerrainFamily::Stair, episode_seed(11, 0, 0)).unwrap();
        assert_eq!(venv.observations()[0], single.observe());
        let a: Vec<f64> = (0..13).map(|j| (j as f64 * 0.37).sin()).collect();
        for _ in 0..5 {
            let b = venv.batch_step(&[a.clone()]).unwrap();
            let s = single.step(&HighLevelAction::from_slice(&a).unwrap()).unwrap();
            assert_eq!(b.obs[0], s.obs);
            assert_eq!(b.rewards[0], s.reward.total);
        }
        assert!(matches!(venv.batch_step(&[]), Err(Error::Input(_))));
    }
}
