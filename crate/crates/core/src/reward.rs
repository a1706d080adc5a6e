//! High-level reward: step-time-scaled weighted sum of goal, smoothness,
//! safety and liveness terms.
//!
//! Every penalty term returns a non-negative raw value; the sign of its
//! contribution comes from the configured weight.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lowlevel::ProprioState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardTerm {
    pub name: Cow<'static, str>,
    pub raw: f64,
    /// Effective weight applied to `raw`.
    pub weight: f64,
}

impl RewardTerm {
    pub fn contribution(&self) -> f64 {
        self.weight * self.raw
    }
}

/// Per-term values and effective weights; `total = sum(weight * raw)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub terms: Vec<RewardTerm>,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn from_terms<I>(terms: I) -> Self
    where
        I: IntoIterator<Item = (&'static str, f64, f64)>,
    {
        let terms: Vec<RewardTerm> = terms
            .into_iter()
            .map(|(name, raw, weight)| RewardTerm {
                name: Cow::Borrowed(name),
                raw,
                weight,
            })
            .collect();
        let total = terms.iter().map(RewardTerm::contribution).sum();
        Self { terms, total }
    }

    fn term(&self, name: &str) -> Option<&RewardTerm> {
        self.terms.iter().find(|t| t.name == name)
    }

    pub fn raw(&self, name: &str) -> Option<f64> {
        self.term(name).map(|t| t.raw)
    }

    pub fn weight(&self, name: &str) -> Option<f64> {
        self.term(name).map(|t| t.weight)
    }

    /// Total recomputed from the logged terms.
    pub fn recompute_total(&self) -> f64 {
        self.terms.iter().map(RewardTerm::contribution).sum()
    }
}

/// Configured (unscaled) weight per high-level term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardWeights {
    pub goal_dist: f64,
    pub face: f64,
    pub arrive: f64,
    pub stable: f64,
    pub action_rate: f64,
    pub cmd_sm1: f64,
    pub cmd_sm2: f64,
    pub col: f64,
    pub lazy: f64,
    pub alive: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            goal_dist: 1.0,
            face: 0.3,
            arrive: 1.0,
            stable: 0.5,
            action_rate: -0.01,
            cmd_sm1: -0.05,
            cmd_sm2: -0.02,
            col: -0.1,
            lazy: -0.5,
            alive: 0.02,
        }
    }
}

impl RewardWeights {
    pub const NAMES: [&'static str; 10] = [
        "goal_dist",
        "face",
        "arrive",
        "stable",
        "action_rate",
        "cmd_sm1",
        "cmd_sm2",
        "col",
        "lazy",
        "alive",
    ];

    pub fn as_array(&self) -> [f64; 10] {
        [
            self.goal_dist,
            self.face,
            self.arrive,
            self.stable,
            self.action_rate,
            self.cmd_sm1,
            self.cmd_sm2,
            self.col,
            self.lazy,
            self.alive,
        ]
    }

    pub fn from_array(w: [f64; 10]) -> Self {
        Self {
            goal_dist: w[0],
            face: w[1],
            arrive: w[2],
            stable: w[3],
            action_rate: w[4],
            cmd_sm1: w[5],
            cmd_sm2: w[6],
            col: w[7],
            lazy: w[8],
            alive: w[9],
        }
    }
}

/// `w_i * step_dt` for every term.
pub fn scale_weights(w: &RewardWeights, step_dt: f64) -> RewardWeights {
    RewardWeights::from_array(w.as_array().map(|wi| wi * step_dt))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub weights: RewardWeights,
    /// Decision step duration, s.
    pub step_dt: f64,
    /// Distance normalization, m.
    pub r_map: f64,
    pub shape_a: f64,
    pub shape_b: f64,
    /// Goal region radius, m.
    pub d_0: f64,
    pub b_0: f64,
    pub b_1: f64,
    /// Episode horizon in decision steps.
    pub t_max: usize,
    /// m^2
    pub sigma_z: f64,
    /// Desired standing height, m.
    pub z_star: f64,
    pub beta: f64,
    /// Contact force threshold, N.
    pub f_th: f64,
    /// Laziness speed threshold, m/s.
    pub v_th: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            weights: RewardWeights::default(),
            step_dt: 0.2,
            // Diagonal of the default 8 m x 4 m tile.
            r_map: 80f64.sqrt(),
            shape_a: 0.5,
            shape_b: 2.0,
            d_0: 0.5,
            b_0: 10.0,
            b_1: 10.0,
            t_max: 150,
            sigma_z: 0.01,
            z_star: 0.28,
            beta: 0.1,
            f_th: 40.0,
            v_th: 0.1,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("reward.step_dt", self.step_dt),
            ("reward.r_map", self.r_map),
            ("reward.shape_a", self.shape_a),
            ("reward.shape_b", self.shape_b),
            ("reward.d_0", self.d_0),
            ("reward.sigma_z", self.sigma_z),
            ("reward.t_max", self.t_max as f64),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.weights.as_array().iter().any(|w| !w.is_finite()) {
            return Err(Error::Config("reward weights must be finite".into()));
        }
        Ok(())
    }
}

/// `p = clip(1 - d/R_map, 0, 1)`, `r = p + a (1 - exp(-b p))`.
pub fn r_goal_dist(d_t: f64, cfg: &RewardConfig) -> f64 {
    let p = (1.0 - d_t / cfg.r_map).clamp(0.0, 1.0);
    p + cfg.shape_a * (1.0 - (-cfg.shape_b * p).exp())
}

pub fn r_face(yaw: f64, yaw_star: f64) -> f64 {
    (yaw_star - yaw).cos()
}

/// Arrival bonus `1[d < d_0] (b_0 + b_1 alpha_t)`, `alpha_t = clip(1 - t/T_max, 0, 1)`.
pub fn r_arrive(d_t: f64, t: usize, cfg: &RewardConfig) -> f64 {
    if d_t < cfg.d_0 {
        let alpha = (1.0 - t as f64 / cfg.t_max as f64).clamp(0.0, 1.0);
        cfg.b_0 + cfg.b_1 * alpha
    } else {
        0.0
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn r_stable(prop: &ProprioState, d_t: f64, cfg: &RewardConfig) -> f64 {
    if d_t >= cfg.d_0 {
        return 0.0;
    }
    let eta = norm(&prop.base_lin_vel) + norm(&prop.base_ang_vel) + cfg.beta * norm(&prop.joint_vel);
    let dz = prop.base_height - cfg.z_star;
    (-eta).exp() * (-(dz * dz) / cfg.sigma_z).exp()
}

/// `(action_rate, cmd_sm1, cmd_sm2)`.
pub fn r_smoothness(
    a_t: &[f64],
    a_prev: &[f64],
    u_t: &[f64],
    u_prev: &[f64],
    u_prev_2: &[f64],
) -> Result<(f64, f64, f64)> {
    if a_t.len() != a_prev.len() {
        return Err(Error::Input(format!(
            "action history lengths differ: {} vs {}",
            a_t.len(),
            a_prev.len()
        )));
    }
    let n = u_t.len();
    if n == 0 || u_prev.len() != n || u_prev_2.len() != n {
        return Err(Error::Input("command history lengths differ or are empty".into()));
    }
    let action_rate = a_t.iter().zip(a_prev).map(|(a, b)| (a - b) * (a - b)).sum();
    let mut sm1 = 0.0;
    let mut sm2 = 0.0;
    for j in 0..n {
        let du = u_t[j] - u_prev[j];
        let du_prev = u_prev[j] - u_prev_2[j];
        sm1 += du * du;
        sm2 += (du - du_prev) * (du - du_prev);
    }
    Ok((action_rate, sm1 / n as f64, sm2 / n as f64))
}

/// `(col, lazy, alive)`.
pub fn r_safety_liveness(
    contact_forces: &[[f64; 3]],
    d_t: f64,
    speed: f64,
    cfg: &RewardConfig,
) -> (f64, f64, f64) {
    let col = contact_forces
        .iter()
        .map(|f| (norm(f) - cfg.f_th).max(0.0))
        .sum();
    let lazy = if d_t > cfg.d_0 && speed < cfg.v_th { 1.0 } else { 0.0 };
    (col, lazy, 1.0)
}

/// Everything the high-level reward reads at one decision step.
#[derive(Debug, Clone)]
pub struct RewardInputs<'a> {
    pub d_t: f64,
    pub yaw: f64,
    pub yaw_star: f64,
    /// Decision step index.
    pub step: usize,
    pub prop: &'a ProprioState,
    pub action: &'a [f64],
    pub prev_action: &'a [f64],
    pub command: &'a [f64],
    pub prev_command: &'a [f64],
    pub prev_command_2: &'a [f64],
    pub contact_forces: &'a [[f64; 3]],
    /// Planar base speed, m/s.
    pub speed: f64,
}

pub fn total(inputs: &RewardInputs<'_>, cfg: &RewardConfig) -> Result<RewardBreakdown> {
    let w = scale_weights(&cfg.weights, cfg.step_dt);
    let (action_rate, sm1, sm2) = r_smoothness(
        inputs.action,
        inputs.prev_action,
        inputs.command,
        inputs.prev_command,
        inputs.prev_command_2,
    )?;
    let (col, lazy, alive) = r_safety_liveness(inputs.contact_forces, inputs.d_t, inputs.speed, cfg);
    Ok(RewardBreakdown::from_terms([
        ("goal_dist", r_goal_dist(inputs.d_t, cfg), w.goal_dist),
        ("face", r_face(inputs.yaw, inputs.yaw_star), w.face),
        ("arrive", r_arrive(inputs.d_t, inputs.step, cfg), w.arrive),
        ("stable", r_stable(inputs.prop, inputs.d_t, cfg), w.stable),
        ("action_rate", action_rate, w.action_rate),
        ("cmd_sm1", sm1, w.cmd_sm1),
        ("cmd_sm2", sm2, w.cmd_sm2),
        ("col", col, w.col),
        ("lazy", lazy, w.lazy),
        ("alive", alive, w.alive),
    ]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn scale_weights_examples() {
        let mut w = RewardWeights::default();
        w.goal_dist = 2.0;
        w.face = 0.0;
        let s = scale_weights(&w, 0.1);
        assert!((s.goal_dist - 0.2).abs() < 1e-15);
        assert_eq!(s.face, 0.0);
        let d = scale_weights(&w, 0.2);
        for (a, b) in s.as_array().iter().zip(d.as_array()) {
            assert!((2.0 * a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn goal_dist_examples() {
        let cfg = RewardConfig::default();
        assert_eq!(r_goal_dist(cfg.r_map, &cfg), 0.0);
        assert_eq!(r_goal_dist(cfg.r_map * 3.0, &cfg), 0.0);
        let r0 = r_goal_dist(0.0, &cfg);
        assert!((r0 - (1.0 + 0.5 * (1.0 - (-2.0f64).exp()))).abs() < 1e-15);
        assert!((r0 - 1.43233).abs() < 1e-5);
    }

    #[test]
    fn goal_dist_monotone_and_bounded() {
        let cfg = RewardConfig::default();
        let mut prev = f64::INFINITY;
        for k in 0..=20_000 {
            let d = 2.0 * cfg.r_map * k as f64 / 20_000.0;
            let r = r_goal_dist(d, &cfg);
            assert!(r <= prev);
            assert!((0.0..=1.0 + cfg.shape_a).contains(&r));
            prev = r;
        }
    }

    #[test]
    fn face_examples() {
        assert_eq!(r_face(0.3, 0.3), 1.0);
        assert!((r_face(0.0, PI) + 1.0).abs() < 1e-15);
        assert!(r_face(0.0, FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn arrive_examples() {
        let cfg = RewardConfig::default();
        assert_eq!(r_arrive(0.5, 0, &cfg), 0.0);
        assert_eq!(r_arrive(0.1, 0, &cfg), 20.0);
        assert_eq!(r_arrive(0.1, cfg.t_max, &cfg), 10.0);
        assert_eq!(r_arrive(0.1, cfg.t_max * 2, &cfg), 10.0);
    }

    #[test]
    fn stable_examples() {
        let cfg = RewardConfig::default();
        let p = ProprioState::at_rest(cfg.z_star);
        assert_eq!(r_stable(&p, 0.1, &cfg), 1.0);
        assert_eq!(r_stable(&p, 0.6, &cfg), 0.0);
        let mut q = p.clone();
        q.base_lin_vel = [0.6, 0.0, 0.0];
        q.base_ang_vel = [0.0, 0.0, 0.4];
        assert!((r_stable(&q, 0.1, &cfg) - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn smoothness_examples() {
        let a = [0.3; 13];
        let u = [0.2; 15];
        assert_eq!(r_smoothness(&a, &a, &u, &u, &u).unwrap(), (0.0, 0.0, 0.0));
        let u0 = [0.0; 15];
        let u1 = [0.1; 15];
        let u2 = [0.2; 15];
        let (_, sm1, sm2) = r_smoothness(&a, &a, &u2, &u1, &u0).unwrap();
        assert!(sm1 > 0.0);
        assert!(sm2.abs() < 1e-15);
        assert!(matches!(
            r_smoothness(&a, &a[..12], &u, &u, &u),
            Err(Error::Input(_))
        ));
        assert!(r_smoothness(&a, &a, &u, &u[..14], &u).is_err());
    }

    #[test]
    fn safety_examples() {
        let cfg = RewardConfig::default();
        let calm = [[0.0, 0.0, 30.0]; 4];
        assert_eq!(r_safety_liveness(&calm, 2.0, 0.5, &cfg).0, 0.0);
        let hit = [[0.0, 0.0, 30.0], [50.0, 0.0, 0.0]];
        assert!((r_safety_liveness(&hit, 2.0, 0.5, &cfg).0 - 10.0).abs() < 1e-12);
        assert_eq!(r_safety_liveness(&[], 2.0, 0.0, &cfg), (0.0, 1.0, 1.0));
        assert_eq!(r_safety_liveness(&[], 0.2, 0.0, &cfg), (0.0, 0.0, 1.0));
    }

    #[test]
    fn zero_weights_total_zero_with_breakdown() {
        let cfg = RewardConfig {
            weights: RewardWeights::from_array([0.0; 10]),
            ..Default::default()
        };
        let prop = ProprioState::at_rest(0.28);
        let a = [0.1; 13];
        let u = [0.0; 15];
        let inputs = RewardInputs {
            d_t: 0.2,
            yaw: 0.0,
            yaw_star: 0.0,
            step: 0,
            prop: &prop,
            action: &a,
            prev_action: &a,
            command: &u,
            prev_command: &u,
            prev_command_2: &u,
            contact_forces: &[],
            speed: 0.0,
        };
        let b = total(&inputs, &cfg).unwrap();
        assert_eq!(b.total, 0.0);
        assert_eq!(b.terms.len(), 10);
        assert_eq!(b.raw("arrive"), Some(20.0));

        let mut single = RewardWeights::from_array([0.0; 10]);
        single.arrive = 1.0;
        let cfg = RewardConfig {
            weights: single,
            step_dt: 1.0,
            ..cfg
        };
        assert_eq!(total(&inputs, &cfg).unwrap().total, 20.0);
    }
}
