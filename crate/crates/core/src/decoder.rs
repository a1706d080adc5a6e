//! Command decoder: 13-dim high-level action to 15-dim executable command.
//!
//! Channels 0..12 of the action are continuous behavior parameters mapped
//! affinely into their configured bounds; channel 12 selects one of four
//! gaits. The command concatenates the 12 continuous values with the
//! 3-dim phase-offset template of the selected gait.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

pub const ACTION_DIM: usize = 13;
pub const CONT_DIM: usize = 12;
pub const EMBED_DIM: usize = 3;
pub const COMMAND_DIM: usize = CONT_DIM + EMBED_DIM;
/// Index of the gait channel inside the action vector.
pub const GAIT_CHANNEL: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gait {
    Trot = 0,
    Pronk = 1,
    Pace = 2,
    Bound = 3,
}

impl Gait {
    pub const ALL: [Gait; 4] = [Gait::Trot, Gait::Pronk, Gait::Pace, Gait::Bound];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(g: usize) -> Result<Gait> {
        Gait::ALL
            .get(g)
            .copied()
            .ok_or_else(|| Error::Domain(format!("gait index {g} outside 0..=3")))
    }

    /// Phase offsets `(diagonal, lateral, fore-aft)` of the gait.
    ///
    /// A leg's phase offset is the sum of the entries for the pair
    /// memberships it has: FR and RL are the off-diagonal legs, FR and RR
    /// the right side, RL and RR the rear pair.
    pub fn embedding(self) -> [f64; EMBED_DIM] {
        match self {
            Gait::Trot => [0.5, 0.0, 0.0],
            Gait::Pronk => [0.0, 0.0, 0.0],
            Gait::Pace => [0.0, 0.5, 0.0],
            Gait::Bound => [0.0, 0.0, 0.5],
        }
    }

    /// Midpoint of the gait channel bin that selects this gait.
    pub fn channel_value(self) -> f64 {
        -0.75 + 0.5 * self.index() as f64
    }

    pub fn name(self) -> &'static str {
        match self {
            Gait::Trot => "trot",
            Gait::Pronk => "pronk",
            Gait::Pace => "pace",
            Gait::Bound => "bound",
        }
    }
}

impl fmt::Display for Gait {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Gait {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Gait::ALL
            .into_iter()
            .find(|g| g.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Usage(format!("unknown gait `{s}`")))
    }
}

/// Template lookup by raw gait index.
pub fn gait_embedding(g: usize) -> Result<[f64; EMBED_DIM]> {
    Gait::from_index(g).map(Gait::embedding)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelBounds {
    pub name: String,
    pub unit: String,
    pub lower: f64,
    pub upper: f64,
}

impl ChannelBounds {
    fn new(name: &str, unit: &str, lower: f64, upper: f64) -> Self {
        Self {
            name: name.into(),
            unit: unit.into(),
            lower,
            upper,
        }
    }
}

/// Per-channel bounds of the continuous command block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CommandBounds {
    pub channels: Vec<ChannelBounds>,
}

impl Default for CommandBounds {
    fn default() -> Self {
        let c = ChannelBounds::new;
        Self {
            channels: vec![
                c("v_x", "m/s", -1.0, 1.0),
                c("v_y", "m/s", -0.6, 0.6),
                c("yaw_rate", "rad/s", -1.5, 1.5),
                c("body_height", "m", 0.22, 0.34),
                c("gait_frequency", "Hz", 1.5, 4.0),
                c("foot_swing_height", "m", 0.03, 0.15),
                c("body_pitch", "rad", -0.3, 0.3),
                c("body_roll", "rad", -0.2, 0.2),
                c("stance_width", "m", 0.15, 0.35),
                c("stance_length", "m", 0.30, 0.50),
                c("reserved_0", "-", -1.0, 1.0),
                c("reserved_1", "-", -1.0, 1.0),
            ],
        }
    }
}

impl CommandBounds {
    pub fn validate(&self) -> Result<()> {
        if self.channels.len() != CONT_DIM {
            return Err(Error::Config(format!(
                "expected {CONT_DIM} command channels, got {}",
                self.channels.len()
            )));
        }
        for ch in &self.channels {
            if !(ch.lower.is_finite() && ch.upper.is_finite()) || ch.lower > ch.upper {
                return Err(Error::Config(format!(
                    "channel `{}`: lower {} exceeds upper {}",
                    ch.name, ch.lower, ch.upper
                )));
            }
        }
        for (i, a) in self.channels.iter().enumerate() {
            if self.channels[..i].iter().any(|b| b.name == a.name) {
                return Err(Error::Config(format!("duplicate channel `{}`", a.name)));
            }
        }
        Ok(())
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.channels
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| Error::Config(format!("command channel `{name}` is not configured")))
    }

    /// Inverse of the affine map, used to feed commands back as observations.
    pub fn normalize(&self, j: usize, value: f64) -> f64 {
        let ch = &self.channels[j];
        let span = ch.upper - ch.lower;
        if span == 0.0 {
            0.0
        } else {
            2.0 * (value - ch.lower) / span - 1.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HighLevelAction(pub [f64; ACTION_DIM]);

impl HighLevelAction {
    pub fn from_slice(values: &[f64]) -> Result<Self> {
        let arr: [f64; ACTION_DIM] = values.try_into().map_err(|_| {
            Error::Input(format!(
                "high-level action has {} entries, expected {ACTION_DIM}",
                values.len()
            ))
        })?;
        Ok(Self(arr))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommandVector {
    pub continuous: [f64; CONT_DIM],
    pub gait_embedding: [f64; EMBED_DIM],
    pub gait: Gait,
}

impl CommandVector {
    /// The flat 15-vector `[continuous, embedding]`.
    pub fn to_array(&self) -> [f64; COMMAND_DIM] {
        let mut out = [0.0; COMMAND_DIM];
        out[..CONT_DIM].copy_from_slice(&self.continuous);
        out[CONT_DIM..].copy_from_slice(&self.gait_embedding);
        out
    }
}

/// `clip(a, -a_max, a_max) / a_max`.
pub fn clip_normalize(a: &HighLevelAction, a_max: f64) -> Result<[f64; ACTION_DIM]> {
    if !(a_max.is_finite() && a_max > 0.0) {
        return Err(Error::Config(format!("a_max must be positive, got {a_max}")));
    }
    ensure_finite(&a.0, "high-level action")?;
    Ok(a.0.map(|v| v.clamp(-a_max, a_max) / a_max))
}

/// `c_j = l_j + (x_j + 1) / 2 * (u_j - l_j)`.
pub fn decode_continuous(x: &[f64; CONT_DIM], bounds: &CommandBounds) -> Result<[f64; CONT_DIM]> {
    bounds.validate()?;
    let mut out = [0.0; CONT_DIM];
    for (j, (o, ch)) in out.iter_mut().zip(&bounds.channels).enumerate() {
        let v = ch.lower + (x[j] + 1.0) * 0.5 * (ch.upper - ch.lower);
        *o = v.clamp(ch.lower, ch.upper);
    }
    Ok(out)
}

/// `clip(floor(2 (x + 1)), 0, 3)`.
pub fn quantize_gait(x: f64) -> Gait {
    let g = (2.0 * (x + 1.0)).floor().clamp(0.0, 3.0) as usize;
    Gait::ALL[g]
}

/// Full decode with an explicit bound set.
pub fn decode(a: &HighLevelAction, bounds: &CommandBounds, a_max: f64) -> Result<CommandVector> {
    let x = clip_normalize(a, a_max)?;
    let mut cont_in = [0.0; CONT_DIM];
    cont_in.copy_from_slice(&x[..CONT_DIM]);
    let continuous = decode_continuous(&cont_in, bounds)?;
    let gait = quantize_gait(x[GAIT_CHANNEL]);
    Ok(CommandVector {
        continuous,
        gait_embedding: gait.embedding(),
        gait,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderConfig {
    pub a_max: f64,
    pub channels: CommandBounds,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            a_max: 1.0,
            channels: CommandBounds::default(),
        }
    }
}

/// Validated decoder; construction checks the bounds once.
#[derive(Debug, Clone)]
pub struct Decoder {
    bounds: CommandBounds,
    a_max: f64,
}

impl Decoder {
    pub fn new(cfg: &DecoderConfig) -> Result<Self> {
        cfg.channels.validate()?;
        if !(cfg.a_max.is_finite() && cfg.a_max > 0.0) {
            return Err(Error::Config(format!("decoder.a_max must be positive, got {}", cfg.a_max)));
        }
        Ok(Self {
            bounds: cfg.channels.clone(),
            a_max: cfg.a_max,
        })
    }

    pub fn bounds(&self) -> &CommandBounds {
        &self.bounds
    }

    pub fn a_max(&self) -> f64 {
        self.a_max
    }

    pub fn decode(&self, a: &HighLevelAction) -> Result<CommandVector> {
        decode(a, &self.bounds, self.a_max)
    }

    /// Human-readable dump of the gait bins and channel mapping.
    pub fn probe(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("a_max = {}\n", self.a_max));
        s.push_str("gait channel (action index 12, normalized x in [-1, 1]):\n");
        let edges = [-1.0, -0.5, 0.0, 0.5, 1.0];
        for g in Gait::ALL {
            let i = g.index();
            let close = if i == 3 { ']' } else { ')' };
            let e = g.embedding();
            s.push_str(&format!(
                "  [{:+.2}, {:+.2}{close} -> {i} {:<5} embedding ({}, {}, {})\n",
                edges[i],
                edges[i + 1],
                g.name(),
                e[0],
                e[1],
                e[2]
            ));
        }
        s.push_str("continuous channels (x = -1 -> lower, x = +1 -> upper):\n");
        for (j, ch) in self.bounds.channels.iter().enumerate() {
            s.push_str(&format!(
                "  {j:>2} {:<18} [{:+.3}, {:+.3}] {}\n",
                ch.name, ch.lower, ch.upper, ch.unit
            ));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn action(v: f64) -> HighLevelAction {
        HighLevelAction([v; ACTION_DIM])
    }

    #[test]
    fn clip_normalize_examples() {
        let x = clip_normalize(&action(0.0), 1.0).unwrap();
        assert!(x.iter().all(|&v| v == 0.0));
        let mut a = action(0.0);
        a.0[3] = 2.0 * 1.5;
        a.0[4] = -0.5 * 1.5;
        let x = clip_normalize(&a, 1.5).unwrap();
        assert_eq!(x[3], 1.0);
        assert_eq!(x[4], -0.5);
    }

    #[test]
    fn clip_normalize_rejects_non_finite() {
        let mut a = action(0.0);
        a.0[7] = f64::NAN;
        assert!(matches!(clip_normalize(&a, 1.0), Err(Error::Input(_))));
        assert!(matches!(clip_normalize(&action(0.0), 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn decode_continuous_endpoints_and_midpoint() {
        let b = CommandBounds::default();
        let lo = decode_continuous(&[-1.0; CONT_DIM], &b).unwrap();
        let hi = decode_continuous(&[1.0; CONT_DIM], &b).unwrap();
        let mid = decode_continuous(&[0.0; CONT_DIM], &b).unwrap();
        for (j, ch) in b.channels.iter().enumerate() {
            assert_eq!(lo[j], ch.lower);
            assert_eq!(hi[j], ch.upper);
        }
        assert_eq!(mid[0], 0.0);
    }

    #[test]
    fn inverted_bounds_rejected() {
        let mut b = CommandBounds::default();
        b.channels[2].lower = 2.0;
        assert!(matches!(decode_continuous(&[0.0; CONT_DIM], &b), Err(Error::Config(_))));
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize_gait(-1.0), Gait::Trot);
        assert_eq!(quantize_gait(1.0), Gait::Bound);
        assert_eq!(quantize_gait(-0.49), Gait::Pronk);
        assert_eq!(quantize_gait(0.0), Gait::Pace);
        assert_eq!(quantize_gait(0.51), Gait::Bound);
        for g in Gait::ALL {
            assert_eq!(quantize_gait(g.channel_value()), g);
        }
    }

    #[test]
    fn embeddings_are_injective() {
        assert_eq!(gait_embedding(0).unwrap(), [0.5, 0.0, 0.0]);
        assert_eq!(gait_embedding(1).unwrap(), [0.0, 0.0, 0.0]);
        assert_eq!(gait_embedding(3).unwrap(), [0.0, 0.0, 0.5]);
        assert!(matches!(gait_embedding(4), Err(Error::Domain(_))));
        for a in Gait::ALL {
            for b in Gait::ALL {
                assert_eq!(a == b, a.embedding() == b.embedding());
            }
        }
    }

    #[test]
    fn decode_composition() {
        let d = Decoder::new(&DecoderConfig::default()).unwrap();
        let c = d.decode(&action(0.0)).unwrap();
        assert_eq!(c.continuous[0], 0.0);
        assert_eq!(c.gait, Gait::Pace);
        let c = d.decode(&action(1.0)).unwrap();
        for (j, ch) in d.bounds().channels.iter().enumerate() {
            assert_eq!(c.continuous[j], ch.upper);
        }
        assert_eq!(c.gait, Gait::Bound);
        assert_eq!(c.to_array().len(), COMMAND_DIM);
        let a = HighLevelAction([0.3, -0.2, 0.9, 0.1, -0.7, 0.4, 0.0, 0.2, -0.1, 0.5, 0.6, -0.9, 0.33]);
        assert_eq!(d.decode(&a).unwrap(), d.decode(&a).unwrap());
    }

    #[test]
    fn wrong_length_action_rejected() {
        assert!(matches!(HighLevelAction::from_slice(&[0.0; 12]), Err(Error::Input(_))));
    }

    #[test]
    fn probe_lists_every_channel() {
        let d = Decoder::new(&DecoderConfig::default()).unwrap();
        let p = d.probe();
        assert!(p.contains("bound"));
        assert!(p.contains("stance_length"));
        assert_eq!(p.lines().count(), 2 + 4 + 1 + CONT_DIM);
    }
}
