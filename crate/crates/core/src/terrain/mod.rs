//! Procedural terrain curriculum.
//!
//! Five terrain families are laid out on a grid of difficulty levels. A
//! level index `l` maps to a normalized difficulty `d = l / (L - 1)` and
//! every family-specific geometric parameter is an affine function of `d`.
//! Tiles are height fields with a flat start/goal region, a linear
//! transition band, and the family-specific challenge band in between.
//!
//! Coordinates: `x` runs along the tile length (the travel axis, start at
//! low `x`, goal at high `x`), `y` runs across the tile width. Grids are
//! stored row-major with `y` as the row index.

mod export;
mod noise;

pub use export::{export_heightfield, export_png, import_heightfield, HeightFieldMeta};

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use noise::ValueNoise;

/// Lower and upper end of a difficulty-driven parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DifficultyParam {
    pub min: f64,
    pub max: f64,
}

impl DifficultyParam {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn at(&self, d: f64) -> Result<f64> {
        difficulty_map(d, *self)
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite()) || self.min > self.max {
            return Err(Error::Config(format!(
                "{name}: expected finite min <= max, got [{}, {}]",
                self.min, self.max
            )));
        }
        Ok(())
    }
}

/// Affine difficulty schedule `p(d) = p_min + d (p_max - p_min)`.
///
/// Evaluated in the interpolation form `(1 - d) p_min + d p_max` so both
/// endpoints are reproduced bit-exactly.
pub fn difficulty_map(d: f64, param: DifficultyParam) -> Result<f64> {
    if !(0.0..=1.0).contains(&d) {
        return Err(Error::Domain(format!("difficulty {d} outside [0, 1]")));
    }
    Ok((1.0 - d) * param.min + d * param.max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TerrainFamily {
    Rough,
    Pillar,
    Stair,
    Gap,
    Tilt,
}

impl TerrainFamily {
    pub const ALL: [TerrainFamily; 5] = [
        TerrainFamily::Rough,
        TerrainFamily::Pillar,
        TerrainFamily::Stair,
        TerrainFamily::Gap,
        TerrainFamily::Tilt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TerrainFamily::Rough => "rough",
            TerrainFamily::Pillar => "pillar",
            TerrainFamily::Stair => "stair",
            TerrainFamily::Gap => "gap",
            TerrainFamily::Tilt => "tilt",
        }
    }
}

impl fmt::Display for TerrainFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TerrainFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TerrainFamily::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Usage(format!("unknown terrain family `{s}`")))
    }
}

/// Region label of a height-field cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Zone {
    Start,
    Goal,
    Safety,
    Transition,
    Challenge,
}

impl Zone {
    /// Flat cells: their height is exactly zero on every tile.
    pub fn is_flat(self) -> bool {
        matches!(self, Zone::Start | Zone::Goal | Zone::Safety)
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Zone::Start => 0,
            Zone::Goal => 1,
            Zone::Safety => 2,
            Zone::Transition => 3,
            Zone::Challenge => 4,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Zone> {
        Some(match code {
            0 => Zone::Start,
            1 => Zone::Goal,
            2 => Zone::Safety,
            3 => Zone::Transition,
            4 => Zone::Challenge,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZoneConfig {
    /// Cells within this radius of the start point are labeled `Start`.
    pub start_radius: f64,
    /// Goal region radius; matches the reach threshold.
    pub goal_radius: f64,
    /// Flat region radius around start and goal.
    pub safety_radius: f64,
    /// Width of the linear blend between the flat region and the challenge band.
    pub transition_width: f64,
}

impl Default for ZoneConfig {
    fn default() -> Self {
        Self {
            start_radius: 0.25,
            goal_radius: 0.5,
            safety_radius: 0.75,
            transition_width: 0.5,
        }
    }
}

impl ZoneConfig {
    pub fn outer_radius(&self) -> f64 {
        self.safety_radius + self.transition_width
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoughConfig {
    pub amplitude: DifficultyParam,
    /// Lattice spacing of the coarsest noise octave, meters.
    pub noise_spacing: f64,
    pub octaves: usize,
}

impl Default for RoughConfig {
    fn default() -> Self {
        Self {
            amplitude: DifficultyParam::new(0.02, 0.15),
            noise_spacing: 1.0,
            octaves: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PillarConfig {
    pub count: DifficultyParam,
    pub radius: f64,
    pub height: f64,
    /// Minimum free space between two pillar rims.
    pub clearance: f64,
}

impl Default for PillarConfig {
    fn default() -> Self {
        Self {
            count: DifficultyParam::new(2.0, 14.0),
            radius: 0.25,
            height: 0.6,
            clearance: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StairConfig {
    pub step_height: DifficultyParam,
    /// Horizontal run of one step, meters.
    pub run: f64,
}

impl Default for StairConfig {
    fn default() -> Self {
        Self {
            step_height: DifficultyParam::new(0.05, 0.25),
            run: 0.30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GapConfig {
    pub width: DifficultyParam,
    pub count: DifficultyParam,
}

impl Default for GapConfig {
    fn default() -> Self {
        Self {
            width: DifficultyParam::new(0.10, 0.60),
            count: DifficultyParam::new(1.0, 4.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TiltConfig {
    /// Lateral slope angle, radians.
    pub angle: DifficultyParam,
}

impl Default for TiltConfig {
    fn default() -> Self {
        Self {
            angle: DifficultyParam::new(0.05, 0.35),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TerrainConfig {
    /// Extent along the travel axis, meters.
    pub length_m: f64,
    /// Extent across the travel axis, meters.
    pub width_m: f64,
    pub cell_size: f64,
    /// Number of difficulty levels (rows of the curriculum grid).
    pub levels: usize,
    pub start: [f64; 2],
    pub goal: [f64; 2],
    pub zones: ZoneConfig,
    pub rough: RoughConfig,
    pub pillar: PillarConfig,
    pub stair: StairConfig,
    pub gap: GapConfig,
    pub tilt: TiltConfig,
}

impl Default for TerrainConfig {
    fn default() -> Self {
        Self {
            length_m: 8.0,
            width_m: 4.0,
            cell_size: 0.05,
            levels: 10,
            start: [1.0, 2.0],
            goal: [7.0, 2.0],
            zones: ZoneConfig::default(),
            rough: RoughConfig::default(),
            pillar: PillarConfig::default(),
            stair: StairConfig::default(),
            gap: GapConfig::default(),
            tilt: TiltConfig::default(),
        }
    }
}

impl TerrainConfig {
    pub fn diagonal(&self) -> f64 {
        self.length_m.hypot(self.width_m)
    }

    /// Grid dimensions `(nx, ny)`; `ceil(extent / cell_size)` per axis.
    pub fn grid_dims(&self) -> (usize, usize) {
        (
            cells_along(self.length_m, self.cell_size),
            cells_along(self.width_m, self.cell_size),
        )
    }

    pub fn difficulty(&self, level: usize) -> Result<f64> {
        if level >= self.levels {
            return Err(Error::Domain(format!(
                "level {level} outside [0, {}]",
                self.levels.saturating_sub(1)
            )));
        }
        if self.levels == 1 {
            return Ok(0.0);
        }
        Ok(level as f64 / (self.levels - 1) as f64)
    }

    /// The `x` interval strictly between the start and goal transition bands.
    pub fn challenge_span(&self) -> (f64, f64) {
        let outer = self.zones.outer_radius();
        (self.start[0] + outer, self.goal[0] - outer)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("terrain.length_m", self.length_m),
            ("terrain.width_m", self.width_m),
            ("terrain.cell_size", self.cell_size),
            ("terrain.zones.start_radius", self.zones.start_radius),
            ("terrain.zones.goal_radius", self.zones.goal_radius),
            ("terrain.zones.safety_radius", self.zones.safety_radius),
            ("terrain.zones.transition_width", self.zones.transition_width),
            ("terrain.rough.noise_spacing", self.rough.noise_spacing),
            ("terrain.pillar.radius", self.pillar.radius),
            ("terrain.stair.run", self.stair.run),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.levels < 2 {
            return Err(Error::Config("terrain.levels must be at least 2".into()));
        }
        let (nx, ny) = self.grid_dims();
        if nx < 2 || ny < 2 {
            return Err(Error::Config("terrain grid needs at least 2x2 cells".into()));
        }
        self.rough.amplitude.validate("terrain.rough.amplitude")?;
        self.pillar.count.validate("terrain.pillar.count")?;
        self.stair.step_height.validate("terrain.stair.step_height")?;
        self.gap.width.validate("terrain.gap.width")?;
        self.gap.count.validate("terrain.gap.count")?;
        self.tilt.angle.validate("terrain.tilt.angle")?;
        if self.gap.count.min < 1.0 {
            return Err(Error::Config("terrain.gap.count.min must be >= 1".into()));
        }
        if self.tilt.angle.max >= std::f64::consts::FRAC_PI_2 {
            return Err(Error::Config("terrain.tilt.angle.max must be below pi/2".into()));
        }
        let z = &self.zones;
        if z.start_radius > z.safety_radius || z.goal_radius > z.safety_radius {
            return Err(Error::Config(
                "start/goal radius must not exceed the safety radius".into(),
            ));
        }
        for (name, p) in [("start", self.start), ("goal", self.goal)] {
            let r = z.safety_radius;
            if p[0] - r < 0.0 || p[0] + r > self.length_m || p[1] - r < 0.0 || p[1] + r > self.width_m
            {
                return Err(Error::Config(format!(
                    "{name} safety region does not fit inside the tile"
                )));
            }
        }
        if self.goal[0] <= self.start[0] {
            return Err(Error::Config("goal must lie further along x than start".into()));
        }
        let sep = dist(self.start, self.goal);
        if sep <= 2.0 * z.safety_radius {
            return Err(Error::Config("start and goal safety zones overlap".into()));
        }
        if sep <= 2.0 * z.outer_radius() {
            return Err(Error::Config(
                "tile too small: no challenge band between start and goal zones".into(),
            ));
        }
        Ok(())
    }
}

fn cells_along(extent: f64, cell: f64) -> usize {
    // The epsilon absorbs representation error, e.g. 8.0 / 0.05 = 160.00000000000003.
    (extent / cell - 1e-9).ceil().max(1.0) as usize
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Discretized terrain surface.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightField {
    pub length_m: f64,
    pub width_m: f64,
    pub cell_size: f64,
    pub nx: usize,
    pub ny: usize,
    /// Row-major heights, `heights[iy * nx + ix]`, meters.
    pub heights: Vec<f64>,
    pub support: Vec<bool>,
    pub zones: Vec<Zone>,
}

impl HeightField {
    /// Flat, fully supported field with every cell labeled `Challenge`.
    pub fn flat(length_m: f64, width_m: f64, cell_size: f64) -> Self {
        let nx = cells_along(length_m, cell_size);
        let ny = cells_along(width_m, cell_size);
        Self {
            length_m,
            width_m,
            cell_size,
            nx,
            ny,
            heights: vec![0.0; nx * ny],
            support: vec![true; nx * ny],
            zones: vec![Zone::Challenge; nx * ny],
        }
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> [f64; 2] {
        [
            (ix as f64 + 0.5) * self.cell_size,
            (iy as f64 + 0.5) * self.cell_size,
        ]
    }

    pub fn height(&self, ix: usize, iy: usize) -> f64 {
        self.heights[self.index(ix, iy)]
    }

    pub fn zone(&self, ix: usize, iy: usize) -> Zone {
        self.zones[self.index(ix, iy)]
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        (0.0..=self.length_m).contains(&x) && (0.0..=self.width_m).contains(&y)
    }

    /// Bracketing cell indices and interpolation weights for a point.
    fn bracket(&self, x: f64, y: f64) -> Result<(usize, usize, f64, f64)> {
        if !self.contains(x, y) {
            return Err(Error::Domain(format!(
                "query ({x}, {y}) outside terrain extent {}x{}",
                self.length_m, self.width_m
            )));
        }
        let fx = x / self.cell_size - 0.5;
        let fy = y / self.cell_size - 0.5;
        let ix = (fx.floor().max(0.0) as usize).min(self.nx - 2);
        let iy = (fy.floor().max(0.0) as usize).min(self.ny - 2);
        let tx = (fx - ix as f64).clamp(0.0, 1.0);
        let ty = (fy - iy as f64).clamp(0.0, 1.0);
        Ok((ix, iy, tx, ty))
    }

    /// Bilinear interpolation between the four surrounding cell centers.
    pub fn query_height(&self, x: f64, y: f64) -> Result<f64> {
        let (ix, iy, tx, ty) = self.bracket(x, y)?;
        let h00 = self.height(ix, iy);
        let h10 = self.height(ix + 1, iy);
        let h01 = self.height(ix, iy + 1);
        let h11 = self.height(ix + 1, iy + 1);
        let a = h00 + (h10 - h00) * tx;
        let b = h01 + (h11 - h01) * tx;
        Ok(a + (b - a) * ty)
    }

    /// True iff all four surrounding cells are supported.
    pub fn is_supported(&self, x: f64, y: f64) -> Result<bool> {
        let (ix, iy, _, _) = self.bracket(x, y)?;
        Ok(self.support[self.index(ix, iy)]
            && self.support[self.index(ix + 1, iy)]
            && self.support[self.index(ix, iy + 1)]
            && self.support[self.index(ix + 1, iy + 1)])
    }

    pub fn supported_count(&self) -> usize {
        self.support.iter().filter(|&&s| s).count()
    }
}

/// Labels every cell by its radial distance to the start and goal points.
fn label_zones(field: &mut HeightField, start: [f64; 2], goal: [f64; 2], zones: &ZoneConfig) {
    for iy in 0..field.ny {
        for ix in 0..field.nx {
            let c = field.cell_center(ix, iy);
            let ds = dist(c, start);
            let dg = dist(c, goal);
            let r = ds.min(dg);
            let label = if ds <= zones.start_radius {
                Zone::Start
            } else if dg <= zones.goal_radius {
                Zone::Goal
            } else if r <= zones.safety_radius {
                Zone::Safety
            } else if r <= zones.outer_radius() {
                Zone::Transition
            } else {
                Zone::Challenge
            };
            let i = field.index(ix, iy);
            field.zones[i] = label;
        }
    }
}

/// Flattens the start/goal safety regions and blends the transition band.
///
/// The incoming heights are read as challenge heights. Flat cells become 0
/// and fully supported; transition cells at radial fraction `t` across the
/// band get `t` times their challenge height.
pub fn apply_zones(
    mut field: HeightField,
    start: [f64; 2],
    goal: [f64; 2],
    zones: &ZoneConfig,
) -> Result<HeightField> {
    for (name, p) in [("start", start), ("goal", goal)] {
        if !field.contains(p[0], p[1]) {
            return Err(Error::Domain(format!("{name} point outside the field")));
        }
    }
    if dist(start, goal) <= 2.0 * zones.safety_radius {
        return Err(Error::Config("start and goal safety zones overlap".into()));
    }
    label_zones(&mut field, start, goal, zones);
    for iy in 0..field.ny {
        for ix in 0..field.nx {
            let i = field.index(ix, iy);
            match field.zones[i] {
                Zone::Challenge => {}
                Zone::Transition => {
                    let c = field.cell_center(ix, iy);
                    let r = dist(c, start).min(dist(c, goal));
                    let t = (r - zones.safety_radius) / zones.transition_width;
                    field.heights[i] *= t;
                }
                _ => {
                    field.heights[i] = 0.0;
                    field.support[i] = true;
                }
            }
        }
    }
    Ok(field)
}

/// Cylindrical obstacle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pillar {
    pub center: [f64; 2],
    pub radius: f64,
    pub height: f64,
}

/// A crack spanning the tile width; cells whose center `x` lies in
/// `[x_start, x_end)` are unsupported.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapStrip {
    pub x_start: f64,
    pub x_end: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TerrainLayout {
    pub pillars: Vec<Pillar>,
    pub gaps: Vec<GapStrip>,
}

/// Realized value of a difficulty-driven parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeneratedParam {
    pub name: &'static str,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct GeneratedTerrain {
    pub field: HeightField,
    pub layout: TerrainLayout,
    pub params: Vec<GeneratedParam>,
}

/// Realized parameter values of a family at difficulty `d`.
pub fn family_params(family: TerrainFamily, d: f64, cfg: &TerrainConfig) -> Result<Vec<GeneratedParam>> {
    let p = |name, value| GeneratedParam { name, value };
    Ok(match family {
        TerrainFamily::Rough => vec![p("amplitude", cfg.rough.amplitude.at(d)?)],
        TerrainFamily::Pillar => vec![p("obstacle_count", cfg.pillar.count.at(d)?.round())],
        TerrainFamily::Stair => vec![p("step_height", cfg.stair.step_height.at(d)?)],
        TerrainFamily::Gap => vec![
            p("gap_width", cfg.gap.width.at(d)?),
            p("gap_count", cfg.gap.count.at(d)?.round()),
        ],
        TerrainFamily::Tilt => vec![p("tilt_angle", cfg.tilt.angle.at(d)?)],
    })
}

fn param(params: &[GeneratedParam], name: &str) -> f64 {
    params
        .iter()
        .find(|p| p.name == name)
        .map(|p| p.value)
        .expect("parameter list built by family_params")
}

/// Builds the zoned height field of one family at difficulty `d`.
pub fn generate(
    family: TerrainFamily,
    d: f64,
    seed: u64,
    cfg: &TerrainConfig,
) -> Result<GeneratedTerrain> {
    cfg.validate()?;
    let params = family_params(family, d, cfg)?;
    let mut field = HeightField::flat(cfg.length_m, cfg.width_m, cfg.cell_size);
    label_zones(&mut field, cfg.start, cfg.goal, &cfg.zones);
    let mut layout = TerrainLayout::default();

    match family {
        TerrainFamily::Rough => {
            let amplitude = param(&params, "amplitude");
            let noise = ValueNoise::new(
                seed,
                cfg.length_m,
                cfg.width_m,
                cfg.rough.noise_spacing,
                cfg.rough.octaves,
            );
            let mut raw = vec![0.0; field.heights.len()];
            for iy in 0..field.ny {
                for ix in 0..field.nx {
                    let c = field.cell_center(ix, iy);
                    raw[field.index(ix, iy)] = noise.sample(c[0], c[1]);
                }
            }
            // Zero mean, unit max-abs over the challenge band.
            let challenge: Vec<usize> = (0..raw.len())
                .filter(|&i| field.zones[i] == Zone::Challenge)
                .collect();
            let mean = challenge.iter().map(|&i| raw[i]).sum::<f64>() / challenge.len().max(1) as f64;
            let peak = challenge
                .iter()
                .map(|&i| (raw[i] - mean).abs())
                .fold(0.0, f64::max);
            let scale = if peak > 0.0 { amplitude / peak } else { 0.0 };
            for (h, r) in field.heights.iter_mut().zip(&raw) {
                *h = (r - mean) * scale;
            }
        }
        TerrainFamily::Pillar => {
            let count = param(&params, "obstacle_count") as usize;
            layout.pillars = place_pillars(count, seed, cfg)?;
            for iy in 0..field.ny {
                for ix in 0..field.nx {
                    let c = field.cell_center(ix, iy);
                    for p in &layout.pillars {
                        if dist(c, p.center) <= p.radius {
                            let i = field.index(ix, iy);
                            field.heights[i] = field.heights[i].max(p.height);
                        }
                    }
                }
            }
        }
        TerrainFamily::Stair => {
            let step = param(&params, "step_height");
            let x0 = cfg.start[0] + cfg.zones.safety_radius;
            let x1 = cfg.goal[0] - cfg.zones.safety_radius;
            for iy in 0..field.ny {
                for ix in 0..field.nx {
                    let x = field.cell_center(ix, iy)[0];
                    let i = field.index(ix, iy);
                    field.heights[i] = step * stair_index(x, x0, x1, cfg.stair.run) as f64;
                }
            }
        }
        TerrainFamily::Gap => {
            let width = param(&params, "gap_width");
            let count = param(&params, "gap_count") as usize;
            layout.gaps = place_gaps(count, width, cfg)?;
            for iy in 0..field.ny {
                for ix in 0..field.nx {
                    let x = field.cell_center(ix, iy)[0];
                    if layout.gaps.iter().any(|g| x >= g.x_start && x < g.x_end) {
                        let i = field.index(ix, iy);
                        field.support[i] = false;
                    }
                }
            }
        }
        TerrainFamily::Tilt => {
            let slope = param(&params, "tilt_angle").tan();
            let half = cfg.width_m / 2.0;
            for iy in 0..field.ny {
                for ix in 0..field.nx {
                    let y = field.cell_center(ix, iy)[1];
                    let i = field.index(ix, iy);
                    field.heights[i] = (y - half) * slope;
                }
            }
        }
    }

    let field = apply_zones(field, cfg.start, cfg.goal, &cfg.zones)?;
    Ok(GeneratedTerrain { field, layout, params })
}

/// Zoned height field of one family at difficulty `d`.
pub fn generate_heightfield(
    family: TerrainFamily,
    d: f64,
    seed: u64,
    cfg: &TerrainConfig,
) -> Result<HeightField> {
    generate(family, d, seed, cfg).map(|g| g.field)
}

/// Pyramid staircase: steps rise from both flat regions toward the middle.
fn stair_index(x: f64, x0: f64, x1: f64, run: f64) -> u32 {
    let s = (x - x0).min(x1 - x);
    if s <= 0.0 {
        0
    } else {
        (s / run).floor() as u32
    }
}

fn place_pillars(count: usize, seed: u64, cfg: &TerrainConfig) -> Result<Vec<Pillar>> {
    let p = &cfg.pillar;
    let keep_out = cfg.zones.outer_radius() + p.radius;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pillars: Vec<Pillar> = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while pillars.len() < count {
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::Config(format!(
                "cannot place {count} pillars of radius {} on the tile",
                p.radius
            )));
        }
        let c = [
            rng.random_range(p.radius..=cfg.length_m - p.radius),
            rng.random_range(p.radius..=cfg.width_m - p.radius),
        ];
        if dist(c, cfg.start) < keep_out || dist(c, cfg.goal) < keep_out {
            continue;
        }
        if pillars
            .iter()
            .any(|q| dist(c, q.center) < 2.0 * p.radius + p.clearance)
        {
            continue;
        }
        pillars.push(Pillar {
            center: c,
            radius: p.radius,
            height: p.height,
        });
    }
    Ok(pillars)
}

fn place_gaps(count: usize, width: f64, cfg: &TerrainConfig) -> Result<Vec<GapStrip>> {
    let (lo, hi) = cfg.challenge_span();
    let spacing = (hi - lo) / (count + 1) as f64;
    let cs = cfg.cell_size;
    let mut gaps = Vec::with_capacity(count);
    for k in 0..count {
        let center = lo + spacing * (k + 1) as f64;
        // Snap to a cell boundary so the unsupported cell count is monotone in width.
        let x_start = ((center - width / 2.0) / cs).round() * cs;
        let gap = GapStrip {
            x_start,
            x_end: x_start + width,
        };
        if gap.x_start < lo || gap.x_end > hi {
            return Err(Error::Config(format!(
                "gap [{:.3}, {:.3}) leaves the challenge band [{lo:.3}, {hi:.3}]",
                gap.x_start, gap.x_end
            )));
        }
        if let Some(prev) = gaps.last() {
            let prev: &GapStrip = prev;
            if gap.x_start < prev.x_end {
                return Err(Error::Config("gaps overlap; reduce gap count or width".into()));
            }
        }
        gaps.push(gap);
    }
    Ok(gaps)
}

/// One cell of the curriculum grid.
#[derive(Debug, Clone)]
pub struct TerrainTile {
    pub family: TerrainFamily,
    pub level: usize,
    pub difficulty: f64,
    pub field: HeightField,
    pub start_pos: [f64; 2],
    pub goal_pos: [f64; 2],
    pub seed: u64,
    pub params: Vec<GeneratedParam>,
    pub layout: TerrainLayout,
}

/// Deterministic tile for `(level, family, seed)`.
pub fn sample_tile(
    cfg: &TerrainConfig,
    level: usize,
    family: TerrainFamily,
    seed: u64,
) -> Result<TerrainTile> {
    let difficulty = cfg.difficulty(level)?;
    let GeneratedTerrain {
        field,
        layout,
        params,
    } = generate(family, difficulty, seed, cfg)?;
    Ok(TerrainTile {
        family,
        level,
        difficulty,
        field,
        start_pos: cfg.start,
        goal_pos: cfg.goal,
        seed,
        params,
        layout,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> TerrainConfig {
        TerrainConfig::default()
    }

    #[test]
    fn difficulty_map_examples() {
        let p = DifficultyParam::new(0.02, 0.20);
        assert_eq!(difficulty_map(0.0, p).unwrap(), 0.02);
        assert_eq!(difficulty_map(1.0, p).unwrap(), 0.20);
        assert!((difficulty_map(0.5, p).unwrap() - 0.11).abs() < 1e-15);
        assert!(matches!(difficulty_map(1.01, p), Err(Error::Domain(_))));
        assert!(matches!(difficulty_map(-0.1, p), Err(Error::Domain(_))));
        assert!(difficulty_map(f64::NAN, p).is_err());
    }

    #[test]
    fn grid_dims_use_ceiling() {
        assert_eq!(cfg().grid_dims(), (160, 80));
        let mut c = cfg();
        c.length_m = 8.01;
        assert_eq!(c.grid_dims().0, 161);
    }

    #[test]
    fn level_normalization() {
        let c = cfg();
        assert_eq!(c.difficulty(9).unwrap(), 1.0);
        assert!((c.difficulty(5).unwrap() - 5.0 / 9.0).abs() < 1e-15);
        assert!(matches!(c.difficulty(10), Err(Error::Domain(_))));
    }

    #[test]
    fn sample_tile_is_deterministic() {
        let a = sample_tile(&cfg(), 0, TerrainFamily::Rough, 42).unwrap();
        let b = sample_tile(&cfg(), 0, TerrainFamily::Rough, 42).unwrap();
        assert_eq!(a.field, b.field);
        let c = sample_tile(&cfg(), 0, TerrainFamily::Rough, 43).unwrap();
        assert_ne!(a.field.heights, c.field.heights);
    }

    #[test]
    fn tilt_center_line_and_offset() {
        let mut c = cfg();
        c.tilt.angle = DifficultyParam::new(0.1, 0.1);
        let f = generate_heightfield(TerrainFamily::Tilt, 0.3, 0, &c).unwrap();
        // y = 3 m lies between rows; interpolation reproduces the plane exactly.
        let h = f.query_height(4.0, 3.0).unwrap();
        assert!((h - 0.1f64.tan()).abs() < 1e-12, "{h}");
        assert!((0.1f64.tan() - 0.100335).abs() < 1e-6);
        assert!(f.query_height(4.0, 2.0).unwrap().abs() < 1e-12);
    }

    #[test]
    fn geometry_too_small_is_config_error() {
        let mut c = cfg();
        c.goal = [2.8, 2.0];
        assert!(matches!(
            generate_heightfield(TerrainFamily::Rough, 0.0, 1, &c),
            Err(Error::Config(_))
        ));
        c.goal = [2.2, 2.0];
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn overlapping_safety_zones_rejected_by_apply_zones() {
        let f = HeightField::flat(8.0, 4.0, 0.05);
        let r = apply_zones(f, [1.0, 2.0], [2.0, 2.0], &ZoneConfig::default());
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn query_outside_extent_is_domain_error() {
        let f = HeightField::flat(8.0, 4.0, 0.05);
        assert!(matches!(f.query_height(-0.01, 1.0), Err(Error::Domain(_))));
        assert!(matches!(f.is_supported(1.0, 4.5), Err(Error::Domain(_))));
        assert!(f.query_height(8.0, 4.0).is_ok());
    }

    #[test]
    fn query_at_cell_center_returns_cell_height() {
        let t = sample_tile(&cfg(), 7, TerrainFamily::Rough, 5).unwrap();
        let f = &t.field;
        for (ix, iy) in [(3, 4), (80, 40), (120, 11), (159, 79), (0, 0)] {
            let c = f.cell_center(ix, iy);
            let h = f.query_height(c[0], c[1]).unwrap();
            assert!((h - f.height(ix, iy)).abs() < 1e-12);
        }
    }

    #[test]
    fn pillars_are_nested_across_levels() {
        let c = cfg();
        let lo = sample_tile(&c, 2, TerrainFamily::Pillar, 11).unwrap();
        let hi = sample_tile(&c, 8, TerrainFamily::Pillar, 11).unwrap();
        assert!(hi.layout.pillars.len() >= lo.layout.pillars.len());
        assert_eq!(&hi.layout.pillars[..lo.layout.pillars.len()], &lo.layout.pillars[..]);
    }

    #[test]
    fn family_names_parse() {
        for f in TerrainFamily::ALL {
            assert_eq!(f.name().parse::<TerrainFamily>().unwrap(), f);
        }
        assert!("lava".parse::<TerrainFamily>().is_err());
    }
}
