//! Per-environment difficulty scheduling with sliding success windows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How environments are spread over levels at construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitialLevels {
    /// Every environment starts at level 0.
    #[default]
    Zero,
    /// Environment `i` starts at level `i mod L_max`.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurriculumConfig {
    /// Episodes per window.
    pub window_len: usize,
    /// Successes in a full window needed for promotion.
    pub threshold: usize,
    pub initial: InitialLevels,
    /// When false, levels stay fixed and outcomes are ignored.
    pub enabled: bool,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self {
            window_len: 10,
            threshold: 7,
            initial: InitialLevels::Zero,
            enabled: true,
        }
    }
}

impl CurriculumConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_len == 0 || self.threshold == 0 || self.threshold > self.window_len {
            return Err(Error::Config(format!(
                "curriculum needs 1 <= threshold <= window_len, got threshold {} and window_len {}",
                self.threshold, self.window_len
            )));
        }
        if !self.has_hold_band() {
            log::warn!(
                "curriculum threshold {} with window {} leaves no hold band between promotion and demotion",
                self.threshold,
                self.window_len
            );
        }
        Ok(())
    }

    /// True when some success count neither promotes nor demotes.
    pub fn has_hold_band(&self) -> bool {
        self.window_len + 1 - self.threshold < self.threshold
    }
}

/// `c >= S` promotes, `c < W - S + 1` demotes, anything else holds.
pub fn update_level(level: usize, c: usize, window_len: usize, threshold: usize, l_max: usize) -> usize {
    if c >= threshold {
        (level + 1).min(l_max - 1)
    } else if c + threshold < window_len + 1 {
        level.saturating_sub(1)
    } else {
        level
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelChange {
    pub env: usize,
    pub from: usize,
    pub to: usize,
    /// Successes counted in the completed window.
    pub successes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumState {
    levels: Vec<usize>,
    windows: Vec<Vec<bool>>,
    window_len: usize,
    threshold: usize,
    l_max: usize,
    enabled: bool,
}

impl CurriculumState {
    pub fn new(cfg: &CurriculumConfig, n_envs: usize, l_max: usize) -> Result<Self> {
        cfg.validate()?;
        if l_max == 0 {
            return Err(Error::Config("curriculum needs at least one level".into()));
        }
        let levels = (0..n_envs)
            .map(|i| match cfg.initial {
                InitialLevels::Zero => 0,
                InitialLevels::Uniform => i % l_max,
            })
            .collect();
        Ok(Self {
            levels,
            windows: vec![Vec::with_capacity(cfg.window_len); n_envs],
            window_len: cfg.window_len,
            threshold: cfg.threshold,
            l_max,
            enabled: cfg.enabled,
        })
    }

    /// Curriculum with every environment pinned to `level`.
    pub fn fixed(n_envs: usize, level: usize, l_max: usize) -> Result<Self> {
        if level >= l_max {
            return Err(Error::Domain(format!("level {level} outside [0, {}]", l_max - 1)));
        }
        let cfg = CurriculumConfig {
            enabled: false,
            ..Default::default()
        };
        let mut s = Self::new(&cfg, n_envs, l_max)?;
        s.levels.fill(level);
        Ok(s)
    }

    pub fn n_envs(&self) -> usize {
        self.levels.len()
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    pub fn level(&self, env: usize) -> Result<usize> {
        self.levels
            .get(env)
            .copied()
            .ok_or_else(|| Error::Domain(format!("environment {env} out of range")))
    }

    pub fn set_level(&mut self, env: usize, level: usize) -> Result<()> {
        if level >= self.l_max {
            return Err(Error::Domain(format!("level {level} outside [0, {}]", self.l_max - 1)));
        }
        let slot = self
            .levels
            .get_mut(env)
            .ok_or_else(|| Error::Domain(format!("environment {env} out of range")))?;
        *slot = level;
        self.windows[env].clear();
        Ok(())
    }

    pub fn window(&self, env: usize) -> Result<&[bool]> {
        self.windows
            .get(env)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Domain(format!("environment {env} out of range")))
    }

    /// Pushes one episode outcome; a full window is scored and cleared.
    pub fn record_outcome(&mut self, env: usize, success: bool) -> Result<Option<LevelChange>> {
        if env >= self.levels.len() {
            return Err(Error::Domain(format!(
                "environment {env} out of range for {} environments",
                self.levels.len()
            )));
        }
        if !self.enabled {
            return Ok(None);
        }
        let window = &mut self.windows[env];
        window.push(success);
        if window.len() < self.window_len {
            return Ok(None);
        }
        let successes = window.iter().filter(|&&s| s).count();
        window.clear();
        let from = self.levels[env];
        let to = update_level(from, successes, self.window_len, self.threshold, self.l_max);
        self.levels[env] = to;
        Ok(Some(LevelChange {
            env,
            from,
            to,
            successes,
        }))
    }

    pub fn mean_level(&self) -> f64 {
        if self.levels.is_empty() {
            return 0.0;
        }
        self.levels.iter().sum::<usize>() as f64 / self.levels.len() as f64
    }

    /// Count of environments per level.
    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.l_max];
        for &l in &self.levels {
            h[l] += 1;
        }
        h
    }
}
