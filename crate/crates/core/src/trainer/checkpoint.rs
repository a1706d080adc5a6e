//! Versioned, self-describing policy checkpoints.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::policy::RecurrentPolicy;
use crate::config::{json_diff, RunConfig};
use crate::curriculum::CurriculumState;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "gaitnav-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Settings a policy cannot be moved across: anything that changes what an
/// observation or an action means.
const COMPAT_KEYS: &[&str] = &[
    "decoder",
    "lowlevel",
    "env.substeps",
    "env.dt_phys",
    "env.t_max",
    "env.probe_distances",
    "env.nominal_height",
    "reward.r_map",
    "trainer.hidden",
    "terrain.levels",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub config: RunConfig,
    /// Number of completed training iterations.
    pub iteration: usize,
    pub policy: RecurrentPolicy,
    pub adam: Adam,
    pub curriculum: CurriculumState,
}

impl Checkpoint {
    pub fn new(
        config: &RunConfig,
        iteration: usize,
        policy: RecurrentPolicy,
        adam: Adam,
        curriculum: CurriculumState,
    ) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config_hash: config.hash(),
            config: config.clone(),
            iteration,
            policy,
            adam,
            curriculum,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_vec(self)?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Reads and verifies the header, the embedded hash and the parameter count.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let value: serde_json::Value =
            serde_json::from_slice(&bytes).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
        let format = value.get("format").and_then(|v| v.as_str());
        if format != Some(CHECKPOINT_FORMAT) {
            return Err(Error::Schema(format!("{} is not a checkpoint", path.display())));
        }
        let version = value.get("version").and_then(|v| v.as_u64());
        if version != Some(u64::from(CHECKPOINT_VERSION)) {
            return Err(Error::Schema(format!(
                "checkpoint version {version:?} is not supported (expected {CHECKPOINT_VERSION})"
            )));
        }
        let ckpt: Checkpoint = serde_json::from_value(value).map_err(|e| Error::Schema(e.to_string()))?;
        if ckpt.config.hash() != ckpt.config_hash {
            return Err(Error::Schema("checkpoint config does not match its recorded hash".into()));
        }
        if ckpt.policy.params.len() != ckpt.policy.shape.n_params() {
            return Err(Error::Schema("checkpoint parameter count does not match its shape".into()));
        }
        Ok(ckpt)
    }

    /// Differences that make this checkpoint unusable under `current`.
    pub fn incompatibilities(&self, current: &RunConfig) -> Vec<String> {
        let a = serde_json::to_value(&self.config).expect("config serializes");
        let b = serde_json::to_value(current).expect("config serializes");
        let mut diff = Vec::new();
        json_diff("", &a, &b, &mut diff);
        diff.retain(|d| {
            COMPAT_KEYS
                .iter()
                .any(|k| d.starts_with(k) && d[k.len()..].starts_with(['.', ':']))
        });
        diff
    }

    pub fn ensure_compatible(&self, current: &RunConfig) -> Result<()> {
        let diff = self.incompatibilities(current);
        if diff.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "checkpoint is incompatible with the current configuration:\n  {}",
                diff.join("\n  ")
            )))
        }
    }
}
