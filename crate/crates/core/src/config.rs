//! Run configuration: every tunable of the stack in one TOML document.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::curriculum::CurriculumConfig;
use crate::decoder::{Decoder, DecoderConfig};
use crate::error::{Error, Result};
use crate::hier_env::{EnvConfig, HierStack};
use crate::lowlevel::{ActionMapper, ActionMapperConfig, LowLevelRewardConfig, Surrogate, SurrogateConfig};
use crate::reward::RewardConfig;
use crate::terrain::TerrainConfig;
use crate::trainer::TrainerConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LowLevelConfig {
    pub action: ActionMapperConfig,
    pub reward: LowLevelRewardConfig,
    pub surrogate: SurrogateConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub terrain: TerrainConfig,
    pub decoder: DecoderConfig,
    pub lowlevel: LowLevelConfig,
    pub reward: RewardConfig,
    pub curriculum: CurriculumConfig,
    pub env: EnvConfig,
    pub trainer: TrainerConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }

    /// Checks every section and the constraints that tie sections together.
    pub fn validate(&self) -> Result<()> {
        self.terrain.validate()?;
        Decoder::new(&self.decoder)?;
        ActionMapper::new(&self.lowlevel.action)?;
        self.lowlevel.surrogate.validate()?;
        if !(self.lowlevel.reward.sigma_lin > 0.0 && self.lowlevel.reward.sigma_yaw > 0.0) {
            return Err(Error::Config("lowlevel.reward sigmas must be positive".into()));
        }
        self.reward.validate()?;
        self.curriculum.validate()?;
        self.env.validate()?;
        self.trainer.validate()?;
        self.build_stack().map(|_| ())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes to JSON");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn build_stack(&self) -> Result<Arc<HierStack>> {
        let decoder = Decoder::new(&self.decoder)?;
        let surrogate = Surrogate::new(&self.lowlevel.surrogate, decoder.bounds(), &self.lowlevel.action.q0)?;
        Ok(Arc::new(HierStack::new(
            self.terrain.clone(),
            decoder,
            surrogate,
            self.reward.clone(),
            self.lowlevel.reward.clone(),
            self.env.clone(),
        )?))
    }

    /// Paths (dotted) of the leaves where `self` and `other` differ.
    pub fn diff(&self, other: &RunConfig) -> Vec<String> {
        let a = serde_json::to_value(self).expect("config serializes");
        let b = serde_json::to_value(other).expect("config serializes");
        let mut out = Vec::new();
        json_diff("", &a, &b, &mut out);
        out
    }
}

pub(crate) fn json_diff(prefix: &str, a: &serde_json::Value, b: &serde_json::Value, out: &mut Vec<String>) {
    use serde_json::Value;
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            let mut keys: Vec<&String> = x.keys().chain(y.keys()).collect();
            keys.sort();
            keys.dedup();
            for k in keys {
                let p = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                match (x.get(k), y.get(k)) {
                    (Some(va), Some(vb)) => json_diff(&p, va, vb, out),
                    (va, vb) => out.push(format!("{p}: {} != {}", show(va), show(vb))),
                }
            }
        }
        _ if a != b => out.push(format!("{prefix}: {a} != {b}")),
        _ => {}
    }
}

fn show(v: Option<&serde_json::Value>) -> String {
    v.map_or_else(|| "<missing>".to_string(), |v| v.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml_string().unwrap();
        let back = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::from_toml_str("[trainer]\nlearning_rate_typo = 1.0\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(RunConfig::from_toml_str("bogus = 1\n").is_err());
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = RunConfig::from_toml_str("[trainer]\nseed = 7\n").unwrap();
        assert_eq!(cfg.trainer.seed, 7);
        assert_eq!(cfg.env, EnvConfig::default());
    }

    #[test]
    fn inconsistent_step_time_rejected() {
        let err = RunConfig::from_toml_str("[env]\nsubsteps = 5\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn diff_lists_changed_leaves() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.trainer.hidden = 64;
        b.decoder.a_max = 2.0;
        let d = a.diff(&b);
        assert_eq!(d.len(), 2);
        assert!(d.iter().any(|s| s.starts_with("decoder.a_max")));
        assert_ne!(a.hash(), b.hash());
    }
}
