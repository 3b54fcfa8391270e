//! Experiment configuration: every hyperparameter in one TOML document.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::completion::AutoencoderConfig;
use crate::forecast::{EntangledConfig, GlobalConfig, LocalConfig};
use crate::pose::{KdeNorm, DEFAULT_ALPHA_C};
use crate::synth::{NoiseConfig, Split};

use super::IoError;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub train: usize,
    pub test: usize,
    pub split: Split,
    pub noise: NoiseConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train: 500,
            test: 100,
            split: Split::Default,
            noise: NoiseConfig::default(),
        }
    }
}

/// `d_ae` at the top level is authoritative: [`ExperimentConfig::resolve`]
/// copies it into the completion and codec sections.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub alpha_c: f64,
    pub d_ae: usize,
    pub t_p: usize,
    pub t_f: usize,
    pub kde_norm: KdeNorm,
    /// Forecast lengths of the horizon table.
    pub horizons: Vec<usize>,
    /// Complete poses before decomposition (false gives the
    /// decomposition-only pipeline).
    pub use_completion: bool,
    /// Run velocity baselines on completed instead of raw poses.
    pub baselines_on_completed: bool,
    pub data: DataConfig,
    pub completion: AutoencoderConfig,
    pub local: LocalConfig,
    pub global: GlobalConfig,
    pub entangled: EntangledConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            seed: 0,
            alpha_c: DEFAULT_ALPHA_C,
            d_ae: 10,
            t_p: 15,
            t_f: 15,
            kde_norm: KdeNorm::L2,
            horizons: vec![5, 10, 15, 20, 25, 30],
            use_completion: true,
            baselines_on_completed: false,
            data: DataConfig::default(),
            completion: AutoencoderConfig::default(),
            local: LocalConfig::default(),
            global: GlobalConfig::default(),
            entangled: EntangledConfig::default(),
        }
    }
}

fn positive(x: f64) -> bool {
    x > 0.0 && x.is_finite()
}

impl ExperimentConfig {
    pub fn resolve(mut self) -> Result<Self, IoError> {
        self.completion.d_ae = self.d_ae;
        self.local.codec.d_ae = self.d_ae;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), IoError> {
        let bad = |m: &str| Err(IoError::Config(m.to_string()));
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return bad(&format!("schema_version {} (expected {CONFIG_SCHEMA_VERSION})", self.schema_version));
        }
        if !(0.0..1.0).contains(&self.alpha_c) {
            return bad("alpha_c must lie in [0, 1)");
        }
        if self.d_ae == 0 || self.completion.d_ae != self.d_ae || self.local.codec.d_ae != self.d_ae {
            return bad("d_ae must be positive and shared by completion and the local codec");
        }
        if self.t_p < 2 || self.t_f == 0 {
            return bad("need t_p >= 2 and t_f >= 1");
        }
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return bad("horizons must be a non-empty list of positive lengths");
        }
        if self.local.layers == 0 || self.global.layers == 0 || self.entangled.layers == 0 {
            return bad("layer counts must be positive");
        }
        for (name, q) in [("local", &self.local.qrnn), ("global", &self.global.qrnn), ("entangled", &self.entangled.qrnn)] {
            if q.hidden == 0 || q.kernel == 0 {
                return bad(&format!("{name}.qrnn needs positive hidden and kernel"));
            }
        }
        for (name, s) in [("local", &self.local.schedule), ("global", &self.global.schedule), ("entangled", &self.entangled.schedule)] {
            if !positive(s.lr) || !positive(s.lr_final_fraction) || s.batch_size == 0 {
                return bad(&format!("{name}.schedule needs positive lr, lr_final_fraction and batch_size"));
            }
        }
        if !positive(self.local.offset_scale)
            || !positive(self.global.residual_scale)
            || !positive(self.global.depth_scale)
            || !positive(self.global.translation_scale)
            || self.global.frame_hidden == 0
        {
            return bad("scales and frame_hidden must be positive");
        }
        self.completion.validate().map_err(|e| IoError::Config(e.to_string()))?;
        self.local.codec.validate().map_err(|e| IoError::Config(e.to_string()))?;
        self.data.noise.validate().map_err(|e| IoError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, IoError> {
        Self::from_value(toml::from_str(text).map_err(|e| IoError::Config(e.to_string()))?)
    }

    fn from_value(v: toml::Table) -> Result<Self, IoError> {
        let cfg: Self = toml::Value::Table(v).try_into().map_err(|e: toml::de::Error| IoError::Config(e.to_string()))?;
        cfg.resolve()
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let text = std::fs::read_to_string(path).map_err(IoError::io(path))?;
        Self::from_toml_str(&text).map_err(|e| IoError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    /// Applies `dotted.key=value` overrides; values are parsed as TOML and
    /// fall back to plain strings.
    pub fn with_overrides(&self, sets: &[String]) -> Result<Self, IoError> {
        let mut root: toml::Table = toml::from_str(&self.to_toml_string()).map_err(|e| IoError::Config(e.to_string()))?;
        for s in sets {
            let (key, raw) = s
                .split_once('=')
                .ok_or_else(|| IoError::Config(format!("override {s:?} is not key=value")))?;
            let value = parse_value(raw.trim());
            let mut parts: Vec<&str> = key.trim().split('.').collect();
            let leaf = parts.pop().filter(|l| !l.is_empty()).ok_or_else(|| IoError::Config(format!("empty key in {s:?}")))?;
            let mut table = &mut root;
            for p in parts {
                table = table
                    .entry(p)
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .ok_or_else(|| IoError::Config(format!("{key}: {p} is not a section")))?;
            }
            table.insert(leaf.to_string(), value);
        }
        Self::from_value(root)
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecast::{PoolingMode, ResidualMode};

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_document_fills_defaults() {
        let cfg = ExperimentConfig::from_toml_str("seed = 7\n[global]\nresidual_mode = \"from-first\"\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.global.residual_mode, ResidualMode::FromFirst);
        assert_eq!(cfg.local.layers, 4);
        assert_eq!(cfg.global.layers, 2);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml_str("sede = 7").is_err());
        assert!(ExperimentConfig::from_toml_str("[local]\nlayer = 3").is_err());
        assert!(ExperimentConfig::from_toml_str("[data.noise]\njiter = 1.0").is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(ExperimentConfig::from_toml_str("alpha_c = 1.5").is_err());
        assert!(ExperimentConfig::from_toml_str("t_p = 1").is_err());
        assert!(ExperimentConfig::from_toml_str("horizons = []").is_err());
        assert!(ExperimentConfig::from_toml_str("[global.schedule]\nlr = -1.0").is_err());
    }

    #[test]
    fn d_ae_propagates() {
        let cfg = ExperimentConfig::from_toml_str("d_ae = 8").unwrap();
        assert_eq!((cfg.completion.d_ae, cfg.local.codec.d_ae), (8, 8));
    }

    #[test]
    fn dotted_overrides() {
        let cfg = ExperimentConfig::default()
            .with_overrides(&["global.pooling_mode=mean".into(), "local.schedule.lr=5e-4".into(), "seed=3".into()])
            .unwrap();
        assert_eq!(cfg.global.pooling_mode, PoolingMode::Mean);
        assert_eq!(cfg.local.schedule.lr, 5e-4);
        assert_eq!(cfg.seed, 3);
        assert!(ExperimentConfig::default().with_overrides(&["nope=1".into()]).is_err());
    }
}
