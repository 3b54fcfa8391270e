//! Checkpoint bundle: one directory holding a JSON manifest and a binary
//! parameter file per trained model.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::completion::CompletionModel;
use crate::forecast::{EntangledForecaster, GlobalForecaster, LocalForecaster};
use crate::numerics::checkpoint::{read_params, to_bytes};
use crate::numerics::ParamStore;
use crate::pose::{FrameSize, KdeNorm};

use super::config::ExperimentConfig;
use super::IoError;

pub const BUNDLE_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub file: String,
    /// The full configuration the model was trained with.
    pub config: ExperimentConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleManifest {
    pub schema_version: u32,
    pub d_ae: usize,
    pub t_p: usize,
    pub t_f: usize,
    pub n_local: usize,
    pub n_global: usize,
    pub kde_norm: KdeNorm,
    pub use_completion: bool,
    pub frame_size: FrameSize,
    pub models: BTreeMap<String, ModelEntry>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Completion,
    Local,
    Global,
    Entangled,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Completion => "completion",
            ModelKind::Local => "local",
            ModelKind::Global => "global",
            ModelKind::Entangled => "entangled",
        }
    }
}

pub struct Bundle {
    pub dir: PathBuf,
    pub manifest: BundleManifest,
}

impl Bundle {
    /// Opens `dir`, creating an empty bundle for `config` if it has no
    /// manifest. An existing bundle must agree with `config` on `d_ae`,
    /// `t_p` and `t_f`.
    pub fn open_or_create(dir: &Path, config: &ExperimentConfig, frame_size: FrameSize) -> Result<Self, IoError> {
        if dir.join(MANIFEST_FILE).exists() {
            let b = Self::open(dir)?;
            let m = &b.manifest;
            if (m.d_ae, m.t_p, m.t_f) != (config.d_ae, config.t_p, config.t_f) {
                return Err(IoError::Bundle(format!(
                    "bundle has d_ae={}, t_p={}, t_f={} but the config has {}, {}, {}",
                    m.d_ae, m.t_p, m.t_f, config.d_ae, config.t_p, config.t_f
                )));
            }
            if m.frame_size != frame_size {
                return Err(IoError::Bundle("bundle was trained at a different frame size".into()));
            }
            return Ok(b);
        }
        fs::create_dir_all(dir).map_err(IoError::io(dir))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest: BundleManifest {
                schema_version: BUNDLE_SCHEMA_VERSION,
                d_ae: config.d_ae,
                t_p: config.t_p,
                t_f: config.t_f,
                n_local: config.local.layers,
                n_global: config.global.layers,
                kde_norm: config.kde_norm,
                use_completion: config.use_completion,
                frame_size,
                models: BTreeMap::new(),
            },
        })
    }

    pub fn open(dir: &Path) -> Result<Self, IoError> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(IoError::io(&path))?;
        let manifest: BundleManifest =
            serde_json::from_str(&text).map_err(|e| IoError::Bundle(format!("{}: {e}", path.display())))?;
        if manifest.schema_version != BUNDLE_SCHEMA_VERSION {
            return Err(IoError::Bundle(format!("unsupported bundle schema {}", manifest.schema_version)));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    /// Writes the parameters and records the model in the manifest.
    pub fn store(&mut self, kind: ModelKind, params: &ParamStore, config: &ExperimentConfig) -> Result<(), IoError> {
        let file = format!("{}.ckpt", kind.name());
        let path = self.dir.join(&file);
        fs::write(&path, to_bytes(params)).map_err(IoError::io(&path))?;
        match kind {
            ModelKind::Local => self.manifest.n_local = config.local.layers,
            ModelKind::Global => self.manifest.n_global = config.global.layers,
            _ => {}
        }
        if matches!(kind, ModelKind::Local | ModelKind::Global) {
            self.manifest.use_completion = config.use_completion;
        }
        self.manifest.kde_norm = config.kde_norm;
        self.manifest.models.insert(
            kind.name().to_string(),
            ModelEntry {
                file,
                config: config.clone(),
            },
        );
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest always serializes");
        let mpath = self.dir.join(MANIFEST_FILE);
        fs::write(&mpath, text + "\n").map_err(IoError::io(&mpath))
    }

    fn entry(&self, kind: ModelKind) -> Result<&ModelEntry, IoError> {
        self.manifest
            .models
            .get(kind.name())
            .ok_or_else(|| IoError::Bundle(format!("bundle {} has no {} model", self.dir.display(), kind.name())))
    }

    fn params(&self, kind: ModelKind) -> Result<(ParamStore, &ExperimentConfig), IoError> {
        let e = self.entry(kind)?;
        let path = self.dir.join(&e.file);
        let bytes = fs::read(&path).map_err(IoError::io(&path))?;
        Ok((read_params(bytes.as_slice())?, &e.config))
    }

    pub fn has(&self, kind: ModelKind) -> bool {
        self.manifest.models.contains_key(kind.name())
    }

    pub fn completion(&self) -> Result<CompletionModel, IoError> {
        let (ps, cfg) = self.params(ModelKind::Completion)?;
        Ok(CompletionModel::from_params(ps, cfg.completion.activation, self.manifest.frame_size, cfg.alpha_c)?)
    }

    pub fn local(&self) -> Result<LocalForecaster, IoError> {
        let (ps, cfg) = self.params(ModelKind::Local)?;
        Ok(LocalForecaster::from_params(&ps, &cfg.local, cfg.local.codec.activation, cfg.t_p)?)
    }

    pub fn global(&self) -> Result<GlobalForecaster, IoError> {
        let (ps, cfg) = self.params(ModelKind::Global)?;
        Ok(GlobalForecaster::from_params(ps, &cfg.global, cfg.t_p, self.manifest.frame_size)?)
    }

    pub fn entangled(&self) -> Result<EntangledForecaster, IoError> {
        let (ps, cfg) = self.params(ModelKind::Entangled)?;
        Ok(EntangledForecaster::from_params(ps, &cfg.entangled, cfg.t_p, self.manifest.frame_size)?)
    }

    /// Configuration the given model was trained with.
    pub fn config_of(&self, kind: ModelKind) -> Result<&ExperimentConfig, IoError> {
        Ok(&self.entry(kind)?.config)
    }
}
