use std::path::{Path, PathBuf};

use anim3d_core::error::CoreError;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Contents of a `--config` TOML file. Every key is optional; keys that are
/// present override the matching command-line flags.
///
/// ```toml
/// seed = 7
/// asset = "asset.bin"
/// output_dir = "run"
///
/// [generator]   # GeneratorConfig keys, e.g. d_model, n_tsa_layers
/// [train]       # TrainConfig keys, e.g. stage1_steps, lr
/// [smoother]    # q, r
/// [metrics]     # frame_norm = "stacked" | "per_vertex_mean"
/// ```
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: Option<u64>,
    pub asset: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub generator: Option<toml::Table>,
    pub train: Option<toml::Table>,
    pub smoother: Option<toml::Table>,
    pub metrics: Option<toml::Table>,
}

pub const SEED_ENV: &str = "ANIM3D_SEED";

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CoreError> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        let config: PipelineConfig =
            toml::from_str(&text).map_err(|e| CoreError::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load_opt(path: Option<&Path>) -> Result<Self, CoreError> {
        path.map_or_else(|| Ok(PipelineConfig::default()), PipelineConfig::load)
    }

    /// Checks that referenced input paths exist.
    pub fn validate(&self) -> Result<(), CoreError> {
        if let Some(asset) = &self.asset {
            if !asset.is_file() {
                return Err(CoreError::Config(format!("asset {} does not exist", asset.display())));
            }
        }
        Ok(())
    }

    /// Config seed, else the flag, else `ANIM3D_SEED`, else 0.
    pub fn seed(&self, flag: Option<u64>) -> Result<u64, CoreError> {
        if let Some(s) = self.seed.or(flag) {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| CoreError::Config(format!("{SEED_ENV}={v} is not an unsigned integer"))),
            Err(_) => Ok(0),
        }
    }

    pub fn asset(&self, flag: Option<PathBuf>) -> Option<PathBuf> {
        self.asset.clone().or(flag)
    }

    pub fn output_dir(&self, flag: PathBuf) -> PathBuf {
        self.output_dir.clone().unwrap_or(flag)
    }
}

/// Replaces the fields of `base` named in `table`.
pub fn overlay<T: Serialize + DeserializeOwned>(base: &T, table: Option<&toml::Table>, section: &str) -> Result<T, CoreError> {
    let Some(table) = table else {
        let text = toml::to_string(base).map_err(|e| CoreError::Config(format!("[{section}]: {e}")))?;
        return toml::from_str(&text).map_err(|e| CoreError::Config(format!("[{section}]: {e}")));
    };
    let mut merged = toml::Table::try_from(base).map_err(|e| CoreError::Config(format!("[{section}]: {e}")))?;
    for (k, v) in table {
        merged.insert(k.clone(), v.clone());
    }
    toml::Value::Table(merged)
        .try_into()
        .map_err(|e| CoreError::Config(format!("[{section}]: {e}")))
}
