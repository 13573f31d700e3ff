//! Training configuration files: TOML with the fields of [`TrainConfig`] at
//! the top level. Missing fields take their defaults; unknown fields are
//! rejected.

use std::fs;
use std::path::{Path, PathBuf};

use omnisplat_core::trainer::{ConfigError, TrainConfig};

#[derive(Debug, thiserror::Error)]
pub enum ConfigFileError {
    #[error("cannot read config {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{}: {source}", path.display())]
    Invalid { path: PathBuf, source: ConfigError },
}

pub fn parse_config(text: &str, path: &Path) -> Result<TrainConfig, ConfigFileError> {
    let cfg: TrainConfig = toml::from_str(text).map_err(|e| ConfigFileError::Parse {
        path: path.to_path_buf(),
        line: e.span().map_or(1, |s| {
            text[..s.start.min(text.len())].matches('\n').count() + 1
        }),
        message: e.message().to_string(),
    })?;
    cfg.validate().map_err(|source| ConfigFileError::Invalid {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<TrainConfig, ConfigFileError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigFileError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text, path)
}

pub fn to_toml(cfg: &TrainConfig) -> String {
    toml::to_string(cfg).expect("config serializes")
}
