//! Stamped JSON and CSV artifacts.

use crate::config::PipelineConfig;
use crate::CliError;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Stamped<T> {
    pub config_hash: String,
    pub seed: u64,
    pub stage: String,
    pub payload: T,
}

pub fn path(cfg: &PipelineConfig, name: &str) -> PathBuf {
    cfg.out_dir.join(name)
}

pub fn write_json<T: Serialize>(cfg: &PipelineConfig, name: &str, stage: &str, payload: T) -> Result<PathBuf, CliError> {
    let p = path(cfg, name);
    let doc = Stamped { config_hash: cfg.hash(), seed: cfg.seed, stage: stage.to_string(), payload };
    let mut text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::malformed(p.clone(), e))?;
    text.push('\n');
    std::fs::write(&p, text)?;
    Ok(p)
}

pub fn read_json<T: DeserializeOwned>(p: &Path) -> Result<Stamped<T>, CliError> {
    let text = std::fs::read_to_string(p).map_err(|_| CliError::Missing(p.to_path_buf()))?;
    serde_json::from_str(&text).map_err(|e| CliError::malformed(p.to_path_buf(), e))
}

/// CSV body preceded by `# key=value` provenance lines.
pub fn write_csv(cfg: &PipelineConfig, name: &str, extra: &[(&str, String)], body: &str) -> Result<PathBuf, CliError> {
    let p = path(cfg, name);
    let mut text = format!("# config_hash={}\n# seed={}\n", cfg.hash(), cfg.seed);
    for (k, v) in extra {
        text.push_str(&format!("# {k}={v}\n"));
    }
    text.push_str(body);
    std::fs::write(&p, text)?;
    Ok(p)
}
