//! Scenario files: JSON with the keys `master_seed`, `regions`, `training`,
//! `telemetry` and `evaluation`.

use std::fs;
use std::path::{Path, PathBuf};

use hfl_core::ScenarioConfig;
use sha2::{Digest, Sha256};

use crate::error::{Result, SimError};

pub const SCENARIO_FILE: &str = "scenario.json";

/// A directory is read through its `scenario.json`.
pub fn resolve(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(SCENARIO_FILE)
    } else {
        path.to_path_buf()
    }
}

pub fn parse_scenario(text: &str, path: &Path) -> Result<ScenarioConfig> {
    let config: ScenarioConfig = serde_json::from_str(text).map_err(|e| SimError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    config.validate().map_err(|source| SimError::Scenario {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(config)
}

pub fn load_scenario(path: &Path) -> Result<ScenarioConfig> {
    let path = resolve(path);
    let text = fs::read_to_string(&path).map_err(|source| SimError::Read {
        path: path.clone(),
        source,
    })?;
    parse_scenario(&text, &path)
}

pub fn to_json(config: &ScenarioConfig) -> String {
    let mut s = serde_json::to_string_pretty(config).expect("scenario serializes");
    s.push('\n');
    s
}

/// Hex SHA-256 of the canonical JSON form, so whitespace and key order in
/// the source file do not matter.
pub fn digest(config: &ScenarioConfig) -> String {
    let canonical = serde_json::to_vec(config).expect("scenario serializes");
    Sha256::digest(&canonical).iter().map(|b| format!("{b:02x}")).collect()
}
