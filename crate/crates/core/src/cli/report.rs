use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::Result;
use crate::protocol::PhaseTimings;

use super::config::{Command, ExperimentConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_TAMPERED: i32 = 2;

/// Contents of `report.json`.
#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub command: Command,
    pub version: &'static str,
    /// The fully resolved configuration.
    pub config: ExperimentConfig,
    /// Input file name to SHA-256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    pub result: serde_json::Value,
    /// Wall-clock phases; the only field that varies between identical runs.
    pub timings: Option<PhaseTimings>,
}

impl Report {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        s.push('\n');
        Ok(s)
    }

    /// Writes `report.json` plus any side files into `dir`.
    pub fn write(&self, dir: &Path, extra: &[(&str, String)]) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::with_capacity(extra.len() + 1);
        let path = dir.join("report.json");
        std::fs::write(&path, self.to_json()?)?;
        written.push(path);
        for (name, body) in extra {
            let path = dir.join(name);
            std::fs::write(&path, body)?;
            written.push(path);
        }
        Ok(written)
    }
}
