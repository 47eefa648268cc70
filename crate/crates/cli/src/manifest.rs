//! `manifest.json`: what each stage read and wrote.
//!
//! Stages accumulate in one file per output directory. Nothing time-dependent
//! is recorded, so identical reruns leave the manifest byte-identical.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use evload_core::Result;
use serde::{Deserialize, Serialize};

pub const FILE_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub out_dir: String,
    pub stages: BTreeMap<String, StageRecord>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub config: Option<String>,
    pub seed: u64,
    pub inputs: Vec<String>,
    /// Paths relative to the output directory.
    pub outputs: Vec<String>,
}

/// Tracks the files one stage writes.
#[derive(Debug)]
pub struct Stage {
    name: &'static str,
    out_dir: PathBuf,
    record: StageRecord,
}

impl Stage {
    pub fn new(name: &'static str, out_dir: &Path, config: Option<&Path>, seed: u64) -> Result<Self> {
        std::fs::create_dir_all(out_dir)?;
        Ok(Self {
            name,
            out_dir: out_dir.to_path_buf(),
            record: StageRecord {
                config: config.map(|p| p.display().to_string()),
                seed,
                ..Default::default()
            },
        })
    }

    pub fn input(&mut self, path: &Path) {
        self.record.inputs.push(path.display().to_string());
    }

    /// Write `bytes` to `file` inside the output directory and record it.
    pub fn write(&mut self, file: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.out_dir.join(file);
        std::fs::write(&path, bytes)?;
        self.record.outputs.push(file.to_string());
        Ok(path)
    }

    /// Merge this stage into the directory's manifest.
    pub fn finish(self) -> Result<()> {
        let path = self.out_dir.join(FILE_NAME);
        let mut manifest = match std::fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text).unwrap_or_default(),
            Err(_) => RunManifest::default(),
        };
        manifest.tool_version = env!("CARGO_PKG_VERSION").to_string();
        manifest.out_dir = self.out_dir.display().to_string();
        manifest.stages.insert(self.name.to_string(), self.record);
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}
