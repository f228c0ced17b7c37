//! Run manifests: the resolved configuration of one command invocation,
//! hashes of what it read and wrote, and how long it took.
//!
//! `replay` re-executes the recorded configuration; `replay --verify` does so
//! into a scratch directory and compares output hashes with the recorded ones.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::case_study::CaseStudyRun;
use crate::commands::{ClipRun, ComputeRun, TrainRun};
use crate::failure::{invalid, Classify, CmdResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", content = "config", rename_all = "kebab-case")]
pub enum RunConfig {
    Train(TrainRun),
    Compute(ComputeRun),
    Clip(ClipRun),
    CaseStudy(CaseStudyRun),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

impl FileRecord {
    pub fn of(path: &Path) -> CmdResult<Self> {
        let data = fs::read(path).runtime_ctx(format!("reading {}", path.display()))?;
        Ok(Self {
            path: path.to_path_buf(),
            sha256: sha256_hex(&data),
            bytes: data.len() as u64,
        })
    }
}

pub fn sha256_hex(data: &[u8]) -> String {
    hex::encode(Sha256::digest(data))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    #[serde(flatten)]
    pub run: RunConfig,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub duration_secs: f64,
}

/// Files a command read and wrote.
#[derive(Debug, Default)]
pub struct Produced {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn new(run: RunConfig, produced: &Produced, duration_secs: f64) -> CmdResult<Self> {
        Ok(Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            run,
            inputs: produced.inputs.iter().map(|p| FileRecord::of(p)).collect::<CmdResult<_>>()?,
            outputs: produced.outputs.iter().map(|p| FileRecord::of(p)).collect::<CmdResult<_>>()?,
            duration_secs,
        })
    }

    pub fn write(&self, path: &Path) -> CmdResult<()> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, json + "\n").runtime_ctx(format!("writing {}", path.display()))
    }

    pub fn read(path: &Path) -> CmdResult<Self> {
        let text = fs::read_to_string(path).invalid_ctx(format!("reading {}", path.display()))?;
        serde_json::from_str(&text).invalid_ctx(format!("{}: not a run manifest", path.display()))
    }

    /// Checks that every recorded input still has the recorded content.
    pub fn check_inputs(&self) -> CmdResult<()> {
        for input in &self.inputs {
            let now = FileRecord::of(&input.path).map_err(|_| {
                invalid(format!("recorded input {} is missing", input.path.display()))
            })?;
            if now.sha256 != input.sha256 {
                return Err(invalid(format!(
                    "recorded input {} changed since the run (sha256 {} != {})",
                    input.path.display(),
                    now.sha256,
                    input.sha256
                )));
            }
        }
        Ok(())
    }
}

/// Where a command's manifest goes: beside its main output file.
pub fn manifest_path_for(output: &Path) -> PathBuf {
    let stem = output.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    output.with_file_name(format!("{stem}.manifest.json"))
}
