//! Durable experiment store: one grid CSV plus one JSON sidecar per experiment.
//!
//! Layout under the data directory:
//!
//! ```text
//! <data-dir>/experiments/<encoded-id>.csv    the grid, in the 4-column format
//! <data-dir>/experiments/<encoded-id>.json   id, name, created_at, seq, stats, metadata
//! <data-dir>/*.csv                           loose files imported on open
//! ```
//!
//! Ids are encoded for the filesystem by keeping `[A-Za-z0-9_-]` and
//! percent-encoding every other byte of the UTF-8 id.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use crate::analysis::{summary_stats, SummaryStats};
use crate::csvio::{parse_csv, write_csv, CsvError};
use crate::experiment::{push_warning, Experiment};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("experiment `{0}` not found")]
    NotFound(String),
    #[error("experiment `{0}` already exists")]
    Conflict(String),
    #[error("experiment id must be nonempty")]
    EmptyId,
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: CsvError },
    #[error("{path}: bad sidecar: {source}")]
    Sidecar {
        path: PathBuf,
        source: serde_json::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// What `list` reports per experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub id: String,
    pub name: String,
    pub created_at: DateTime<Utc>,
    /// Insertion sequence; breaks `created_at` ties.
    pub seq: u64,
    /// Absent when the grid has no finite values.
    pub stats: Option<SummaryStats>,
    pub metadata: BTreeMap<String, String>,
    pub plane: Plane,
}

/// Axis extents and resolutions of a grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub x_min: f64,
    pub x_max: f64,
    pub resolution_x: usize,
    pub y_min: f64,
    pub y_max: f64,
    pub resolution_y: usize,
}

impl Plane {
    fn of(e: &Experiment) -> Self {
        let (xs, ys) = (e.grid.x_values(), e.grid.y_values());
        Plane {
            x_min: xs[0],
            x_max: xs[xs.len() - 1],
            resolution_x: xs.len(),
            y_min: ys[0],
            y_max: ys[ys.len() - 1],
            resolution_y: ys.len(),
        }
    }
}

pub struct ExperimentStore {
    dir: PathBuf,
    index: RwLock<HashMap<String, ExperimentSummary>>,
    id_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    next_seq: Mutex<u64>,
}

/// Outcome of importing loose CSV files on open.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct ImportReport {
    pub imported: Vec<String>,
    pub skipped: Vec<String>,
}

impl ExperimentStore {
    /// Opens (creating if needed) a store rooted at `dir`.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        Ok(Self::open_with_import(dir)?.0)
    }

    /// Like [`open`](Self::open), also importing `<dir>/*.csv` files whose
    /// ids are not yet stored. Unreadable files and taken ids are skipped.
    pub fn open_with_import(dir: impl AsRef<Path>) -> Result<(Self, ImportReport), StoreError> {
        let dir = dir.as_ref().to_path_buf();
        let exp_dir = dir.join("experiments");
        fs::create_dir_all(&exp_dir).map_err(io_err(&exp_dir))?;
        let mut index = HashMap::new();
        let mut max_seq = 0;
        for entry in fs::read_dir(&exp_dir).map_err(io_err(&exp_dir))? {
            let path = entry.map_err(io_err(&exp_dir))?.path();
            if path.extension().is_some_and(|e| e == "json") {
                let text = fs::read_to_string(&path).map_err(io_err(&path))?;
                let summary: ExperimentSummary =
                    serde_json::from_str(&text).map_err(|source| StoreError::Sidecar { path: path.clone(), source })?;
                max_seq = max_seq.max(summary.seq + 1);
                index.insert(summary.id.clone(), summary);
            }
        }
        let store = Self {
            dir,
            index: RwLock::new(index),
            id_locks: Mutex::new(HashMap::new()),
            next_seq: Mutex::new(max_seq),
        };
        let report = store.import_loose()?;
        Ok((store, report))
    }

    fn import_loose(&self) -> Result<ImportReport, StoreError> {
        let mut report = ImportReport::default();
        let mut files: Vec<PathBuf> = fs::read_dir(&self.dir)
            .map_err(io_err(&self.dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "csv"))
            .collect();
        files.sort();
        for path in files {
            let parsed = fs::File::open(&path)
                .map_err(CsvError::from)
                .and_then(parse_csv);
            let experiments = match parsed {
                Ok(e) => e,
                Err(e) => {
                    warn!(path = %path.display(), error = %e, "skipping unreadable CSV");
                    report.skipped.push(path.display().to_string());
                    continue;
                }
            };
            let source = path.file_name().unwrap().to_string_lossy().to_string();
            for e in experiments {
                let id = e.id.clone();
                match self.put(e.with_meta("source_file", &source)) {
                    Ok(()) => report.imported.push(id),
                    Err(StoreError::Conflict(_)) => report.skipped.push(id),
                    Err(other) => return Err(other),
                }
            }
        }
        if !report.imported.is_empty() {
            info!(count = report.imported.len(), "imported experiments from loose CSV files");
        }
        Ok(report)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn paths(&self, id: &str) -> (PathBuf, PathBuf) {
        let stem = encode_id(id);
        let base = self.dir.join("experiments");
        (base.join(format!("{stem}.csv")), base.join(format!("{stem}.json")))
    }

    fn id_lock(&self, id: &str) -> Arc<Mutex<()>> {
        self.id_locks
            .lock()
            .unwrap()
            .entry(id.to_string())
            .or_default()
            .clone()
    }

    /// Stores a new experiment; an existing id is a conflict.
    ///
    /// If the grid's x-y plane differs from the oldest stored experiment's,
    /// a warning is added to its metadata.
    pub fn put(&self, mut experiment: Experiment) -> Result<(), StoreError> {
        if experiment.id.is_empty() {
            return Err(StoreError::EmptyId);
        }
        let lock = self.id_lock(&experiment.id);
        let _guard = lock.lock().unwrap();
        if self.index.read().unwrap().contains_key(&experiment.id) {
            return Err(StoreError::Conflict(experiment.id));
        }
        let plane = Plane::of(&experiment);
        if let Some(oldest) = self.list().into_iter().next() {
            if oldest.plane != plane {
                let msg = format!("x-y plane differs from experiment `{}`", oldest.id);
                push_warning(&mut experiment.metadata, &msg);
            }
        }
        let seq = {
            let mut next = self.next_seq.lock().unwrap();
            *next += 1;
            *next - 1
        };
        let summary = ExperimentSummary {
            id: experiment.id.clone(),
            name: experiment.name.clone(),
            created_at: experiment.created_at,
            seq,
            stats: summary_stats(&experiment.grid).ok(),
            metadata: experiment.metadata.clone(),
            plane,
        };
        let (csv_path, meta_path) = self.paths(&experiment.id);
        write_atomic(&csv_path, |f| {
            write_csv(std::slice::from_ref(&experiment), f).map_err(|e| match e {
                CsvError::Io(io) => io,
                other => io::Error::other(other.to_string()),
            })
        })?;
        let json = serde_json::to_vec_pretty(&summary).map_err(|source| StoreError::Sidecar {
            path: meta_path.clone(),
            source,
        })?;
        write_atomic(&meta_path, |f| io::Write::write_all(f, &json))?;
        self.index.write().unwrap().insert(summary.id.clone(), summary);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<Experiment, StoreError> {
        let summary = self
            .index
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| StoreError::NotFound(id.to_string()))?;
        let (csv_path, _) = self.paths(id);
        let file = match fs::File::open(&csv_path) {
            Ok(f) => f,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(StoreError::NotFound(id.to_string())),
            Err(e) => return Err(io_err(&csv_path)(e)),
        };
        let mut parsed = parse_csv(io::BufReader::new(file)).map_err(|source| StoreError::Csv {
            path: csv_path.clone(),
            source,
        })?;
        let found = parsed.pop().filter(|e| e.id == id).ok_or_else(|| StoreError::Csv {
            path: csv_path.clone(),
            source: CsvError::NoRows,
        })?;
        Ok(Experiment {
            id: summary.id,
            name: summary.name,
            metadata: summary.metadata,
            grid: found.grid,
            created_at: summary.created_at,
        })
    }

    pub fn summary(&self, id: &str) -> Result<ExperimentSummary, StoreError> {
        self.index
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| StoreError::NotFound(id.to_string()))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.read().unwrap().contains_key(id)
    }

    /// All experiments, oldest first.
    pub fn list(&self) -> Vec<ExperimentSummary> {
        let mut all: Vec<ExperimentSummary> = self.index.read().unwrap().values().cloned().collect();
        all.sort_by(|a, b| a.created_at.cmp(&b.created_at).then(a.seq.cmp(&b.seq)));
        all
    }

    /// Removes an experiment. Unknown ids report `NotFound` and change nothing.
    pub fn delete(&self, id: &str) -> Result<(), StoreError> {
        let lock = self.id_lock(id);
        let _guard = lock.lock().unwrap();
        if self.index.write().unwrap().remove(id).is_none() {
            return Err(StoreError::NotFound(id.to_string()));
        }
        let (csv_path, meta_path) = self.paths(id);
        for path in [meta_path, csv_path] {
            match fs::remove_file(&path) {
                Ok(()) => {}
                Err(e) if e.kind() == io::ErrorKind::NotFound => {}
                Err(e) => return Err(io_err(&path)(e)),
            }
        }
        Ok(())
    }
}

fn write_atomic(path: &Path, write: impl FnOnce(&mut fs::File) -> io::Result<()>) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    write(&mut f).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn encode_id(id: &str) -> String {
    let mut out = String::with_capacity(id.len());
    for b in id.bytes() {
        if b.is_ascii_alphanumeric() || b == b'_' || b == b'-' {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}
