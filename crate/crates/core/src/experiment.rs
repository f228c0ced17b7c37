use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::grid::LandscapeGrid;

/// A named landscape grid plus free-form string metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub id: String,
    pub name: String,
    pub metadata: BTreeMap<String, String>,
    pub grid: LandscapeGrid,
    pub created_at: DateTime<Utc>,
}

impl Experiment {
    pub fn new(id: impl Into<String>, grid: LandscapeGrid) -> Self {
        let id = id.into();
        Self {
            name: id.clone(),
            id,
            metadata: BTreeMap::new(),
            grid,
            created_at: Utc::now(),
        }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.metadata.insert(key.into(), value.to_string());
        self
    }
}

/// Metadata key under which range warnings are stored.
pub const WARNINGS_KEY: &str = "warnings";

/// Warns about experiments whose x-y plane differs from the first one's.
///
/// Returns `(id, message)` pairs; identical planes produce nothing.
pub fn plane_warnings(experiments: &[Experiment]) -> Vec<(String, String)> {
    let Some(first) = experiments.first() else {
        return Vec::new();
    };
    experiments[1..]
        .iter()
        .filter(|e| !e.grid.same_plane(&first.grid))
        .map(|e| {
            (
                e.id.clone(),
                format!(
                    "x-y plane differs from experiment `{}` ({}x{} over [{}, {}]x[{}, {}])",
                    first.id,
                    first.grid.resolution_x(),
                    first.grid.resolution_y(),
                    first.grid.x_values()[0],
                    first.grid.x_values().last().unwrap(),
                    first.grid.y_values()[0],
                    first.grid.y_values().last().unwrap(),
                ),
            )
        })
        .collect()
}

/// Appends `message` to the `warnings` metadata entry (newline separated).
pub fn push_warning(metadata: &mut BTreeMap<String, String>, message: &str) {
    metadata
        .entry(WARNINGS_KEY.to_string())
        .and_modify(|w| {
            if !w.lines().any(|l| l == message) {
                w.push('\n');
                w.push_str(message);
            }
        })
        .or_insert_with(|| message.to_string());
}
