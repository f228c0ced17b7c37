//! The four-column grid CSV: `id,x,y,loss`.
//!
//! Export writes the header `id,x,y,loss`, then one row per grid point,
//! grouped by experiment (in the order given), each grid in y-major then x
//! order. Numbers use Rust's shortest round-trip formatting (`{:?}`), and
//! non-finite losses are written `NaN`, `Infinity`, or `-Infinity`.
//!
//! Parsing accepts the four required columns in any order plus any extra
//! columns. Rows are grouped by `id`; each group must form a complete
//! rectangular grid. Experiments come back sorted by id.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use thiserror::Error;

use crate::experiment::Experiment;
use crate::grid::LandscapeGrid;

pub const HEADER: [&str; 4] = ["id", "x", "y", "loss"];

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("empty CSV: no header")]
    Empty,
    #[error("CSV has a header but no data rows")]
    NoRows,
    #[error("missing required column `{column}`")]
    MissingColumn { column: &'static str },
    #[error("column `{column}` appears more than once in the header")]
    DuplicateColumn { column: String },
    #[error("line {line}, column `{column}`: cannot parse `{value}` as a number")]
    Number {
        line: u64,
        column: &'static str,
        value: String,
    },
    #[error("line {line}, column `{column}`: coordinate `{value}` must be finite")]
    NonFiniteCoordinate {
        line: u64,
        column: &'static str,
        value: String,
    },
    #[error("line {line}, column `id`: id must be nonempty")]
    EmptyId { line: u64 },
    #[error("line {line}: duplicate point ({x}, {y}) for id `{id}` (first seen on line {first_line})")]
    DuplicatePoint {
        line: u64,
        first_line: u64,
        id: String,
        x: f64,
        y: f64,
    },
    #[error("id `{id}`: incomplete grid, missing point ({x}, {y})")]
    IncompleteGrid { id: String, x: f64, y: f64 },
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CsvError {
    /// 1-based line the error refers to, when it has one.
    pub fn line(&self) -> Option<u64> {
        match self {
            CsvError::Number { line, .. }
            | CsvError::NonFiniteCoordinate { line, .. }
            | CsvError::EmptyId { line }
            | CsvError::DuplicatePoint { line, .. }
            | CsvError::Malformed { line, .. } => Some(*line),
            _ => None,
        }
    }
}

/// Formats a float so it parses back to the identical bits (NaN payloads aside).
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v == f64::INFINITY {
        "Infinity".into()
    } else if v == f64::NEG_INFINITY {
        "-Infinity".into()
    } else {
        format!("{v:?}")
    }
}

pub fn parse_float(s: &str) -> Option<f64> {
    match s.trim() {
        "NaN" | "nan" => Some(f64::NAN),
        "Infinity" | "+Infinity" | "inf" => Some(f64::INFINITY),
        "-Infinity" | "-inf" => Some(f64::NEG_INFINITY),
        t => t.parse().ok(),
    }
}

pub fn write_csv<W: Write>(experiments: &[Experiment], out: W) -> Result<(), CsvError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(HEADER).map_err(csv_write_err)?;
    for e in experiments {
        let g = &e.grid;
        for (j, &y) in g.y_values().iter().enumerate() {
            let ys = format_float(y);
            for (i, &x) in g.x_values().iter().enumerate() {
                w.write_record([e.id.as_str(), &format_float(x), &ys, &format_float(g.at(i, j))])
                    .map_err(csv_write_err)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_write_err(e: csv::Error) -> CsvError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CsvError::Io(io),
        other => CsvError::Malformed {
            line: 0,
            message: format!("{other:?}"),
        },
    }
}

pub fn export_csv(experiments: &[Experiment]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_csv(experiments, &mut buf).expect("writing to memory cannot fail");
    buf
}

struct Row {
    line: u64,
    x: f64,
    y: f64,
    loss: f64,
    extras: Vec<String>,
}

pub fn parse_csv<R: Read>(input: R) -> Result<Vec<Experiment>, CsvError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut records = reader.records();

    let header = match records.next() {
        None => return Err(CsvError::Empty),
        Some(r) => r.map_err(malformed)?,
    };
    if header.iter().all(str::is_empty) {
        return Err(CsvError::Empty);
    }
    let mut positions: HashMap<&str, usize> = HashMap::new();
    let mut extra_names = Vec::new();
    let mut extra_positions = Vec::new();
    for (pos, name) in header.iter().enumerate() {
        let name = name.trim_start_matches('\u{feff}');
        if let Some(&required) = HEADER.iter().find(|h| **h == name) {
            if positions.insert(required, pos).is_some() {
                return Err(CsvError::DuplicateColumn { column: name.into() });
            }
        } else {
            if extra_names.iter().any(|n: &String| n == name) {
                return Err(CsvError::DuplicateColumn { column: name.into() });
            }
            extra_names.push(name.to_string());
            extra_positions.push(pos);
        }
    }
    for column in HEADER {
        if !positions.contains_key(column) {
            return Err(CsvError::MissingColumn { column });
        }
    }
    let (id_at, x_at, y_at, loss_at) = (positions["id"], positions["x"], positions["y"], positions["loss"]);

    let mut groups: BTreeMap<String, Vec<Row>> = BTreeMap::new();
    for record in records {
        let record = record.map_err(malformed)?;
        let line = record.position().map_or(0, |p| p.line());
        if record.iter().all(str::is_empty) {
            continue;
        }
        let id = record[id_at].to_string();
        if id.is_empty() {
            return Err(CsvError::EmptyId { line });
        }
        let number = |at: usize, column: &'static str| {
            parse_float(&record[at]).ok_or_else(|| CsvError::Number {
                line,
                column,
                value: record[at].to_string(),
            })
        };
        let coordinate = |at: usize, column: &'static str| {
            let v = number(at, column)?;
            if !v.is_finite() {
                return Err(CsvError::NonFiniteCoordinate {
                    line,
                    column,
                    value: record[at].to_string(),
                });
            }
            // -0.0 and 0.0 are one grid coordinate
            Ok(if v == 0.0 { 0.0 } else { v })
        };
        let row = Row {
            line,
            x: coordinate(x_at, "x")?,
            y: coordinate(y_at, "y")?,
            loss: number(loss_at, "loss")?,
            extras: extra_positions.iter().map(|&p| record[p].to_string()).collect(),
        };
        groups.entry(id).or_default().push(row);
    }
    if groups.is_empty() {
        return Err(CsvError::NoRows);
    }
    groups
        .into_iter()
        .map(|(id, rows)| build_experiment(id, rows, &extra_names))
        .collect()
}

fn malformed(e: csv::Error) -> CsvError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CsvError::Io(io),
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => CsvError::Malformed {
            line,
            message: format!("expected {expected_len} fields, found {len}"),
        },
        csv::ErrorKind::Utf8 { err, .. } => CsvError::Malformed {
            line,
            message: format!("invalid UTF-8: {err}"),
        },
        other => CsvError::Malformed {
            line,
            message: format!("{other:?}"),
        },
    }
}

fn sorted_unique(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

fn build_experiment(id: String, rows: Vec<Row>, extra_names: &[String]) -> Result<Experiment, CsvError> {
    let xs = sorted_unique(rows.iter().map(|r| r.x).collect());
    let ys = sorted_unique(rows.iter().map(|r| r.y).collect());
    let mut slot: HashMap<(u64, u64), usize> = HashMap::with_capacity(rows.len());
    for (k, r) in rows.iter().enumerate() {
        if let Some(&first) = slot.get(&(r.x.to_bits(), r.y.to_bits())) {
            return Err(CsvError::DuplicatePoint {
                line: r.line,
                first_line: rows[first].line,
                id,
                x: r.x,
                y: r.y,
            });
        }
        slot.insert((r.x.to_bits(), r.y.to_bits()), k);
    }
    let mut order = Vec::with_capacity(xs.len() * ys.len());
    for &y in &ys {
        for &x in &xs {
            match slot.get(&(x.to_bits(), y.to_bits())) {
                Some(&k) => order.push(k),
                None => return Err(CsvError::IncompleteGrid { id, x, y }),
            }
        }
    }
    let losses = order.iter().map(|&k| rows[k].loss).collect();
    let grid = LandscapeGrid::new(xs, ys, losses).expect("axes are sorted, unique, and finite");

    let mut experiment = Experiment::new(id, grid);
    for (c, name) in extra_names.iter().enumerate() {
        let first = &rows[order[0]].extras[c];
        let value = if order.iter().all(|&k| &rows[k].extras[c] == first) {
            first.clone()
        } else {
            order.iter().map(|&k| rows[k].extras[c].as_str()).collect::<Vec<_>>().join(";")
        };
        if name == "name" {
            experiment.name = value;
        } else {
            experiment.metadata.insert(name.clone(), value);
        }
    }
    Ok(experiment)
}
