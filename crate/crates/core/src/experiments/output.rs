//! Tabular results and their CSV / JSON serialization.
//!
//! Floats are written with 17 significant digits in scientific notation so
//! that files round-trip exactly and are byte-stable across reruns.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    Int(i64),
    Float(f64),
    Empty,
}

impl Cell {
    pub fn render(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Int(i) => i.to_string(),
            Cell::Float(v) => format_float(*v),
            Cell::Empty => String::new(),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Float(v) => Some(*v),
            Cell::Int(i) => Some(*i as f64),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Cell::Text(s) => Some(s),
            _ => None,
        }
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}
impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}
impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}
impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

/// A named table destined for one CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    /// File stem.
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    /// Columns holding wall-clock measurements; excluded from reproducibility checks.
    pub volatile: Vec<String>,
}

impl Table {
    pub fn new<S: Into<String>>(name: impl Into<String>, header: impl IntoIterator<Item = S>) -> Self {
        Self {
            name: name.into(),
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
            volatile: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len(), "row width for table {}", self.name);
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Values of column `name` in rows where every `(column, value)` filter matches.
    pub fn select(&self, name: &str, filters: &[(&str, &str)]) -> Vec<f64> {
        let Some(col) = self.column(name) else { return Vec::new() };
        let filter_cols: Vec<(usize, &str)> = filters
            .iter()
            .filter_map(|(c, v)| self.column(c).map(|i| (i, *v)))
            .collect();
        if filter_cols.len() != filters.len() {
            return Vec::new();
        }
        self.rows
            .iter()
            .filter(|row| filter_cols.iter().all(|(i, v)| row[*i].render() == *v))
            .filter_map(|row| row[col].as_f64())
            .collect()
    }

    /// CSV text. When `mask_volatile` is set, volatile columns are blanked.
    pub fn to_csv(&self, mask_volatile: bool) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        let masked: Vec<bool> = self
            .header
            .iter()
            .map(|h| mask_volatile && self.volatile.contains(h))
            .collect();
        for row in &self.rows {
            w.write_record(
                row.iter()
                    .zip(&masked)
                    .map(|(c, m)| if *m { String::new() } else { c.render() }),
            )?;
        }
        let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join(format!("{}.csv", self.name));
        fs::write(&path, self.to_csv(false)?)?;
        Ok(path)
    }
}

/// Header of a summary table: `experiment, system, controller, <axes>, mean, stderr, ci95`.
pub fn summary_header(axes: &[&str]) -> Vec<String> {
    let mut h = vec!["experiment".to_string(), "system".into(), "controller".into()];
    h.extend(axes.iter().map(|a| a.to_string()));
    h.extend(["mean", "stderr", "ci95"].map(String::from));
    h
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub experiment: String,
    pub system: String,
    pub master_seed: u64,
    pub trial_seeds: Vec<u64>,
    pub config: serde_json::Value,
    pub artifacts: Vec<String>,
    pub optimizer_flags: usize,
}

impl Manifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}
