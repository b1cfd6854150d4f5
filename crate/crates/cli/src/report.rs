//! Experiment reports and their on-disk form: `report.json`, one CSV per
//! series and `manifest.json`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// A CSV cell: integers are written as-is, floats with 17 significant digits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Int(i64),
    Float(f64),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl std::fmt::Display for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Cell::Int(v) => write!(f, "{v}"),
            Cell::Float(v) if v.is_finite() => write!(f, "{v:.16e}"),
            Cell::Float(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Series {
    pub fn new(name: &str, header: &str) -> Self {
        Series { name: name.into(), header: header.split(',').map(String::from).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(Cell::to_string).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub kind: String,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub result: serde_json::Value,
    pub series: Vec<Series>,
    /// Set when the experiment stopped early; earlier results are kept.
    pub error: Option<String>,
}

impl ExperimentReport {
    pub fn new(kind: &str) -> Self {
        ExperimentReport {
            kind: kind.into(),
            passed: true,
            checks: Vec::new(),
            result: serde_json::Value::Object(Default::default()),
            series: Vec::new(),
            error: None,
        }
    }

    pub fn check(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.passed &= passed;
        self.checks.push(Check { name: name.into(), passed, detail: detail.into() });
    }

    /// Stores `value` under `key` in the result object.
    pub fn set(&mut self, key: &str, value: impl Serialize) -> Result<()> {
        let v = serde_json::to_value(value).with_context(|| format!("serializing result `{key}`"))?;
        if let serde_json::Value::Object(map) = &mut self.result {
            map.insert(key.into(), v);
        }
        Ok(())
    }

    pub fn fail(&mut self, err: &anyhow::Error) {
        self.passed = false;
        self.error = Some(format!("{err:#}"));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub kind: String,
    pub seed: u64,
    pub threads: usize,
    pub config: String,
    pub config_sha256: String,
    pub wall_clock_seconds: f64,
    pub passed: bool,
    pub checks: Vec<(String, bool)>,
    pub files: Vec<String>,
}

impl RunManifest {
    pub fn new(report: &ExperimentReport, config: &str, seed: u64, threads: usize, wall_clock_seconds: f64) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            kind: report.kind.clone(),
            seed,
            threads,
            config: config.into(),
            config_sha256: config_hash(config),
            wall_clock_seconds,
            passed: report.passed,
            checks: report.checks.iter().map(|c| (c.name.clone(), c.passed)).collect(),
            files: Vec::new(),
        }
    }
}

pub fn config_hash(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    f.write_all(contents).with_context(|| format!("writing {}", path.display()))
}

/// Writes `report.json` and one `<name>.csv` per series; returns the file
/// names written.
pub fn write_report(report: &ExperimentReport, dir: &Path) -> Result<Vec<String>> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
    let mut files = vec!["report.json".to_string()];
    let json = serde_json::to_string_pretty(report).context("serializing report")?;
    write_file(&dir.join("report.json"), json.as_bytes())?;
    for s in &report.series {
        let name = format!("{}.csv", s.name);
        write_file(&dir.join(&name), s.to_csv().as_bytes())?;
        files.push(name);
    }
    Ok(files)
}

pub fn write_manifest(manifest: &RunManifest, dir: &Path) -> Result<PathBuf> {
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(manifest).context("serializing manifest")?;
    write_file(&path, json.as_bytes())?;
    Ok(path)
}

pub fn read_report(path: &Path) -> Result<ExperimentReport> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}
