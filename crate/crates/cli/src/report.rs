//! Report assembly and on-disk layout.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};

use crate::Failure;

/// A CSV side file: name (without extension), header, rows.
pub struct Table {
    pub name: String,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

pub struct Report {
    pub experiment: &'static str,
    pub config: Value,
    /// Resolved flags, written to `config.resolved.txt`.
    pub flags: Vec<(String, String)>,
    pub seeds: Vec<u64>,
    pub metrics: Value,
    pub runs: Value,
    pub traces: Vec<(String, Vec<f64>)>,
    pub tables: Vec<Table>,
}

impl Report {
    pub fn new(experiment: &'static str) -> Self {
        Report {
            experiment,
            config: json!({}),
            flags: Vec::new(),
            seeds: Vec::new(),
            metrics: json!({}),
            runs: json!([]),
            traces: Vec::new(),
            tables: Vec::new(),
        }
    }

    /// JSON body; keys come out sorted, so the text is stable.
    pub fn to_json(&self, wall_clock: f64) -> Value {
        json!({
            "experiment": self.experiment,
            "version": env!("CARGO_PKG_VERSION"),
            "config": self.config,
            "seeds": self.seeds,
            "metrics": self.metrics,
            "runs": self.runs,
            "wall_clock_seconds": wall_clock,
        })
    }
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Refuses a non-empty existing directory unless `force`.
pub fn prepare_dir(dir: &Path, force: bool) -> Result<(), Failure> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir).map(|mut d| d.next().is_some()).unwrap_or(true);
        if non_empty && !force {
            return Err(Failure::Validation(format!("{} exists; pass --force to overwrite", dir.display())));
        }
    }
    Ok(())
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| Failure::Runtime(format!("{}: {e}", path.display()))
}

fn mkdir(path: PathBuf) -> Result<PathBuf, Failure> {
    fs::create_dir_all(&path).map_err(io(&path))?;
    Ok(path)
}

pub fn emit(report: &Report, dir: &Path, started: Instant) -> Result<(), Failure> {
    mkdir(dir.to_path_buf())?;
    if !report.traces.is_empty() {
        let traces = mkdir(dir.join("traces"))?;
        for (name, trace) in &report.traces {
            localw2::optim::write_trace(&traces.join(format!("{name}.csv")), trace)?;
        }
    }
    if !report.tables.is_empty() {
        let curves = mkdir(dir.join("curves"))?;
        for t in &report.tables {
            let mut body = t.header.join(",");
            body.push('\n');
            for row in &t.rows {
                body.push_str(&row.join(","));
                body.push('\n');
            }
            let path = curves.join(format!("{}.csv", t.name));
            fs::write(&path, body).map_err(io(&path))?;
        }
    }
    let mut resolved = format!("# localw2 {}\n", report.experiment);
    for (k, v) in &report.flags {
        resolved.push_str(&format!("{k} = {v}\n"));
    }
    let path = dir.join("config.resolved.txt");
    fs::write(&path, resolved).map_err(io(&path))?;

    let body = serde_json::to_string_pretty(&report.to_json(started.elapsed().as_secs_f64()))
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    let path = dir.join("report.json");
    fs::write(&path, body + "\n").map_err(io(&path))?;
    Ok(())
}
