//! Declared layouts of every file the commands emit, and a checker.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Col {
    Int,
    Float,
    /// Float or empty.
    OptFloat,
    /// `true`, `false` or empty.
    OptBool,
    Text,
}

const KELLY: &[(&str, Col)] = &[("gamma", Col::Float), ("g", Col::Float)];
const EXPONENT: &[(&str, Col)] = &[
    ("index", Col::Int),
    ("p", Col::Float),
    ("gamma", Col::Float),
    ("kappa", Col::Float),
    ("kappa_min", Col::OptFloat),
    ("structure", Col::Text),
    ("rho_neg", Col::OptFloat),
    ("rho_pos", Col::OptFloat),
    ("rho_0", Col::OptFloat),
    ("alpha", Col::OptFloat),
    ("summable", Col::OptBool),
    ("error", Col::Text),
];
const DENSITY: &[(&str, Col)] = &[("log_x", Col::Float), ("value", Col::Float)];
const MASS_TRACE: &[(&str, Col)] = &[
    ("step", Col::Int),
    ("mass", Col::Float),
    ("truncation_mass", Col::Float),
];
const TURNOVER: &[(&str, Col)] = &[
    ("round_a", Col::Int),
    ("round_b", Col::Int),
    ("jaccard", Col::Float),
    ("fraction_replaced", Col::Float),
];
const TENURE: &[(&str, Col)] = &[("tenure_rounds", Col::Int), ("count", Col::Int)];
const RUIN: &[(&str, Col)] = &[
    ("round", Col::Int),
    ("ruin_fraction", Col::Float),
    ("rebirths", Col::Int),
];

pub(crate) const KELLY_CSV: &str = "kelly.csv";
pub(crate) const KELLY_JSON: &str = "kelly_summary.json";
pub(crate) const EXPONENT_CSV: &str = "exponent.csv";
pub(crate) const EXPONENT_JSON: &str = "exponent.json";
pub(crate) const MASS_TRACE_CSV: &str = "mass_trace.csv";
pub(crate) const DENSITY_FINAL_CSV: &str = "density_final.csv";
pub(crate) const TAIL_FIT_JSON: &str = "tail_fit.json";
pub(crate) const REPORT_JSON: &str = "report.json";
pub(crate) const RUIN_CSV: &str = "ruin.csv";

pub(crate) fn density_checkpoint_name(step: usize) -> String {
    format!("density_step_{step:06}.csv")
}

pub(crate) fn turnover_name(q: f64) -> String {
    format!("turnover_q{q}.csv")
}

pub(crate) fn tenure_name(q: f64) -> String {
    format!("tenure_q{q}.csv")
}

enum Layout {
    Csv(&'static [(&'static str, Col)]),
    Json(&'static [&'static str]),
}

fn layout(name: &str) -> Option<Layout> {
    let csv = |cols| Some(Layout::Csv(cols));
    match name {
        KELLY_CSV => csv(KELLY),
        EXPONENT_CSV => csv(EXPONENT),
        MASS_TRACE_CSV => csv(MASS_TRACE),
        RUIN_CSV => csv(RUIN),
        KELLY_JSON => Some(Layout::Json(&[
            "config",
            "gamma_star",
            "gamma_zero",
            "g_at_star",
        ])),
        EXPONENT_JSON => Some(Layout::Json(&["config", "rows", "failures"])),
        TAIL_FIT_JSON => Some(Layout::Json(&["config", "steps", "final_mass", "tail_fit"])),
        REPORT_JSON => Some(Layout::Json(&[
            "config",
            "seed",
            "snapshots",
            "ruin",
            "circulation",
        ])),
        n if n.starts_with("density_") && n.ends_with(".csv") => csv(DENSITY),
        n if n.starts_with("turnover_q") && n.ends_with(".csv") => csv(TURNOVER),
        n if n.starts_with("tenure_q") && n.ends_with(".csv") => csv(TENURE),
        _ => None,
    }
}

fn schema_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Schema {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn cell_ok(col: Col, s: &str) -> bool {
    match col {
        Col::Int => s.parse::<u64>().is_ok(),
        Col::Float => s.parse::<f64>().is_ok(),
        Col::OptFloat => s.is_empty() || s.parse::<f64>().is_ok(),
        Col::OptBool => matches!(s, "" | "true" | "false"),
        Col::Text => true,
    }
}

fn check_csv(path: &Path, cols: &[(&str, Col)]) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.contains(&b'\r') {
        return Err(schema_err(path, "carriage return in CSV"));
    }
    let mut rdr = csv::Reader::from_reader(bytes.as_slice());
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let expect: Vec<&str> = cols.iter().map(|c| c.0).collect();
    if header != expect {
        return Err(schema_err(
            path,
            format!("header {header:?}, expected {expect:?}"),
        ));
    }
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        for ((name, col), cell) in cols.iter().zip(rec.iter()) {
            if !cell_ok(*col, cell) {
                return Err(schema_err(
                    path,
                    format!("row {}: bad {name} `{cell}`", line + 1),
                ));
            }
        }
    }
    Ok(())
}

fn check_json(path: &Path, keys: &[&str]) -> Result<()> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| schema_err(path, e.to_string()))?;
    let obj = v
        .as_object()
        .ok_or_else(|| schema_err(path, "top level is not an object"))?;
    if let Some(k) = keys.iter().find(|k| !obj.contains_key(**k)) {
        return Err(schema_err(path, format!("missing key `{k}`")));
    }
    Ok(())
}

/// Checks one emitted file against its declared layout.
pub fn check_file(path: &Path) -> Result<()> {
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or_default();
    match layout(name) {
        Some(Layout::Csv(cols)) => check_csv(path, cols),
        Some(Layout::Json(keys)) => check_json(path, keys),
        None => Err(schema_err(path, "no declared layout for this file name")),
    }
}

/// Checks every recognised file in `dir`, returning the checked paths in
/// name order. Unrecognised files are skipped.
pub fn check_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| layout(n).is_some())
        })
        .collect();
    paths.sort();
    for p in &paths {
        check_file(p)?;
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_bad_files() {
        let dir = tempfile::tempdir().unwrap();
        let ok = dir.path().join("kelly.csv");
        fs::write(&ok, "gamma,g\n0.1,2.0e-2\n").unwrap();
        check_file(&ok).unwrap();

        let bad_header = dir.path().join("mass_trace.csv");
        fs::write(&bad_header, "step,mass\n0,1\n").unwrap();
        assert!(matches!(check_file(&bad_header), Err(Error::Schema { .. })));

        let bad_cell = dir.path().join("ruin.csv");
        fs::write(&bad_cell, "round,ruin_fraction,rebirths\n1.5,0,0\n").unwrap();
        assert!(check_file(&bad_cell).is_err());

        let crlf = dir.path().join("tenure_q0.1.csv");
        fs::write(&crlf, "tenure_rounds,count\r\n1,2\r\n").unwrap();
        assert!(check_file(&crlf).is_err());

        let json = dir.path().join("report.json");
        fs::write(&json, r#"{"config": {}, "seed": 1}"#).unwrap();
        assert!(check_file(&json).is_err());

        fs::write(dir.path().join("notes.txt"), "x").unwrap();
        fs::remove_file(&bad_header).unwrap();
        fs::remove_file(&bad_cell).unwrap();
        fs::remove_file(&crlf).unwrap();
        fs::remove_file(&json).unwrap();
        assert_eq!(check_dir(dir.path()).unwrap(), vec![ok]);
    }
}
