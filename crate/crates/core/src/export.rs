//! Text serialization of paths and scans.
//!
//! Numbers are written in scientific notation with 17 significant digits, so
//! every `f64` reads back bit for bit.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::FluidPath;
use crate::optimal_path::OptimalPathBundle;

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn check_columns(headers: &[&str], columns: &[&[f64]]) -> Result<usize> {
    if headers.len() != columns.len() || columns.is_empty() {
        return Err(Error::InvalidParams(format!(
            "{} headers for {} columns",
            headers.len(),
            columns.len()
        )));
    }
    let rows = columns[0].len();
    if columns.iter().any(|c| c.len() != rows) {
        return Err(Error::InvalidParams("columns differ in length".into()));
    }
    Ok(rows)
}

fn write_table(headers: &[&str], columns: &[&[f64]], sep: &str, prefix: &str) -> Result<String> {
    let rows = check_columns(headers, columns)?;
    let mut out = format!("{prefix}{}\n", headers.join(sep));
    for r in 0..rows {
        let line: Vec<String> = columns.iter().map(|c| fmt_f64(c[r])).collect();
        let _ = writeln!(out, "{}", line.join(sep));
    }
    Ok(out)
}

/// Comma-separated table with a header row.
pub fn columns_csv(headers: &[&str], columns: &[&[f64]]) -> Result<String> {
    write_table(headers, columns, ",", "")
}

/// Whitespace-separated table with a `#` header line, for plotting tools.
pub fn columns_dat(headers: &[&str], columns: &[&[f64]]) -> Result<String> {
    write_table(headers, columns, " ", "# ")
}

const FLUID_HEADERS: [&str; 4] = ["t", "x1", "x2", "x3"];
const BUNDLE_HEADERS: [&str; 5] = ["t", "x1", "x2", "x3", "kappa1"];

fn fluid_columns(path: &FluidPath) -> [Vec<f64>; 4] {
    [
        path.grid.times().to_vec(),
        path.states.iter().map(|s| s.x1).collect(),
        path.states.iter().map(|s| s.x2).collect(),
        path.states.iter().map(|s| s.x3).collect(),
    ]
}

pub fn fluid_csv(path: &FluidPath) -> String {
    let c = fluid_columns(path);
    columns_csv(&FLUID_HEADERS, &[&c[0], &c[1], &c[2], &c[3]]).expect("consistent columns")
}

pub fn fluid_dat(path: &FluidPath) -> String {
    let c = fluid_columns(path);
    columns_dat(&FLUID_HEADERS, &[&c[0], &c[1], &c[2], &c[3]]).expect("consistent columns")
}

fn bundle_columns(b: &OptimalPathBundle) -> [&[f64]; 5] {
    [b.grid.times(), &b.x1, &b.x2, &b.x3, &b.kappa1]
}

pub fn bundle_csv(b: &OptimalPathBundle) -> String {
    columns_csv(&BUNDLE_HEADERS, &bundle_columns(b)).expect("consistent columns")
}

pub fn bundle_dat(b: &OptimalPathBundle) -> String {
    columns_dat(&BUNDLE_HEADERS, &bundle_columns(b)).expect("consistent columns")
}
