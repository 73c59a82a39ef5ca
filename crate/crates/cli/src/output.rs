//! CSV artifacts. Numbers are written as `{:.16e}`, which round-trips every
//! finite `f64`; non-finite values are written as `NaN`, `inf` or `-inf`.

use std::path::Path;

use laplace_core::net::format_f64;

use crate::error::{CliError, Result};

/// One CSV cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Num(v) if v.is_nan() => "NaN".to_string(),
            Cell::Num(v) if v.is_infinite() => if *v > 0.0 { "inf" } else { "-inf" }.to_string(),
            Cell::Num(v) => format_f64(*v),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
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

/// Writes a header and mixed text/number rows.
pub fn write_table(path: &Path, header: &[impl AsRef<str>], rows: &[Vec<Cell>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header.iter().map(|h| h.as_ref()))?;
    for row in rows {
        if row.len() != header.len() {
            return Err(CliError::config(format!("row has {} cells, header has {}", row.len(), header.len())));
        }
        w.write_record(row.iter().map(Cell::render))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes an all-numeric table.
pub fn write_csv(path: &Path, header: &[impl AsRef<str>], rows: &[Vec<f64>]) -> Result<()> {
    let rows: Vec<Vec<Cell>> = rows.iter().map(|r| r.iter().map(|&v| Cell::Num(v)).collect()).collect();
    write_table(path, header, &rows)
}

/// Reads an all-numeric table.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| CliError::config(format!("{}: `{s}`: {e}", path.display()))))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}
