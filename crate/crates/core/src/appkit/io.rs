use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    index: usize,
    value: f64,
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

/// Write a trace as `index,value` CSV.
pub fn write_trace_csv(path: &Path, values: &[f64]) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for (index, &value) in values.iter().enumerate() {
        w.serialize(Row { index, value })
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read a trace written by [`write_trace_csv`]. A headerless single-column
/// file of numbers is also accepted.
pub fn read_trace_csv(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trace_csv(&text).map_err(|msg| Error::Format {
        path: path.to_path_buf(),
        msg,
    })
}

fn parse_trace_csv(text: &str) -> std::result::Result<Vec<f64>, String> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut values = Vec::new();
    let mut column = None;
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| e.to_string())?;
        if line == 0 {
            if let Some(pos) = rec.iter().position(|f| f.eq_ignore_ascii_case("value")) {
                column = Some(pos);
                continue;
            }
        }
        let col = *column.get_or_insert(rec.len().saturating_sub(1));
        let field = rec
            .get(col)
            .ok_or_else(|| format!("row {} has no column {col}", line + 1))?;
        let v: f64 = field
            .parse()
            .map_err(|_| format!("row {}: {field:?} is not a number", line + 1))?;
        if !v.is_finite() {
            return Err(format!("row {}: non-finite value", line + 1));
        }
        values.push(v);
    }
    if values.is_empty() {
        return Err("no samples".into());
    }
    Ok(values)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}
