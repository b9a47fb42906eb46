//! Versioned CSV tables, one row per sweep point.

use crate::error::{CliError, CliResult};
use std::collections::BTreeMap;
use std::io::Write;

pub const SCHEMA_VERSION: &str = "1";

/// Columns always present, in this order.
const FIXED: [&str; 3] = ["schema_version", "parameter", "value"];

/// Output name selecting every per-file column.
const PER_FILE: &str = "per_file";

#[derive(Debug, Default, Clone)]
pub struct Row {
    cells: Vec<(String, String, bool)>,
}

impl Row {
    pub fn new(parameter: &str, value: &str) -> Self {
        let mut r = Self::default();
        r.text("schema_version", SCHEMA_VERSION);
        r.text("parameter", parameter);
        r.text("value", value);
        r
    }

    pub fn text(&mut self, col: &str, v: &str) {
        self.cells.push((col.to_string(), v.to_string(), false));
    }

    pub fn num(&mut self, col: &str, v: f64) {
        self.cells.push((col.to_string(), format!("{v}"), false));
    }

    pub fn per_file(&mut self, prefix: &str, values: &BTreeMap<usize, f64>) {
        for (n, v) in values {
            self.cells.push((format!("{prefix}_{n}"), format!("{v}"), true));
        }
    }
}

/// Writes rows under the union of their columns, keeping first-seen order.
/// A non-empty `outputs` keeps only the named columns; `per_file` selects all
/// per-file columns.
pub fn write_csv<W: Write>(out: W, rows: &[Row], outputs: &[String]) -> CliResult<()> {
    let mut header: Vec<(String, bool)> = Vec::new();
    for row in rows {
        for (col, _, per_file) in &row.cells {
            if !header.iter().any(|(c, _)| c == col) {
                header.push((col.clone(), *per_file));
            }
        }
    }
    for o in outputs {
        let known = o == PER_FILE || header.iter().any(|(c, _)| c == o);
        if !known {
            let avail: Vec<&str> = header
                .iter()
                .filter(|(c, pf)| !pf && !FIXED.contains(&c.as_str()))
                .map(|(c, _)| c.as_str())
                .collect();
            return Err(CliError::invalid(format!(
                "unknown output '{o}'; available: {}, {PER_FILE}",
                avail.join(", ")
            )));
        }
    }
    if !outputs.is_empty() {
        header.retain(|(c, pf)| {
            FIXED.contains(&c.as_str()) || outputs.iter().any(|o| o == c || (*pf && o == PER_FILE))
        });
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header.iter().map(|(c, _)| c.as_str()))?;
    for row in rows {
        let rec = header.iter().map(|(c, _)| {
            row.cells
                .iter()
                .find(|(col, _, _)| col == c)
                .map_or("", |(_, v, _)| v.as_str())
        });
        w.write_record(rec)?;
    }
    w.flush().map_err(|e| CliError::Io {
        path: "output".into(),
        source: e,
    })?;
    Ok(())
}
