//! Output records: CSV tables, whitespace-separated curve files and JSON
//! envelopes. Floats are always written with 17 significant digits so that
//! identical runs produce identical bytes.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{AsepError, Result};

/// `x` in scientific notation with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

/// Column-major description of a CSV file.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<I: IntoIterator<Item = S>, S: Into<String>>(header: I) -> Self {
        Self { header: header.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }

    /// Whitespace-separated data with a `#` header line, for gnuplot.
    pub fn to_dat(&self) -> String {
        let mut s = format!("# {}\n", self.header.join(" "));
        for r in &self.rows {
            s.push_str(&r.join(" "));
            s.push('\n');
        }
        s
    }
}

/// JSON envelope carrying the full parameter record and seed of a run.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord<P: Serialize, T: Serialize> {
    pub command: String,
    pub version: &'static str,
    pub seed: u64,
    pub params: P,
    pub result: T,
}

impl<P: Serialize, T: Serialize> RunRecord<P, T> {
    pub fn new(command: impl Into<String>, seed: u64, params: P, result: T) -> Self {
        Self { command: command.into(), version: env!("CARGO_PKG_VERSION"), seed, params, result }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| AsepError::Config(e.to_string()))
    }
}

/// Writes `contents` to `dir/name`, creating `dir` as needed.
pub fn write_output(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| AsepError::Config(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| AsepError::Config(format!("{}: {e}", path.display())))
}
