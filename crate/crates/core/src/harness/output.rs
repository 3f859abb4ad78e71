//! CSV tables and atomic file output.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::series::TimeSeries;

/// A numeric table with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(header: Vec<String>) -> Self {
        Self {
            header,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.header.len() {
            return Err(Error::invalid("row", "width differs from header"));
        }
        if let Some(v) = row.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid("row", format!("non-finite value {v}")));
        }
        self.rows.push(row);
        Ok(())
    }

    /// UTF-8, LF line endings, shortest round-trip decimal for every value.
    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }
}

/// Writes `contents` to `path` through a temporary file in the same
/// directory followed by a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Reads a series CSV: the `time` column (or the first) against the `mean`
/// column (or the second).
pub fn read_series_csv(path: &Path) -> Result<TimeSeries> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let header = reader
        .headers()
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        .clone();
    if header.len() < 2 {
        return Err(Error::Config(format!(
            "{}: need at least two columns",
            path.display()
        )));
    }
    let time_col = header.iter().position(|h| h == "time").unwrap_or(0);
    let value_col = header
        .iter()
        .position(|h| h == "mean")
        .unwrap_or(if time_col == 0 { 1 } else { 0 });
    let (mut times, mut values) = (Vec::new(), Vec::new());
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let parse = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| {
                    Error::Config(format!("{}: row {}: bad number", path.display(), line + 2))
                })
        };
        times.push(parse(time_col)?);
        values.push(parse(value_col)?);
    }
    TimeSeries::new(times, values)
}
