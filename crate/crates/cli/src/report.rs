//! CSV artifacts: fixed column order per subcommand, a fingerprint and
//! tool-version column in every file, floats at 17 significant digits, and a
//! hard error on NaN (never serialized).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("refusing to serialize a non-finite value in column `{column}` of {file}")]
    NonFinite { file: String, column: String },
}

#[derive(Debug, Clone)]
pub enum Cell {
    F(f64),
    I(i64),
    S(String),
    /// Empty cell (for undefined ratios such as 0/0).
    Empty,
}

pub struct CsvWriter {
    dir: PathBuf,
    fingerprint: String,
    version: String,
}

impl CsvWriter {
    pub fn new(dir: &Path, fingerprint: &str) -> Self {
        Self {
            dir: dir.to_path_buf(),
            fingerprint: fingerprint.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn write(
        &self,
        name: &str,
        headers: &[&str],
        rows: &[Vec<Cell>],
    ) -> Result<PathBuf, ReportError> {
        let path = self.dir.join(name);
        let to_io = |source| ReportError::Io { path: path.display().to_string(), source };
        fs::create_dir_all(&self.dir).map_err(to_io)?;
        let mut out = String::new();
        out.push_str("fingerprint,tool_version");
        for h in headers {
            out.push(',');
            out.push_str(h);
        }
        out.push('\n');
        for row in rows {
            assert_eq!(row.len(), headers.len(), "row width mismatch in {name}");
            out.push_str(&self.fingerprint);
            out.push(',');
            out.push_str(&self.version);
            for (cell, header) in row.iter().zip(headers) {
                out.push(',');
                match cell {
                    Cell::F(v) => {
                        if !v.is_finite() {
                            return Err(ReportError::NonFinite {
                                file: name.to_string(),
                                column: header.to_string(),
                            });
                        }
                        out.push_str(&format_float(*v));
                    }
                    Cell::I(v) => out.push_str(&v.to_string()),
                    Cell::S(s) => out.push_str(s),
                    Cell::Empty => {}
                }
            }
            out.push('\n');
        }
        let mut file = fs::File::create(&path).map_err(to_io)?;
        file.write_all(out.as_bytes()).map_err(to_io)?;
        Ok(path)
    }
}

/// 17 significant digits, locale-free.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// One asserted invariant of a subcommand run.
#[derive(Debug, Clone)]
pub struct CheckRow {
    pub check: String,
    pub value: f64,
    pub threshold: f64,
    /// "<=", ">=", ">," "finite", "true"
    pub relation: &'static str,
    pub pass: bool,
}

impl CheckRow {
    pub fn le(check: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self { check: check.into(), value, threshold, relation: "<=", pass: value <= threshold }
    }
    pub fn ge(check: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self { check: check.into(), value, threshold, relation: ">=", pass: value >= threshold }
    }
    pub fn gt(check: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self { check: check.into(), value, threshold, relation: ">", pass: value > threshold }
    }
    pub fn finite(check: impl Into<String>, value: f64) -> Self {
        Self { check: check.into(), value, threshold: f64::MAX, relation: "finite", pass: value.is_finite() }
    }
    pub fn boolean(check: impl Into<String>, ok: bool) -> Self {
        Self {
            check: check.into(),
            value: if ok { 1.0 } else { 0.0 },
            threshold: 1.0,
            relation: "true",
            pass: ok,
        }
    }
}

/// Writes checks.csv (always) and failures.csv (only when something failed);
/// returns whether all checks passed.
pub fn write_checks(writer: &CsvWriter, checks: &[CheckRow]) -> Result<bool, ReportError> {
    let headers = ["check", "value", "relation", "threshold", "pass"];
    let to_rows = |list: &[&CheckRow]| -> Vec<Vec<Cell>> {
        list.iter()
            .map(|c| {
                vec![
                    Cell::S(c.check.clone()),
                    if c.value.is_finite() { Cell::F(c.value) } else { Cell::S("inf".into()) },
                    Cell::S(c.relation.to_string()),
                    Cell::F(c.threshold),
                    Cell::S(c.pass.to_string()),
                ]
            })
            .collect()
    };
    let all: Vec<&CheckRow> = checks.iter().collect();
    writer.write("checks.csv", &headers, &to_rows(&all))?;
    let failed: Vec<&CheckRow> = checks.iter().filter(|c| !c.pass).collect();
    if !failed.is_empty() {
        writer.write("failures.csv", &headers, &to_rows(&failed))?;
    }
    Ok(failed.is_empty())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_only_for_empty_rows_and_nan_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let w = CsvWriter::new(dir.path(), "abcd1234");
        let p = w.write("empty.csv", &["a", "b"], &[]).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        assert_eq!(text, "fingerprint,tool_version,a,b\n");
        let err = w.write("bad.csv", &["a"], &[vec![Cell::F(f64::NAN)]]).unwrap_err();
        assert!(matches!(err, ReportError::NonFinite { .. }));
    }

    #[test]
    fn float_formatting_17_digits() {
        assert_eq!(format_float(std::f64::consts::PI), "3.1415926535897931e0");
        assert_eq!(format_float(0.1), "1.0000000000000001e-1");
    }

    #[test]
    fn fingerprint_in_every_row() {
        let dir = tempfile::tempdir().unwrap();
        let w = CsvWriter::new(dir.path(), "ff00");
        let p = w
            .write("r.csv", &["x"], &[vec![Cell::I(1)], vec![Cell::Empty]])
            .unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("ff00,"));
        assert!(lines[2].ends_with(','));
    }
}
