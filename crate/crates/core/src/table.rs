//! Delimited text matrices: a header row of column identifiers and a first
//! column of row identifiers. Comma or tab, detected from the header line.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TableError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Malformed {
        path: PathBuf,
        line: usize,
        msg: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delimiter {
    Comma,
    Tab,
}

impl Delimiter {
    pub fn detect(header: &str) -> Self {
        if header.contains('\t') {
            Delimiter::Tab
        } else {
            Delimiter::Comma
        }
    }

    fn char(self) -> char {
        match self {
            Delimiter::Comma => ',',
            Delimiter::Tab => '\t',
        }
    }
}

/// A labeled numeric matrix; `None` marks an unobserved cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub row_ids: Vec<String>,
    pub col_ids: Vec<String>,
    pub values: Vec<Option<f64>>,
}

impl Table {
    pub fn get(&self, r: usize, c: usize) -> Option<f64> {
        self.values[r * self.col_ids.len() + c]
    }
}

fn read_text(path: &Path) -> Result<String, TableError> {
    fs::read_to_string(path).map_err(|source| TableError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn is_missing(cell: &str) -> bool {
    matches!(cell, "" | "NA" | "NaN" | "nan" | "NAN" | "null")
}

/// Reads the non-empty lines of a delimited file as string fields, header
/// included.
pub fn read_records(path: &Path) -> Result<Vec<Vec<String>>, TableError> {
    let text = read_text(path)?;
    let Some(header) = text.lines().find(|l| !l.trim().is_empty()) else {
        return Ok(Vec::new());
    };
    let delim = Delimiter::detect(header).char();
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(delim).map(|f| f.trim().to_string()).collect())
        .collect())
}

pub fn read_table(path: &Path) -> Result<Table, TableError> {
    let text = read_text(path)?;
    let malformed = |line: usize, msg: String| TableError::Malformed {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| malformed(1, "empty file".into()))?;
    let delim = Delimiter::detect(header).char();
    let col_ids: Vec<String> = header
        .split(delim)
        .skip(1)
        .map(|s| s.trim().to_string())
        .collect();
    if col_ids.is_empty() {
        return Err(malformed(1, "header has no data columns".into()));
    }
    let mut row_ids = Vec::new();
    let mut values = Vec::new();
    for (lineno, line) in lines {
        let fields: Vec<&str> = line.split(delim).map(str::trim).collect();
        if fields.len() != col_ids.len() + 1 {
            return Err(malformed(
                lineno + 1,
                format!(
                    "expected {} fields, found {}",
                    col_ids.len() + 1,
                    fields.len()
                ),
            ));
        }
        row_ids.push(fields[0].to_string());
        for (c, cell) in fields[1..].iter().enumerate() {
            if is_missing(cell) {
                values.push(None);
            } else {
                let v: f64 = cell.parse().map_err(|_| {
                    malformed(
                        lineno + 1,
                        format!("column {}: not a number: {cell:?}", c + 2),
                    )
                })?;
                values.push(if v.is_nan() { None } else { Some(v) });
            }
        }
    }
    Ok(Table {
        row_ids,
        col_ids,
        values,
    })
}

/// Formats a matrix as tab-separated text. `fmt` renders one cell.
pub fn format_table<F>(corner: &str, row_ids: &[String], col_ids: &[String], mut cell: F) -> String
where
    F: FnMut(usize, usize) -> String,
{
    let mut out = String::new();
    out.push_str(corner);
    for c in col_ids {
        out.push('\t');
        out.push_str(c);
    }
    out.push('\n');
    for (r, id) in row_ids.iter().enumerate() {
        out.push_str(id);
        for c in 0..col_ids.len() {
            let _ = write!(out, "\t{}", cell(r, c));
        }
        out.push('\n');
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<(), TableError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|source| TableError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
    }
    fs::write(path, text).map_err(|source| TableError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comma_and_tab_parse_alike() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.tsv");
        fs::write(&a, "id,x,y\nr1,1.5,\nr2,NA,-2\n").unwrap();
        fs::write(&b, "id\tx\ty\nr1\t1.5\t\nr2\tNA\t-2\n").unwrap();
        let ta = read_table(&a).unwrap();
        assert_eq!(ta, read_table(&b).unwrap());
        assert_eq!(ta.get(0, 0), Some(1.5));
        assert_eq!(ta.get(0, 1), None);
        assert_eq!(ta.get(1, 0), None);
        assert_eq!(ta.get(1, 1), Some(-2.0));
    }

    #[test]
    fn malformed_numbers_report_line() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        fs::write(&a, "id,x\nr1,1\nr2,abc\n").unwrap();
        match read_table(&a) {
            Err(TableError::Malformed { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            read_table(Path::new("/nonexistent/x.tsv")),
            Err(TableError::Io { .. })
        ));
    }
}
