//! Plain-text numeric I/O: headerless CSV with 17 significant digits.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::sequence::FeatureSequence;

/// Format a float so that parsing it back yields the identical bits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Rows of the matrix as CSV lines.
pub fn matrix_to_csv(m: &Array2<f64>) -> String {
    let mut out = String::new();
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        let _ = writeln!(out, "{}", line.join(","));
    }
    out
}

pub fn parse_csv_matrix(text: &str, path: &Path) -> Result<Array2<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: ln + 1,
                msg: e.to_string(),
            })?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: ln + 1,
                    msg: format!("expected {} columns, found {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: "no data rows".into(),
        });
    }
    let (r, c) = (rows.len(), rows[0].len());
    Ok(Array2::from_shape_fn((r, c), |(i, j)| rows[i][j]))
}

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_string(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn create_dir_all(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Read a sequence file: rows are timesteps, columns are features.
pub fn read_sequence(path: &Path) -> Result<FeatureSequence> {
    let m = parse_csv_matrix(&read_to_string(path)?, path)?;
    FeatureSequence::new(m.t().to_owned())
}

pub fn write_sequence(path: &Path, seq: &FeatureSequence) -> Result<()> {
    write_string(path, &matrix_to_csv(&seq.data().t().to_owned()))
}
