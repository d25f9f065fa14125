//! Plain CSV matrices with a mandatory header row.
//!
//! Values are written with Rust's shortest round-trip formatting, so a write/read cycle
//! reproduces every `f64` bit for bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// `f1,...,fn` column names.
pub fn feature_header(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("f{i}")).collect()
}

pub fn write_matrix<W: Write>(out: W, header: &[String], m: ArrayView2<f64>) -> Result<()> {
    if header.len() != m.ncols() {
        return Err(Error::shape(format!("{} column names for {} columns", header.len(), m.ncols())));
    }
    let mut out = BufWriter::new(out);
    writeln!(out, "{}", header.join(","))?;
    for row in m.rows() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Returns the header and the values.
pub fn read_matrix<R: BufRead>(input: R) -> Result<(Vec<String>, Array2<f64>)> {
    let mut lines = input.lines();
    let header: Vec<String> = match lines.next() {
        Some(line) => line?.trim().split(',').map(|s| s.trim().to_string()).collect(),
        None => return Err(Error::Format("empty CSV file".into())),
    };
    if header.iter().any(|h| h.is_empty()) {
        return Err(Error::Format("CSV header has an empty column name".into()));
    }
    let cols = header.len();
    let mut values = Vec::new();
    let mut rows = 0;
    for (k, line) in lines.enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let before = values.len();
        for cell in line.split(',') {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("row {}: `{cell}` is not a number", k + 1)))?;
            values.push(v);
        }
        if values.len() - before != cols {
            return Err(Error::Format(format!("row {} has {} cells, header has {cols}", k + 1, values.len() - before)));
        }
        rows += 1;
    }
    let m = Array2::from_shape_vec((rows, cols), values).expect("row lengths checked");
    Ok((header, m))
}

pub fn save_matrix(path: &Path, header: &[String], m: ArrayView2<f64>) -> Result<()> {
    write_matrix(File::create(path)?, header, m)
}

pub fn load_matrix(path: &Path) -> Result<(Vec<String>, Array2<f64>)> {
    read_matrix(BufReader::new(File::open(path)?))
}

/// Parse `"1,2.5,-3"` into numbers.
pub fn parse_list<T: std::str::FromStr>(text: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| Error::Config(format!("`{s}` is not a valid list entry"))))
        .collect()
}
