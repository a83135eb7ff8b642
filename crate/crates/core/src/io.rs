//! Readers and writers: dense CSV/TSV and MatrixMarket matrices, label
//! files, distance matrices, Newick trees and the iteration log.
//!
//! Reals are written in the shortest form that parses back to the same
//! binary64 value.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::{DataMatrix, DistanceMatrix};
use crate::tree::WeightedBinaryTree;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub matrix: DataMatrix,
    pub row_names: Option<Vec<String>>,
    pub col_names: Option<Vec<String>>,
    pub row_classes: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(matrix: DataMatrix) -> Self {
        Dataset {
            matrix,
            row_names: None,
            col_names: None,
            row_classes: None,
        }
    }

    pub fn with_row_classes(mut self, classes: Vec<String>) -> Result<Self> {
        if classes.len() != self.matrix.nrows() {
            return Err(Error::Shape(format!(
                "{} class labels for {} rows",
                classes.len(),
                self.matrix.nrows()
            )));
        }
        self.row_classes = Some(classes);
        Ok(self)
    }
}

/// Shortest round-trip decimal form; exponent notation for very large or
/// very small magnitudes.
pub fn format_real(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-5..1e16).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Reads a comma- or tab-separated matrix. The delimiter is a tab when the
/// first line contains one. With `has_header` the first row holds column
/// names. A first column is taken as row names when none of its body cells
/// parses as a number. Negative, non-finite and non-numeric cells are
/// rejected with their coordinates.
pub fn read_dense(path: impl AsRef<Path>, has_header: bool) -> Result<Dataset> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let delimiter = if text.lines().next().is_some_and(|l| l.contains('\t')) {
        b'\t'
    } else {
        b','
    };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let mut records: Vec<(usize, Vec<String>)> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        records.push((line, rec.iter().map(str::to_string).collect()));
    }
    let header = if has_header {
        if records.is_empty() {
            return Err(parse_err(path, 1, "missing header row"));
        }
        Some(records.remove(0))
    } else {
        None
    };
    if records.is_empty() {
        return Err(parse_err(path, 1, "no data rows"));
    }

    let row_names_present = records.iter().all(|(_, r)| r[0].parse::<f64>().is_err());
    let skip = usize::from(row_names_present);
    let width = records[0].1.len() - skip;
    if width == 0 {
        return Err(parse_err(path, records[0].0, "no numeric columns"));
    }
    let n = records.len();
    let mut values = Array2::zeros((n, width));
    let mut row_names = Vec::new();
    for (i, (line, rec)) in records.iter().enumerate() {
        if rec.len() - skip != width {
            return Err(parse_err(
                path,
                *line,
                format!("ragged row {i}: {} values, expected {width}", rec.len() - skip),
            ));
        }
        if row_names_present {
            row_names.push(rec[0].clone());
        }
        for (j, cell) in rec[skip..].iter().enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(path, *line, format!("non-numeric cell {cell:?} at row {i}, column {j}")))?;
            if !v.is_finite() {
                return Err(parse_err(path, *line, format!("non-finite value at row {i}, column {j}")));
            }
            if v < 0.0 {
                return Err(parse_err(path, *line, format!("negative value {v} at row {i}, column {j}")));
            }
            values[[i, j]] = v;
        }
    }
    let col_names = match header {
        None => None,
        Some((line, h)) => {
            let names = if h.len() == width + 1 {
                h[1..].to_vec()
            } else if h.len() == width {
                h
            } else {
                return Err(parse_err(path, line, format!("header has {} names for {width} columns", h.len())));
            };
            Some(names)
        }
    };
    Ok(Dataset {
        matrix: DataMatrix::new(values)?,
        row_names: row_names_present.then_some(row_names),
        col_names,
        row_classes: None,
    })
}

/// Writes a dense CSV, with a header row when column names are present and a
/// leading name column when row names are present.
pub fn write_dense(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let x = dataset.matrix.as_array();
    let mut writer = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    if let Some(cols) = &dataset.col_names {
        let lead = dataset.row_names.as_ref().map(|_| "");
        writer
            .write_record(lead.into_iter().chain(cols.iter().map(String::as_str)))
            .map_err(csv_err)?;
    }
    for (i, row) in x.rows().into_iter().enumerate() {
        let name = dataset.row_names.as_ref().map(|names| names[i].clone());
        writer
            .write_record(name.into_iter().chain(row.iter().map(|&v| format_real(v))))
            .map_err(csv_err)?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

const MM_HEADER: &str = "%%MatrixMarket matrix coordinate real general";

/// Reads a MatrixMarket coordinate file (`real` or `integer`, `general`).
/// Indices are 1-based; duplicate coordinates are summed.
pub fn read_sparse(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let (_, banner) = lines.next().ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let fields: Vec<String> = banner.split_whitespace().map(str::to_lowercase).collect();
    let ok = fields.len() == 5
        && fields[0] == "%%matrixmarket"
        && fields[1] == "matrix"
        && fields[2] == "coordinate"
        && (fields[3] == "real" || fields[3] == "integer")
        && fields[4] == "general";
    if !ok {
        return Err(parse_err(path, 1, format!("unsupported header {banner:?}")));
    }
    let mut body = lines.filter(|(_, l)| !l.is_empty() && !l.starts_with('%'));
    let (dim_line, dims) = body.next().ok_or_else(|| parse_err(path, 2, "missing size line"))?;
    let dims: Vec<usize> = dims
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| parse_err(path, dim_line, format!("bad size field {t:?}"))))
        .collect::<Result<_>>()?;
    if dims.len() != 3 {
        return Err(parse_err(path, dim_line, "size line needs rows, columns and entry count"));
    }
    let (n, m, nnz) = (dims[0], dims[1], dims[2]);
    let mut values = Array2::zeros((n, m));
    let mut seen = 0;
    for (line, entry) in body {
        let t: Vec<&str> = entry.split_whitespace().collect();
        if t.len() != 3 {
            return Err(parse_err(path, line, "expected `row col value`"));
        }
        let idx = |s: &str, bound: usize, what: &str| -> Result<usize> {
            let k: usize = s.parse().map_err(|_| parse_err(path, line, format!("bad {what} index {s:?}")))?;
            if k == 0 || k > bound {
                return Err(parse_err(path, line, format!("{what} index {k} out of range 1..={bound}")));
            }
            Ok(k - 1)
        };
        let i = idx(t[0], n, "row")?;
        let j = idx(t[1], m, "column")?;
        let v: f64 = t[2].parse().map_err(|_| parse_err(path, line, format!("bad value {:?}", t[2])))?;
        if !v.is_finite() || v < 0.0 {
            return Err(parse_err(path, line, format!("invalid value {v} at ({}, {})", i + 1, j + 1)));
        }
        values[[i, j]] += v;
        seen += 1;
    }
    if seen != nnz {
        return Err(parse_err(path, dim_line, format!("declared {nnz} entries, found {seen}")));
    }
    Ok(Dataset::new(DataMatrix::new(values)?))
}

/// Writes the nonzero entries of `matrix` in MatrixMarket coordinate form.
pub fn write_sparse(path: impl AsRef<Path>, matrix: &DataMatrix) -> Result<()> {
    let x = matrix.as_array();
    let entries: Vec<((usize, usize), f64)> = x.indexed_iter().filter(|(_, &v)| v != 0.0).map(|(ij, &v)| (ij, v)).collect();
    let mut out = format!("{MM_HEADER}\n{} {} {}\n", x.nrows(), x.ncols(), entries.len());
    for ((i, j), v) in entries {
        let _ = writeln!(out, "{} {} {}", i + 1, j + 1, format_real(v));
    }
    write_text(path.as_ref(), &out)
}

/// Dense CSV without a header.
pub fn write_distance_matrix(matrix: &DistanceMatrix, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for row in matrix.as_array().rows() {
        let cells: Vec<String> = row.iter().map(|&v| format_real(v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    write_text(path.as_ref(), &out)
}

pub fn read_distance_matrix(path: impl AsRef<Path>) -> Result<DistanceMatrix> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split([',', '\t'])
            .map(|c| {
                c.trim()
                    .parse::<f64>()
                    .map_err(|_| parse_err(path, i + 1, format!("non-numeric cell {c:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let n = rows.len();
    if let Some(i) = rows.iter().position(|r| r.len() != n) {
        return Err(parse_err(path, i + 1, format!("row has {} values in a {n}×{n} matrix", rows[i].len())));
    }
    let values = Array2::from_shape_fn((n, n), |(i, j)| rows[i][j]);
    DistanceMatrix::new(values)
}

/// Newick with leaves named by `names` when given, else by label index.
pub fn write_tree(tree: &WeightedBinaryTree, names: Option<&[String]>, path: impl AsRef<Path>) -> Result<()> {
    let mut text = match names {
        Some(n) => {
            if n.len() != tree.leaf_count() {
                return Err(Error::Shape(format!("{} names for {} leaves", n.len(), tree.leaf_count())));
            }
            tree.to_newick_named(n)
        }
        None => tree.to_newick(),
    };
    text.push('\n');
    write_text(path.as_ref(), &text)
}

/// Reads a Newick tree; leaves are labelled in order of appearance and their
/// names returned alongside.
pub fn read_tree(path: impl AsRef<Path>) -> Result<(WeightedBinaryTree, Vec<String>)> {
    WeightedBinaryTree::from_newick(read_text(path.as_ref())?.trim())
}

/// One label per line.
pub fn write_labels(labels: &[String], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for l in labels {
        out.push_str(l);
        out.push('\n');
    }
    write_text(path.as_ref(), &out)
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<String>> {
    Ok(read_text(path.as_ref())?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

/// Line-delimited JSON: an optional header record followed by one record
/// per entry of `records`.
pub fn write_history<H: Serialize, R: Serialize>(path: impl AsRef<Path>, header: Option<&H>, records: &[R]) -> Result<()> {
    let mut out = String::new();
    if let Some(h) = header {
        out.push_str(&json_line(h));
    }
    for r in records {
        out.push_str(&json_line(r));
    }
    write_text(path.as_ref(), &out)
}

fn json_line<T: Serialize>(value: &T) -> String {
    let mut line = serde_json::to_string(value).expect("diagnostics serialize to JSON");
    line.push('\n');
    line
}
