//! Haar bases induced by binary trees, and the wavelet filter built on them.
//!
//! Signals are rows indexed by leaf label. The basis has one constant column
//! and one zero-mean wavelet per internal node, supported on that node's
//! leaves and constant on each child's leaves.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tree::WeightedBinaryTree;
use crate::twd::LeafHistogram;

/// Rows whose shifted ℓ1 mass falls below this are rejected.
pub const MIN_HISTOGRAM_MASS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMeta {
    /// Depth of the splitting node with the root at level 1; 0 for the
    /// constant column.
    pub level: usize,
    /// Splitting node; `None` for the constant column.
    pub node: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct HaarBasis {
    vectors: Array2<f64>,
    meta: Vec<ColumnMeta>,
}

impl HaarBasis {
    /// `m × m`; columns are basis vectors, rows are leaf labels.
    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    pub fn column_meta(&self) -> &[ColumnMeta] {
        &self.meta
    }

    pub fn size(&self) -> usize {
        self.vectors.nrows()
    }

    /// Columns `kept`, in the given order.
    pub fn sub_basis(&self, kept: &[usize]) -> Array2<f64> {
        self.vectors.select(Axis(1), kept)
    }
}

/// Builds the orthonormal Haar basis of `tree`. Wavelet columns are ordered
/// by level, then left to right.
pub fn haar_basis(tree: &WeightedBinaryTree) -> HaarBasis {
    let m = tree.leaf_count();
    let iv = tree.subtree_leaf_sets();
    let mut internal: Vec<usize> = (m..tree.node_count()).collect();
    internal.sort_by_key(|&v| (tree.depth(v), iv.interval[v].0));

    let mut vectors = Array2::zeros((m, m));
    vectors.column_mut(0).fill(1.0 / (m as f64).sqrt());
    let mut meta = vec![ColumnMeta { level: 0, node: None }];
    for (col, &v) in internal.iter().enumerate() {
        let [a, b] = tree.children(v).expect("internal node");
        let (n1, n2) = (iv.len(a) as f64, iv.len(b) as f64);
        let pos = (n2 / (n1 * (n1 + n2))).sqrt();
        let neg = -(n1 / (n2 * (n1 + n2))).sqrt();
        for &label in iv.leaves(a) {
            vectors[[label, col + 1]] = pos;
        }
        for &label in iv.leaves(b) {
            vectors[[label, col + 1]] = neg;
        }
        meta.push(ColumnMeta {
            level: tree.depth(v) + 1,
            node: Some(v),
        });
    }
    HaarBasis { vectors, meta }
}

fn check_width(signals: &ArrayView2<'_, f64>, basis: &HaarBasis) -> Result<()> {
    if signals.ncols() != basis.size() {
        return Err(Error::Shape(format!(
            "signals have {} columns, basis has {} leaves",
            signals.ncols(),
            basis.size()
        )));
    }
    Ok(())
}

/// Expansion coefficients `signals · B`.
pub fn expand(signals: ArrayView2<'_, f64>, basis: &HaarBasis) -> Result<Array2<f64>> {
    check_width(&signals, basis)?;
    Ok(signals.dot(&basis.vectors))
}

/// Selected sub-basis and the mass it carries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSelection {
    /// Column indices in descending order of aggregate ℓ1 mass.
    pub kept_columns: Vec<usize>,
    pub cumulative_mass: f64,
    /// Total aggregate ℓ1 mass over all columns.
    pub total_mass: f64,
    /// Absolute mass the kept prefix had to reach.
    pub threshold_mass: f64,
}

impl FilterSelection {
    pub fn threshold_fraction(&self) -> f64 {
        self.threshold_mass / self.total_mass
    }
}

/// Aggregate ℓ1 mass per column and the column order by descending mass
/// (ties: lower index first).
fn ranked_columns(coefficients: ArrayView2<'_, f64>) -> (Vec<f64>, Vec<usize>) {
    let mass: Vec<f64> = coefficients
        .axis_iter(Axis(1))
        .map(|c| c.iter().map(|v| v.abs()).sum())
        .collect();
    let mut order: Vec<usize> = (0..mass.len()).collect();
    order.sort_by(|&a, &b| mass[b].total_cmp(&mass[a]).then(a.cmp(&b)));
    (mass, order)
}

/// Keeps the shortest prefix of columns, ranked by aggregate ℓ1 mass, whose
/// cumulative mass reaches `threshold_fraction` of the total. A fraction of
/// one keeps every column with nonzero mass.
pub fn select_filter(coefficients: ArrayView2<'_, f64>, threshold_fraction: f64) -> Result<FilterSelection> {
    if !(threshold_fraction > 0.0 && threshold_fraction <= 1.0) {
        return Err(Error::Parameter(format!(
            "threshold fraction must be in (0, 1], got {threshold_fraction}"
        )));
    }
    let (mass, order) = ranked_columns(coefficients);
    let total: f64 = order.iter().map(|&c| mass[c]).sum();
    let threshold = if threshold_fraction >= 1.0 {
        f64::INFINITY
    } else {
        threshold_fraction * total
    };
    select_prefix(&mass, &order, total, threshold)
}

/// Like [`select_filter`] with an absolute mass threshold. When the total
/// mass does not reach the threshold every nonzero column is kept.
pub fn select_filter_by_mass(coefficients: ArrayView2<'_, f64>, threshold_mass: f64) -> Result<FilterSelection> {
    if !(threshold_mass > 0.0) {
        return Err(Error::Parameter(format!("threshold mass must be positive, got {threshold_mass}")));
    }
    let (mass, order) = ranked_columns(coefficients);
    let total: f64 = order.iter().map(|&c| mass[c]).sum();
    select_prefix(&mass, &order, total, threshold_mass)
}

fn select_prefix(mass: &[f64], order: &[usize], total: f64, threshold: f64) -> Result<FilterSelection> {
    if !(total > 0.0) {
        return Err(Error::EmptySelection);
    }
    let mut kept = Vec::new();
    let mut cumulative = 0.0;
    for &c in order {
        if mass[c] == 0.0 || cumulative >= threshold {
            break;
        }
        cumulative += mass[c];
        kept.push(c);
    }
    Ok(FilterSelection {
        kept_columns: kept,
        cumulative_mass: cumulative,
        total_mass: total,
        threshold_mass: threshold.min(total),
    })
}

/// Orthogonal projection of every row onto the kept columns: `X B̂ B̂ᵀ`.
pub fn project(signals: ArrayView2<'_, f64>, basis: &HaarBasis, kept: &[usize]) -> Result<Array2<f64>> {
    check_width(&signals, basis)?;
    let sub = basis.sub_basis(kept);
    Ok(signals.dot(&sub).dot(&sub.t()))
}

/// Basis, expansion, selection and projection in one step.
pub fn filter(signals: ArrayView2<'_, f64>, tree: &WeightedBinaryTree, threshold_fraction: f64) -> Result<Array2<f64>> {
    let basis = haar_basis(tree);
    let coefficients = expand(signals, &basis)?;
    let selection = select_filter(coefficients.view(), threshold_fraction)?;
    project(signals, &basis, &selection.kept_columns)
}

/// Shifts each row by its minimum when that minimum is negative, then
/// scales it to unit ℓ1 mass.
pub fn normalize_rows(signals: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let mut out = signals.to_owned();
    for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let min = row.iter().copied().fold(f64::INFINITY, f64::min);
        if min < 0.0 {
            row.mapv_inplace(|v| v - min);
        }
        let total: f64 = row.iter().map(|v| v.abs()).sum();
        if !(total >= MIN_HISTOGRAM_MASS) {
            return Err(Error::ZeroMass { row: i, iteration: None });
        }
        row.mapv_inplace(|v| v / total);
    }
    Ok(out)
}

/// [`normalize_rows`] returned as validated histograms.
pub fn normalize_histograms(signals: ArrayView2<'_, f64>) -> Result<Vec<LeafHistogram>> {
    normalize_rows(signals)?
        .axis_iter(Axis(0))
        .map(|r| LeafHistogram::new(r.to_vec()))
        .collect()
}

/// Mean over rows of the ℓ1 norm of the Haar coefficients.
pub fn l1_haar_norm(signals: ArrayView2<'_, f64>, basis: &HaarBasis) -> Result<f64> {
    let coefficients = expand(signals, basis)?;
    let p = coefficients.nrows();
    if p == 0 {
        return Ok(0.0);
    }
    Ok(coefficients.iter().map(|v| v.abs()).sum::<f64>() / p as f64)
}
