//! Validated matrix newtypes and the initial-metric constructors.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nonnegative `n × m` matrix of raw observations. Rows are samples, columns
/// are features.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix(Array2<f64>);

impl DataMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        for ((i, j), &v) in values.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::InvalidData(format!("non-finite value {v} at ({i}, {j})")));
            }
            if v < 0.0 {
                return Err(Error::InvalidData(format!("negative value {v} at ({i}, {j})")));
            }
        }
        Ok(DataMatrix(values))
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.0.ncols()
    }

    /// Errors on the first row with zero total mass.
    pub fn check_no_zero_rows(&self) -> Result<()> {
        for (i, row) in self.0.axis_iter(Axis(0)).enumerate() {
            if row.sum() <= 0.0 {
                return Err(Error::ZeroMass { row: i, iteration: None });
            }
        }
        Ok(())
    }

    pub fn transpose(&self) -> DataMatrix {
        DataMatrix(self.0.t().to_owned())
    }
}

/// Symmetric nonnegative square matrix with an exactly zero diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix(Array2<f64>);

impl DistanceMatrix {
    /// Validates symmetry (exact), zero diagonal (exact), nonnegativity and
    /// finiteness. Malformed input is rejected, never repaired.
    pub fn new(values: Array2<f64>) -> Result<Self> {
        let (r, c) = values.dim();
        if r != c {
            return Err(Error::InvalidDistance(format!("matrix is {r}x{c}, not square")));
        }
        for i in 0..r {
            if values[[i, i]] != 0.0 {
                return Err(Error::InvalidDistance(format!(
                    "diagonal entry ({i}, {i}) is {}",
                    values[[i, i]]
                )));
            }
            for j in (i + 1)..r {
                let v = values[[i, j]];
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::InvalidDistance(format!("entry ({i}, {j}) is {v}")));
                }
                if v != values[[j, i]] {
                    return Err(Error::InvalidDistance(format!(
                        "asymmetric at ({i}, {j}): {v} vs {}",
                        values[[j, i]]
                    )));
                }
            }
        }
        Ok(DistanceMatrix(values))
    }

    /// Builds a matrix from a function evaluated on the strict upper triangle.
    pub fn from_upper(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut values = Array2::zeros((n, n));
        for i in 0..n {
            for j in (i + 1)..n {
                let v = f(i, j);
                values[[i, j]] = v;
                values[[j, i]] = v;
            }
        }
        DistanceMatrix::new(values)
    }

    pub fn zeros(n: usize) -> Self {
        DistanceMatrix(Array2::zeros((n, n)))
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[[i, j]]
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    /// Strictly-upper-triangular entries, row-major.
    pub fn upper_entries(&self) -> Vec<f64> {
        let n = self.len();
        let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                out.push(self.0[[i, j]]);
            }
        }
        out
    }

    /// Median of the strictly-upper-triangular entries (mean of the two middle
    /// values for an even count). Zero for matrices smaller than 2×2.
    pub fn median_offdiagonal(&self) -> f64 {
        median(self.upper_entries())
    }

    /// Median of the squared strictly-upper-triangular entries.
    pub fn median_squared_offdiagonal(&self) -> f64 {
        median(self.upper_entries().into_iter().map(|d| d * d).collect())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest violation `d(i,k) - d(i,j) - d(j,k)` over all triples; `<= 0`
    /// means the triangle inequality holds.
    pub fn max_triangle_violation(&self) -> f64 {
        let n = self.len();
        let d = &self.0;
        let mut worst = f64::NEG_INFINITY;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    worst = worst.max(d[[i, k]] - d[[i, j]] - d[[j, k]]);
                }
            }
        }
        worst
    }
}

/// Relative Frobenius change `‖new − old‖_F / ‖old‖_F`. Falls back to the
/// absolute change when `old` is the zero matrix.
pub fn relative_change(old: &DistanceMatrix, new: &DistanceMatrix) -> f64 {
    let diff = (&new.0 - &old.0).iter().map(|v| v * v).sum::<f64>().sqrt();
    let base = old.frobenius_norm();
    if base > 0.0 {
        diff / base
    } else {
        diff
    }
}

pub(crate) fn median(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Initial pairwise metric between the rows of a matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialMetric {
    Cosine,
    Euclidean,
}

/// Pairwise distances between the rows of `rows` under `metric`.
pub fn row_distances(rows: ArrayView2<'_, f64>, metric: InitialMetric) -> Result<DistanceMatrix> {
    match metric {
        InitialMetric::Cosine => cosine_distances(rows),
        InitialMetric::Euclidean => Ok(euclidean_distances(rows)),
    }
}

/// `1 − cos(x_i, x_j)` between rows, clamped at zero. Zero-norm rows are
/// rejected.
pub fn cosine_distances(rows: ArrayView2<'_, f64>) -> Result<DistanceMatrix> {
    let norms: Vec<f64> = rows.axis_iter(Axis(0)).map(|r| r.dot(&r).sqrt()).collect();
    if let Some(i) = norms.iter().position(|&n| n == 0.0) {
        return Err(Error::ZeroMass { row: i, iteration: None });
    }
    let n = rows.nrows();
    DistanceMatrix::from_upper(n, |i, j| {
        let sim = rows.row(i).dot(&rows.row(j)) / (norms[i] * norms[j]);
        (1.0 - sim).max(0.0)
    })
}

pub fn euclidean_distances(rows: ArrayView2<'_, f64>) -> DistanceMatrix {
    let n = rows.nrows();
    DistanceMatrix::from_upper(n, |i, j| euclid(rows.row(i), rows.row(j)))
        .expect("euclidean distances are a valid metric matrix")
}

fn euclid(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
