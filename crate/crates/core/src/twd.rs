//! Closed-form tree-Wasserstein distance and the pairwise operator built on it.

use ndarray::{Array2, ArrayView1, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::DistanceMatrix;
use crate::tree::{LeafIntervals, WeightedBinaryTree};

pub const DEFAULT_REGULARIZER_EPSILON: f64 = 1e-6;

/// Probability vector over tree leaves, indexed by leaf label.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafHistogram(Vec<f64>);

impl LeafHistogram {
    /// Entries must be nonnegative and sum to one within `1e-9`.
    pub fn new(mass: Vec<f64>) -> Result<Self> {
        if let Some(i) = mass.iter().position(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::Parameter(format!("histogram entry {i} is {}", mass[i])));
        }
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Parameter(format!("histogram sums to {total}")));
        }
        Ok(LeafHistogram(mass))
    }

    /// Point mass on one label.
    pub fn delta(len: usize, at: usize) -> Self {
        let mut v = vec![0.0; len];
        v[at] = 1.0;
        LeafHistogram(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwdConfig {
    /// Weight of the snowflake term.
    pub gamma: f64,
    pub regularizer_epsilon: f64,
}

impl Default for TwdConfig {
    fn default() -> Self {
        TwdConfig {
            gamma: 0.0,
            regularizer_epsilon: DEFAULT_REGULARIZER_EPSILON,
        }
    }
}

impl TwdConfig {
    pub fn with_gamma(gamma: f64) -> Self {
        TwdConfig {
            gamma,
            ..Default::default()
        }
    }
}

/// `Σ_v w_v |Σ_{u under v} (ρ1(u) − ρ2(u))|`, one bottom-up pass.
pub fn twd(tree: &WeightedBinaryTree, rho1: &LeafHistogram, rho2: &LeafHistogram) -> Result<f64> {
    let m = tree.leaf_count();
    if rho1.len() != m || rho2.len() != m {
        return Err(Error::Shape(format!(
            "histograms of length {} and {} on a tree with {m} leaves",
            rho1.len(),
            rho2.len()
        )));
    }
    let n = tree.node_count();
    let mut diff = vec![0.0; n];
    let mut total = 0.0;
    for v in 0..n {
        diff[v] = match tree.children(v) {
            None => {
                let label = tree.leaf_label(v).unwrap();
                rho1.0[label] - rho2.0[label]
            }
            Some([a, b]) => diff[a] + diff[b],
        };
        total += tree.edge_weight(v) * diff[v].abs();
    }
    Ok(total)
}

/// `½ ∫_0^x dξ / (√ξ + ε)` in closed form: `√x − ε ln(1 + √x / ε)`.
pub fn snowflake_of_norm(x: f64, epsilon: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let s = x.sqrt();
    s - epsilon * (s / epsilon).ln_1p()
}

/// Snowflake penalty of a difference vector, evaluated at its ℓ2 norm.
pub fn snowflake(delta: &[f64], epsilon: f64) -> f64 {
    let norm = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
    snowflake_of_norm(norm, epsilon)
}

/// Per-node subtree masses of a batch of signals, computed from prefix sums
/// over the postorder leaf order. Row `i` of the result holds the masses of
/// signal `i` for every node.
fn subtree_masses(rows: &[ArrayView1<'_, f64>], intervals: &LeafIntervals, node_count: usize) -> Array2<f64> {
    let m = intervals.order.len();
    let mut out = Array2::zeros((rows.len(), node_count));
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(rows.par_iter())
        .for_each(|(mut masses, row)| {
            let mut prefix = vec![0.0; m + 1];
            for (p, &label) in intervals.order.iter().enumerate() {
                prefix[p + 1] = prefix[p] + row[label];
            }
            for (v, &(a, b)) in intervals.interval.iter().enumerate() {
                masses[v] = prefix[b] - prefix[a];
            }
        });
    out
}

/// Pairwise `twd(h_i, h_j) + γ ζ(h_i − h_j)` as a distance matrix.
pub fn pairwise_twd(histograms: &[LeafHistogram], tree: &WeightedBinaryTree, config: &TwdConfig) -> Result<DistanceMatrix> {
    let m = tree.leaf_count();
    if let Some(h) = histograms.iter().find(|h| h.len() != m) {
        return Err(Error::Shape(format!("histogram of length {} on a tree with {m} leaves", h.len())));
    }
    let views: Vec<ArrayView1<'_, f64>> = histograms.iter().map(|h| ArrayView1::from(h.as_slice())).collect();
    pairwise_twd_rows(&views, tree, config)
}

/// Same as [`pairwise_twd`] over rows that are already known to be
/// histograms aligned with the tree.
pub(crate) fn pairwise_twd_rows(
    rows: &[ArrayView1<'_, f64>],
    tree: &WeightedBinaryTree,
    config: &TwdConfig,
) -> Result<DistanceMatrix> {
    if !(config.gamma >= 0.0) {
        return Err(Error::Parameter(format!("gamma must be nonnegative, got {}", config.gamma)));
    }
    let p = rows.len();
    let n = tree.node_count();
    let intervals = tree.subtree_leaf_sets();
    let masses = subtree_masses(rows, &intervals, n);
    let weights = tree.edge_weights();

    let mut out = Array2::zeros((p, p));
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut row)| {
            let mi = masses.row(i);
            for j in (i + 1)..p {
                let mj = masses.row(j);
                let mut total = 0.0;
                for v in 0..n {
                    total += weights[v] * (mi[v] - mj[v]).abs();
                }
                if config.gamma > 0.0 {
                    let sq: f64 = rows[i].iter().zip(rows[j].iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                    total += config.gamma * snowflake_of_norm(sq.sqrt(), config.regularizer_epsilon);
                }
                row[j] = total;
            }
        });
    for i in 0..p {
        for j in (i + 1)..p {
            out[[j, i]] = out[[i, j]];
        }
    }
    DistanceMatrix::new(out)
}
