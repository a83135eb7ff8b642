//! Multi-scale embedding of diffusion densities into a product of Poincaré
//! half-spaces.
//!
//! Point `j` at scale `k` is `y_j^k = [sqrt(μ_j^k), 2^{k/2-2}]`. Distances are
//! the ℓ1 sum of per-scale half-space geodesics; linkage scores are the
//! geometric mean over scales of the geodesic's apex height.

use ndarray::{Array2, ArrayView1, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Per-scale Hadamard square roots of the densities. `roots[k]` row `j` is
/// `sqrt(μ_j^k)`.
#[derive(Debug, Clone)]
pub struct MultiscaleEmbedding {
    roots: Vec<Array2<f64>>,
}

/// Last coordinate `2^{k/2 − 2}` of every scale-`k` point.
pub fn scale_coordinate(k: usize) -> f64 {
    (k as f64 / 2.0 - 2.0).exp2()
}

/// Embeds column-stochastic densities: `densities[k]` column `j` is `μ_j^k`.
pub fn embed(densities: &[Array2<f64>]) -> Result<MultiscaleEmbedding> {
    if densities.is_empty() {
        return Err(Error::Parameter("need densities for at least one scale".into()));
    }
    let m = densities[0].nrows();
    let mut roots = Vec::with_capacity(densities.len());
    for (k, mu) in densities.iter().enumerate() {
        if mu.dim() != (m, m) {
            return Err(Error::Shape(format!(
                "scale {k} densities are {:?}, expected ({m}, {m})",
                mu.dim()
            )));
        }
        if let Some(((row, col), &value)) = mu.indexed_iter().find(|(_, &v)| !(v >= 0.0)) {
            return Err(Error::InvalidDensity { scale: k, row, col, value });
        }
        roots.push(mu.t().mapv(f64::sqrt));
    }
    Ok(MultiscaleEmbedding { roots })
}

impl MultiscaleEmbedding {
    /// Number of embedded points `m`.
    pub fn len(&self) -> usize {
        self.roots[0].nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `K`; scales run over `0..=K`.
    pub fn max_scale(&self) -> usize {
        self.roots.len() - 1
    }

    /// The full `(m + 1)`-vector `y_j^k`.
    pub fn point(&self, j: usize, k: usize) -> Vec<f64> {
        let mut y = self.roots[k].row(j).to_vec();
        y.push(scale_coordinate(k));
        y
    }

    fn root_gap(&self, j: usize, jp: usize, k: usize) -> f64 {
        l2_gap(self.roots[k].row(j), self.roots[k].row(jp))
    }

    /// `Σ_k 2 asinh(2^{1 − k/2} ‖y_j^k − y_{j′}^k‖)`.
    pub fn distance(&self, j: usize, jp: usize) -> f64 {
        if j == jp {
            return 0.0;
        }
        (0..self.roots.len())
            .map(|k| {
                let h = self.root_gap(j, jp, k);
                2.0 * ((1.0 - k as f64 / 2.0).exp2() * h).asinh()
            })
            .sum()
    }

    /// Apex height of the scale-`k` geodesic between `j` and `j′`.
    pub fn projection(&self, j: usize, jp: usize, k: usize) -> f64 {
        let half_gap = 0.5 * self.root_gap(j, jp, k);
        half_gap.hypot(scale_coordinate(k))
    }

    /// Geometric mean of the per-scale projections, computed in log domain.
    pub fn linkage(&self, j: usize, jp: usize) -> f64 {
        let scales = self.roots.len();
        let log_sum: f64 = (0..scales).map(|k| self.projection(j, jp, k).ln()).sum();
        (log_sum / scales as f64).exp()
    }

    /// Dense `m × m` matrix of `f(j, j′)` for `j < j′`, mirrored; rows are
    /// filled in parallel.
    fn pairwise(&self, f: impl Fn(usize, usize) -> f64 + Sync) -> Array2<f64> {
        let m = self.len();
        let mut out = Array2::zeros((m, m));
        out.axis_iter_mut(Axis(0))
            .into_par_iter()
            .enumerate()
            .for_each(|(j, mut row)| {
                for jp in (j + 1)..m {
                    row[jp] = f(j, jp);
                }
            });
        for j in 0..m {
            for jp in (j + 1)..m {
                out[[jp, j]] = out[[j, jp]];
            }
        }
        out
    }

    pub fn pairwise_distances(&self) -> Array2<f64> {
        self.pairwise(|a, b| self.distance(a, b))
    }

    /// Pairwise linkage scores; the diagonal holds the self-linkage
    /// `2^{K/4 − 2}`.
    pub fn pairwise_linkage(&self) -> Array2<f64> {
        let mut out = self.pairwise(|a, b| self.linkage(a, b));
        let own = (self.max_scale() as f64 / 4.0 - 2.0).exp2();
        out.diag_mut().fill(own);
        out
    }
}

pub fn embedding_distance(emb: &MultiscaleEmbedding, j: usize, jp: usize) -> f64 {
    emb.distance(j, jp)
}

pub fn linkage_score(emb: &MultiscaleEmbedding, j: usize, jp: usize) -> f64 {
    emb.linkage(j, jp)
}

fn l2_gap(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
