//! Gaussian affinity kernels and the column-stochastic diffusion operators
//! built from them.
//!
//! Fractional powers `P^t` are taken through the symmetric conjugate
//! `A = D^{-1/2} K D^{-1/2} = U Λ Uᵀ`, giving
//! `P^t = D^{1/2} U Λ^t Uᵀ D^{-1/2}`. Eigenvalues are clamped to `[0, 1]`
//! before exponentiation.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::DistanceMatrix;

/// `K = exp(−M∘2 / ε)` together with its scale `ε`.
#[derive(Debug, Clone)]
pub struct AffinityKernel {
    matrix: Array2<f64>,
    scale: f64,
}

impl AffinityKernel {
    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }
}

/// Kernel with `ε = scale_multiplier × median(squared off-diagonal distances)`.
pub fn build_kernel(distances: &DistanceMatrix, scale_multiplier: f64) -> Result<AffinityKernel> {
    check_multiplier(scale_multiplier)?;
    let median = distances.median_squared_offdiagonal();
    if median <= 0.0 {
        return Err(Error::DegenerateScale);
    }
    kernel_with_scale(distances, scale_multiplier * median)
}

/// Kernel with an explicit scale `ε`.
pub fn kernel_with_scale(distances: &DistanceMatrix, scale: f64) -> Result<AffinityKernel> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::Parameter(format!("kernel scale must be positive, got {scale}")));
    }
    let matrix = distances.as_array().mapv(|d| (-d * d / scale).exp());
    Ok(AffinityKernel { matrix, scale })
}

fn check_multiplier(m: f64) -> Result<()> {
    if m.is_finite() && m > 0.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("scale multiplier must be positive, got {m}")))
    }
}

/// Column-stochastic `P = K D^{-1}` with the spectrum of its symmetric
/// conjugate.
#[derive(Debug, Clone)]
pub struct DiffusionOperator {
    transition: Array2<f64>,
    degrees: Array1<f64>,
    /// Descending, unclamped.
    eigenvalues: Array1<f64>,
    /// Columns are orthonormal eigenvectors of the symmetric conjugate; may
    /// have fewer columns than rows for low-rank (landmark) operators.
    eigenvectors: Array2<f64>,
}

impl DiffusionOperator {
    pub fn transition(&self) -> &Array2<f64> {
        &self.transition
    }

    pub fn degrees(&self) -> &Array1<f64> {
        &self.degrees
    }

    pub fn eigenvalues(&self) -> &Array1<f64> {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &Array2<f64> {
        &self.eigenvectors
    }

    pub fn size(&self) -> usize {
        self.transition.nrows()
    }

    /// `P^t` reconstructed from the clamped spectrum. No renormalization.
    pub fn power(&self, t: f64) -> Array2<f64> {
        assert!(t >= 0.0, "diffusion time must be nonnegative");
        let lam_t = self.eigenvalues.mapv(|l| {
            let l = l.clamp(0.0, 1.0);
            if l == 0.0 {
                0.0
            } else {
                l.powf(t)
            }
        });
        let scaled = &self.eigenvectors * &lam_t.view().insert_axis(Axis(0));
        let mut out = scaled.dot(&self.eigenvectors.t());
        let sqrt_d = self.degrees.mapv(f64::sqrt);
        for ((i, j), v) in out.indexed_iter_mut() {
            *v *= sqrt_d[i] / sqrt_d[j];
        }
        out
    }
}

/// Builds `P = K D^{-1}`. With `density_normalize`, `K` is first replaced by
/// `D^{-1} K D^{-1}` and the degrees recomputed.
pub fn build_operator(kernel: &AffinityKernel, density_normalize: bool) -> Result<DiffusionOperator> {
    let mut k = kernel.matrix.clone();
    if density_normalize {
        let d = checked_degrees(&k)?;
        for ((i, j), v) in k.indexed_iter_mut() {
            *v /= d[i] * d[j];
        }
    }
    let degrees = checked_degrees(&k)?;
    let m = k.nrows();
    let mut transition = k.clone();
    for ((_, j), v) in transition.indexed_iter_mut() {
        *v /= degrees[j];
    }
    let sqrt_d = degrees.mapv(f64::sqrt);
    let sym = DMatrix::from_fn(m, m, |i, j| {
        let a = k[[i, j]] / (sqrt_d[i] * sqrt_d[j]);
        let b = k[[j, i]] / (sqrt_d[j] * sqrt_d[i]);
        0.5 * (a + b)
    });
    let (eigenvalues, eigenvectors) = sorted_symmetric_eigen(sym);
    Ok(DiffusionOperator {
        transition,
        degrees,
        eigenvalues,
        eigenvectors,
    })
}

fn checked_degrees(k: &Array2<f64>) -> Result<Array1<f64>> {
    let d = k.sum_axis(Axis(1));
    if let Some(i) = d.iter().position(|&v| !(v.is_finite() && v > 0.0)) {
        return Err(Error::SingularDegree(i));
    }
    Ok(d)
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues descending.
pub(crate) fn sorted_symmetric_eigen(sym: DMatrix<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = sym.nrows();
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = Array1::from_iter(order.iter().map(|&c| eig.eigenvalues[c]));
    let vectors = Array2::from_shape_fn((n, n), |(i, c)| eig.eigenvectors[(i, order[c])]);
    (values, vectors)
}

/// Multi-scale density at dyadic time `2^{-k}`: column `j` is `P^{2^{-k}} δ_j`,
/// with every column rescaled to sum to one.
///
/// Fractional powers of a stochastic matrix may have small negative
/// entries; see [`clamp_to_simplex`].
pub fn diffusion_densities(op: &DiffusionOperator, k: usize) -> Array2<f64> {
    let t = 0.5f64.powi(k as i32);
    let mut p = op.power(t);
    for mut col in p.axis_iter_mut(Axis(1)) {
        let s = col.sum();
        col.mapv_inplace(|v| v / s);
    }
    p
}

/// Zeroes negative entries and rescales every column back onto the simplex.
pub fn clamp_to_simplex(mut densities: Array2<f64>) -> Array2<f64> {
    for mut col in densities.axis_iter_mut(Axis(1)) {
        col.mapv_inplace(|v| v.max(0.0));
        let s = col.sum();
        col.mapv_inplace(|v| v / s);
    }
    densities
}

/// Low-rank spectrum of the landmark-affinity operator `Ŷ = K̂ K̂ᵀ`.
#[derive(Debug, Clone)]
pub struct LandmarkSpectrum {
    landmarks: Vec<usize>,
    cross_kernel: Array2<f64>,
    degrees: Array1<f64>,
    singular_values: Array1<f64>,
    left: Array2<f64>,
    right: Array2<f64>,
}

impl LandmarkSpectrum {
    pub fn landmark_count(&self) -> usize {
        self.landmarks.len()
    }

    /// Sorted indices of the landmark points.
    pub fn landmarks(&self) -> &[usize] {
        &self.landmarks
    }

    /// `K̂`, `n × n′`.
    pub fn cross_kernel(&self) -> &Array2<f64> {
        &self.cross_kernel
    }

    /// Diagonal of `D̂`, i.e. the row sums of `K̂ K̂ᵀ`.
    pub fn degrees(&self) -> &Array1<f64> {
        &self.degrees
    }

    /// Singular values of `D̂^{-1/2} K̂`, descending.
    pub fn singular_values(&self) -> &Array1<f64> {
        &self.singular_values
    }

    /// Left singular vectors `Û` (columns), `n × n′`.
    pub fn left_vectors(&self) -> &Array2<f64> {
        &self.left
    }

    /// Right singular vectors `V̂` (columns), `n′ × n′`.
    pub fn right_vectors(&self) -> &Array2<f64> {
        &self.right
    }

    /// Approximate eigenvalues of `D̂^{-1/2} Ŷ D̂^{-1/2}`: the squared
    /// singular values.
    pub fn eigenvalues(&self) -> Array1<f64> {
        self.singular_values.mapv(|s| s * s)
    }

    /// The landmark operator `Ŷ D̂^{-1}` with its rank-`n′` spectrum.
    pub fn to_operator(&self) -> DiffusionOperator {
        let y = self.cross_kernel.dot(&self.cross_kernel.t());
        let mut transition = y;
        for ((_, j), v) in transition.indexed_iter_mut() {
            *v /= self.degrees[j];
        }
        DiffusionOperator {
            transition,
            degrees: self.degrees.clone(),
            eigenvalues: self.eigenvalues(),
            eigenvectors: self.left.clone(),
        }
    }
}

/// Number of landmarks `⌈n^c⌉`, clamped to `[1, n]`.
pub fn landmark_count(n: usize, c: f64) -> usize {
    // Guard against powf landing a hair above an exact integer.
    let raw = (n as f64).powf(c);
    let count = (raw - 1e-9).ceil() as usize;
    count.clamp(1, n)
}

/// Landmark approximation: `⌈n^c⌉` landmarks drawn uniformly without
/// replacement (seeded), `K̂` between all points and the landmarks, and the
/// SVD of `D̂^{-1/2} K̂`.
pub fn landmark_spectrum(
    distances: &DistanceMatrix,
    scale_multiplier: f64,
    c: f64,
    seed: u64,
) -> Result<LandmarkSpectrum> {
    check_multiplier(scale_multiplier)?;
    let median = distances.median_squared_offdiagonal();
    if median <= 0.0 {
        return Err(Error::DegenerateScale);
    }
    landmark_spectrum_with_scale(distances, scale_multiplier * median, c, seed)
}

/// Landmark approximation with an explicit kernel scale `ε`.
pub fn landmark_spectrum_with_scale(
    distances: &DistanceMatrix,
    scale: f64,
    c: f64,
    seed: u64,
) -> Result<LandmarkSpectrum> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::Parameter(format!("kernel scale must be positive, got {scale}")));
    }
    let n = distances.len();
    if n < 4 {
        return Err(Error::Parameter(format!("landmark spectrum needs n >= 4, got {n}")));
    }
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::Parameter(format!("landmark exponent must be in (0,1), got {c}")));
    }
    let count = landmark_count(n, c);
    if count < 2 {
        return Err(Error::InsufficientLandmarks { need: 2, got: count });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut landmarks = rand::seq::index::sample(&mut rng, n, count).into_vec();
    landmarks.sort_unstable();

    let d = distances.as_array();
    let cross_kernel = Array2::from_shape_fn((n, count), |(i, l)| {
        let dist = d[[i, landmarks[l]]];
        (-dist * dist / scale).exp()
    });
    let col_sums = cross_kernel.sum_axis(Axis(0));
    let degrees = cross_kernel.dot(&col_sums);
    if let Some(i) = degrees.iter().position(|&v| !(v.is_finite() && v > 0.0)) {
        return Err(Error::SingularDegree(i));
    }

    let a = DMatrix::from_fn(n, count, |i, l| cross_kernel[[i, l]] / degrees[i].sqrt());
    let svd = a.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let r = svd.singular_values.len();
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&x, &y| {
        svd.singular_values[y]
            .total_cmp(&svd.singular_values[x])
            .then(x.cmp(&y))
    });
    let singular_values = Array1::from_iter(order.iter().map(|&c| svd.singular_values[c]));
    let left = Array2::from_shape_fn((n, r), |(i, c)| u[(i, order[c])]);
    let right = Array2::from_shape_fn((count, r), |(l, c)| v_t[(order[c], l)]);

    Ok(LandmarkSpectrum {
        landmarks,
        cross_kernel,
        degrees,
        singular_values,
        left,
        right,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    fn random_points(n: usize, dim: usize, seed: u64) -> DistanceMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.random::<f64>()).collect())
            .collect();
        DistanceMatrix::from_upper(n, |i, j| {
            pts[i].iter().zip(&pts[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
        })
        .unwrap()
    }

    fn max_abs(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn two_point_kernel_scale_is_squared_distance() {
        let d = 1.7;
        let m = DistanceMatrix::new(array![[0.0, d], [d, 0.0]]).unwrap();
        let k = build_kernel(&m, 1.0).unwrap();
        assert!((k.scale() - d * d).abs() < 1e-15);
        assert!((k.matrix()[[0, 1]] - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(k.matrix()[[0, 0]], 1.0);
        assert_eq!(k.matrix()[[1, 1]], 1.0);
    }

    #[test]
    fn degenerate_scale_rejected() {
        let m = DistanceMatrix::zeros(3);
        assert!(matches!(build_kernel(&m, 1.0), Err(Error::DegenerateScale)));
        assert!(build_kernel(&random_points(3, 2, 0), 0.0).is_err());
    }

    #[test]
    fn two_point_operator_closed_form() {
        let a = 0.3;
        let kernel = AffinityKernel {
            matrix: array![[1.0, a], [a, 1.0]],
            scale: 1.0,
        };
        let op = build_operator(&kernel, false).unwrap();
        let p = op.transition();
        let expected = array![[1.0 / (1.0 + a), a / (1.0 + a)], [a / (1.0 + a), 1.0 / (1.0 + a)]];
        assert!(max_abs(p, &expected) < 1e-15);
        assert!((op.eigenvalues()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn column_stochastic_and_unit_leading_eigenvalue() {
        for normalize in [false, true] {
            let m = random_points(12, 3, 5);
            let op = build_operator(&build_kernel(&m, 1.0).unwrap(), normalize).unwrap();
            for col in op.transition().axis_iter(Axis(1)) {
                assert!((col.sum() - 1.0).abs() < 1e-10);
            }
            assert!((op.eigenvalues()[0] - 1.0).abs() < 1e-8);
            assert!(op.eigenvalues().iter().all(|&l| l <= 1.0 + 1e-8));
        }
    }

    #[test]
    fn spectral_square_matches_direct_product() {
        let m = random_points(10, 2, 11);
        let op = build_operator(&build_kernel(&m, 1.0).unwrap(), false).unwrap();
        let direct = op.transition().dot(op.transition());
        assert!(max_abs(&op.power(2.0), &direct) < 1e-8);
    }

    #[test]
    fn unit_time_density_reconstructs_transition() {
        let m = random_points(9, 2, 3);
        let op = build_operator(&build_kernel(&m, 1.0).unwrap(), false).unwrap();
        let mu = diffusion_densities(&op, 0);
        assert!(max_abs(&mu, op.transition()) < 1e-8);
    }

    #[test]
    fn identity_operator_is_fixed_by_every_power() {
        let kernel = AffinityKernel {
            matrix: Array2::eye(4),
            scale: 1.0,
        };
        let op = build_operator(&kernel, false).unwrap();
        for k in 0..4 {
            assert!(max_abs(&diffusion_densities(&op, k), &Array2::eye(4)) < 1e-12);
        }
    }

    #[test]
    fn semigroup_quarter_power() {
        let m = random_points(8, 2, 21);
        let op = build_operator(&build_kernel(&m, 1.0).unwrap(), false).unwrap();
        let q = diffusion_densities(&op, 2);
        let q2 = q.dot(&q);
        let q4 = q2.dot(&q2);
        assert!(max_abs(&q4, op.transition()) < 1e-6, "{}", max_abs(&q4, op.transition()));
        for col in q.axis_iter(Axis(1)) {
            assert!((col.sum() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn landmark_count_rounding() {
        assert_eq!(landmark_count(64, 0.5), 8);
        assert_eq!(landmark_count(64, 0.999), 64);
        assert_eq!(landmark_count(100, 0.1), 2);
    }

    #[test]
    fn all_landmarks_match_exact_spectrum() {
        let n = 20;
        let m = random_points(n, 3, 9);
        let c = 0.999;
        let ls = landmark_spectrum(&m, 1.0, c, 4).unwrap();
        assert_eq!(ls.landmark_count(), n);
        let k = build_kernel(&m, 1.0).unwrap();
        let y = k.matrix().dot(k.matrix());
        let d = y.sum_axis(Axis(1));
        let sym = DMatrix::from_fn(n, n, |i, j| y[[i, j]] / (d[i] * d[j]).sqrt());
        let (exact, _) = sorted_symmetric_eigen(sym);
        let approx = ls.eigenvalues();
        for i in 0..n {
            assert!((exact[i] - approx[i]).abs() < 1e-8, "{i}: {} vs {}", exact[i], approx[i]);
        }
        assert!((approx[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn landmark_duplicates_keep_positive_degrees() {
        let m = DistanceMatrix::from_upper(6, |i, j| if i / 3 == j / 3 { 0.0 } else { 1.0 }).unwrap();
        let ls = landmark_spectrum(&m, 1.0, 0.5, 0).unwrap();
        assert!(ls.degrees().iter().all(|&d| d > 0.0));
    }

    #[test]
    fn too_few_landmarks() {
        let m = random_points(10, 2, 1);
        assert!(matches!(
            landmark_spectrum(&m, 1.0, 1e-12, 0),
            Err(Error::InsufficientLandmarks { .. })
        ));
    }

    #[test]
    fn landmark_operator_is_column_stochastic() {
        let m = random_points(30, 2, 2);
        let op = landmark_spectrum(&m, 1.0, 0.6, 3).unwrap().to_operator();
        for col in op.transition().axis_iter(Axis(1)) {
            assert!((col.sum() - 1.0).abs() < 1e-10);
        }
        let mu = clamp_to_simplex(diffusion_densities(&op, 1));
        assert!(mu.iter().all(|&v| v >= 0.0));
        for col in mu.axis_iter(Axis(1)) {
            assert!((col.sum() - 1.0).abs() < 1e-10);
        }
    }
}
