//! Alternating refinement of the sample and feature trees.
//!
//! Every iteration decodes a tree from each mode's current distance matrix
//! and recomputes the other mode's tree-Wasserstein distances on it. The two
//! mode updates of one iteration are independent and run concurrently.
//!
//! Filter thresholds are fractions of the Haar coefficient mass measured on
//! the iteration-0 trees; the resulting absolute masses stay fixed for the
//! whole run.

use std::time::Instant;

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{relative_change, DataMatrix, DistanceMatrix};
use crate::tree::{decode_tree, LandmarkConfig, TreeConfig, WeightedBinaryTree};
use crate::twd::{pairwise_twd_rows, TwdConfig, DEFAULT_REGULARIZER_EPSILON};
use crate::wavelet::{expand, haar_basis, l1_haar_norm, normalize_rows, project, select_filter_by_mass};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationConfig {
    pub gamma_r: f64,
    pub gamma_c: f64,
    /// Largest dyadic scale `K`.
    pub max_scale: usize,
    pub scale_multiplier: f64,
    /// Filter threshold on the sample tree, as a fraction of the iteration-0
    /// coefficient mass.
    pub threshold_r: Option<f64>,
    /// Filter threshold on the feature tree.
    pub threshold_c: Option<f64>,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub seed: u64,
    /// Landmark exponent `c`; `None` uses the full diffusion operator.
    pub landmark_c: Option<f64>,
    pub density_normalize: bool,
    pub regularizer_epsilon: f64,
}

impl Default for IterationConfig {
    fn default() -> Self {
        IterationConfig {
            gamma_r: 0.01,
            gamma_c: 0.01,
            max_scale: 5,
            scale_multiplier: 0.5,
            threshold_r: None,
            threshold_c: None,
            max_iterations: 25,
            tolerance: 1e-6,
            seed: 0,
            landmark_c: None,
            density_normalize: false,
            regularizer_epsilon: DEFAULT_REGULARIZER_EPSILON,
        }
    }
}

impl IterationConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, g) in [("gamma_r", self.gamma_r), ("gamma_c", self.gamma_c)] {
            if !(g.is_finite() && g >= 0.0) {
                return Err(Error::Parameter(format!("{name} must be nonnegative, got {g}")));
            }
        }
        if !(self.scale_multiplier.is_finite() && self.scale_multiplier > 0.0) {
            return Err(Error::Parameter(format!(
                "scale_multiplier must be positive, got {}",
                self.scale_multiplier
            )));
        }
        for (name, t) in [("threshold_r", self.threshold_r), ("threshold_c", self.threshold_c)] {
            if let Some(t) = t {
                if !(t > 0.0 && t <= 1.0) {
                    return Err(Error::Parameter(format!("{name} must be in (0, 1], got {t}")));
                }
            }
        }
        if self.max_iterations == 0 {
            return Err(Error::Parameter("max_iterations must be at least 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Parameter(format!("tolerance must be positive, got {}", self.tolerance)));
        }
        if let Some(c) = self.landmark_c {
            if !(c > 0.0 && c < 1.0) {
                return Err(Error::Parameter(format!("landmark_c must be in (0, 1), got {c}")));
            }
        }
        if !(self.regularizer_epsilon > 0.0) {
            return Err(Error::Parameter("regularizer_epsilon must be positive".into()));
        }
        Ok(())
    }

    pub fn tree_config(&self) -> TreeConfig {
        TreeConfig {
            max_scale: self.max_scale,
            scale_multiplier: self.scale_multiplier,
            density_normalize: self.density_normalize,
            landmark: self.landmark_c.map(|exponent| LandmarkConfig {
                exponent,
                seed: self.seed,
            }),
            ..TreeConfig::default()
        }
    }

    fn twd_r(&self) -> TwdConfig {
        TwdConfig {
            gamma: self.gamma_r,
            regularizer_epsilon: self.regularizer_epsilon,
        }
    }

    fn twd_c(&self) -> TwdConfig {
        TwdConfig {
            gamma: self.gamma_c,
            regularizer_epsilon: self.regularizer_epsilon,
        }
    }

    fn thresholds(&self) -> Result<(f64, f64)> {
        match (self.threshold_r, self.threshold_c) {
            (Some(r), Some(c)) => Ok((r, c)),
            (None, _) => Err(Error::Parameter("threshold_r is required for filtering".into())),
            (_, None) => Err(Error::Parameter("threshold_c is required for filtering".into())),
        }
    }
}

/// How the distance matrices are initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Initialization {
    /// `W⁰ = Φ(X̂; T(M))`.
    TwdOnMetrics,
    /// `W⁰ = M`.
    Metrics,
}

/// One member of the family of alternating schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub initialization: Initialization,
    pub filter: bool,
    /// Keep the sample tree at `T(M_r)` throughout.
    pub fixed_sample_tree: bool,
}

impl Variant {
    pub const ALG1: Variant = Variant {
        initialization: Initialization::TwdOnMetrics,
        filter: false,
        fixed_sample_tree: false,
    };
    pub const ALG2: Variant = Variant {
        initialization: Initialization::Metrics,
        filter: true,
        fixed_sample_tree: false,
    };
    pub const FIXED_MODE: Variant = Variant {
        initialization: Initialization::Metrics,
        filter: true,
        fixed_sample_tree: true,
    };
    /// The updates of [`Variant::ALG1`] started from the metrics themselves.
    pub const UNFILTERED: Variant = Variant {
        initialization: Initialization::Metrics,
        filter: false,
        fixed_sample_tree: false,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    MaxIterations,
}

/// Per-iteration diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub rel_change_r: f64,
    pub rel_change_c: f64,
    /// Mean ℓ1 Haar norm of the raw columns under the sample tree decoded
    /// from this iteration's sample distances.
    pub l1_haar_r: f64,
    /// Same for the raw rows under the feature tree.
    pub l1_haar_c: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct IterationState {
    pub iteration: usize,
    pub sample_twd: DistanceMatrix,
    pub feature_twd: DistanceMatrix,
    pub sample_tree: WeightedBinaryTree,
    pub feature_tree: WeightedBinaryTree,
    /// `X^{(l)}`; the raw data when filtering is off.
    pub filtered_samples: Array2<f64>,
    /// `Z^{(l)}`.
    pub filtered_features: Array2<f64>,
    pub variant: Variant,
    /// Absolute coefficient masses the filters keep, `(sample tree, feature
    /// tree)`.
    pub filter_mass: Option<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub state: IterationState,
    pub history: Vec<IterationRecord>,
    pub status: RunStatus,
    /// ℓ1 Haar norms `(r, c)` under the iteration-0 trees `T(M_r)`, `T(M_c)`.
    pub initial_l1: (f64, f64),
    /// Present when `record_trajectory` was requested: `(W_r, W_c)` for
    /// every iteration, starting with the initialization.
    pub trajectory: Option<Vec<(DistanceMatrix, DistanceMatrix)>>,
}

pub fn run_alg1(x: &DataMatrix, m_r: &DistanceMatrix, m_c: &DistanceMatrix, config: &IterationConfig) -> Result<RunOutput> {
    run_variant(x, m_r, m_c, config, Variant::ALG1, false)
}

pub fn run_alg2(x: &DataMatrix, m_r: &DistanceMatrix, m_c: &DistanceMatrix, config: &IterationConfig) -> Result<RunOutput> {
    run_variant(x, m_r, m_c, config, Variant::ALG2, false)
}

/// Like [`run_alg2`] with the sample tree held at `T(M_r)`.
pub fn run_fixed_mode(
    x: &DataMatrix,
    m_r: &DistanceMatrix,
    m_c: &DistanceMatrix,
    config: &IterationConfig,
) -> Result<RunOutput> {
    run_variant(x, m_r, m_c, config, Variant::FIXED_MODE, false)
}

struct Problem<'a> {
    x: &'a DataMatrix,
    config: &'a IterationConfig,
    tree_config: TreeConfig,
    /// Tree `T(M_r)`, kept for the fixed-tree variant.
    fixed_sample_tree: Option<WeightedBinaryTree>,
}

/// Output of one update: new filtered data and distances.
struct Step {
    samples: Array2<f64>,
    features: Array2<f64>,
    w_r: DistanceMatrix,
    w_c: DistanceMatrix,
}

impl Problem<'_> {
    fn decode(&self, w: &DistanceMatrix) -> Result<WeightedBinaryTree> {
        decode_tree(w, &self.tree_config)
    }

    /// Sample tree to use given the current sample distances.
    fn sample_tree(&self, w_r: &DistanceMatrix) -> Result<WeightedBinaryTree> {
        match &self.fixed_sample_tree {
            Some(t) => Ok(t.clone()),
            None => self.decode(w_r),
        }
    }

    /// One application of the update equations from the trees of the
    /// previous iterate.
    fn step(
        &self,
        samples: &Array2<f64>,
        features: &Array2<f64>,
        sample_tree: &WeightedBinaryTree,
        feature_tree: &WeightedBinaryTree,
        filter_mass: Option<(f64, f64)>,
        iteration: usize,
    ) -> Result<Step> {
        let cfg = self.config;
        let side = |signals: &Array2<f64>, tree: &WeightedBinaryTree, mass: Option<f64>, twd: TwdConfig| {
            let filtered = match mass {
                Some(mass) => filter_with_mass(signals, tree, mass)?,
                None => signals.clone(),
            };
            let hist = normalize_rows(filtered.view()).map_err(|e| with_iteration(e, iteration))?;
            let rows: Vec<ArrayView1<'_, f64>> = hist.axis_iter(Axis(0)).collect();
            let w = pairwise_twd_rows(&rows, tree, &twd)?;
            Ok::<_, Error>((filtered, w))
        };
        let (r, c) = rayon::join(
            || side(samples, feature_tree, filter_mass.map(|m| m.1), cfg.twd_r()),
            || side(features, sample_tree, filter_mass.map(|m| m.0), cfg.twd_c()),
        );
        let (samples, w_r) = r?;
        let (features, w_c) = c?;
        Ok(Step {
            samples,
            features,
            w_r,
            w_c,
        })
    }

    fn l1_norms(&self, sample_tree: &WeightedBinaryTree, feature_tree: &WeightedBinaryTree) -> Result<(f64, f64)> {
        let x = self.x.view();
        let r = l1_haar_norm(x.t(), &haar_basis(sample_tree))?;
        let c = l1_haar_norm(x, &haar_basis(feature_tree))?;
        Ok((r, c))
    }
}

fn with_iteration(e: Error, iteration: usize) -> Error {
    match e {
        Error::ZeroMass { row, .. } => Error::ZeroMass {
            row,
            iteration: Some(iteration),
        },
        other => other,
    }
}

/// Ψ with an absolute coefficient-mass threshold.
fn filter_with_mass(signals: &Array2<f64>, tree: &WeightedBinaryTree, mass: f64) -> Result<Array2<f64>> {
    let basis = haar_basis(tree);
    let coefficients = expand(signals.view(), &basis)?;
    let kept = if mass.is_infinite() {
        (0..basis.size())
            .filter(|&j| coefficients.column(j).iter().any(|&v| v != 0.0))
            .collect()
    } else {
        select_filter_by_mass(coefficients.view(), mass)?.kept_columns
    };
    project(signals.view(), &basis, &kept)
}

/// Absolute filter mass for `fraction` of the coefficient mass of `signals`
/// under `tree`; a fraction of one keeps everything.
fn absolute_mass(signals: &Array2<f64>, tree: &WeightedBinaryTree, fraction: f64) -> Result<f64> {
    if fraction >= 1.0 {
        return Ok(f64::INFINITY);
    }
    let coefficients = expand(signals.view(), &haar_basis(tree))?;
    let total: f64 = coefficients.iter().map(|v| v.abs()).sum();
    if !(total > 0.0) {
        return Err(Error::EmptySelection);
    }
    Ok(fraction * total)
}

fn check_inputs(x: &DataMatrix, m_r: &DistanceMatrix, m_c: &DistanceMatrix) -> Result<()> {
    let (n, m) = (x.nrows(), x.ncols());
    if n < 2 || m < 2 {
        return Err(Error::TrivialInput(n.min(m)));
    }
    if m_r.len() != n {
        return Err(Error::Shape(format!("sample metric is {0}×{0}, data has {n} rows", m_r.len())));
    }
    if m_c.len() != m {
        return Err(Error::Shape(format!("feature metric is {0}×{0}, data has {m} columns", m_c.len())));
    }
    x.check_no_zero_rows()?;
    x.transpose().check_no_zero_rows()
}

/// Runs any [`Variant`]. With `record_trajectory` every iterate's distance
/// pair is kept in the output.
pub fn run_variant(
    x: &DataMatrix,
    m_r: &DistanceMatrix,
    m_c: &DistanceMatrix,
    config: &IterationConfig,
    variant: Variant,
    record_trajectory: bool,
) -> Result<RunOutput> {
    config.validate()?;
    check_inputs(x, m_r, m_c)?;
    if config.gamma_r == 0.0 || config.gamma_c == 0.0 {
        log::info!("gamma = 0: the convergence guarantees assume a positive regularizer weight");
    }

    let tree_config = config.tree_config();
    let tree_r0 = decode_tree(m_r, &tree_config)?;
    let tree_c0 = decode_tree(m_c, &tree_config)?;
    let problem = Problem {
        x,
        config,
        tree_config,
        fixed_sample_tree: variant.fixed_sample_tree.then(|| tree_r0.clone()),
    };
    let initial_l1 = problem.l1_norms(&tree_r0, &tree_c0)?;

    let samples0 = x.as_array().clone();
    let features0 = samples0.t().to_owned();
    let filter_mass = if variant.filter {
        let (fr, fc) = config.thresholds()?;
        Some((
            absolute_mass(&features0, &tree_r0, fr)?,
            absolute_mass(&samples0, &tree_c0, fc)?,
        ))
    } else {
        None
    };

    let mut state = match variant.initialization {
        Initialization::Metrics => IterationState {
            iteration: 0,
            sample_twd: m_r.clone(),
            feature_twd: m_c.clone(),
            sample_tree: tree_r0,
            feature_tree: tree_c0,
            filtered_samples: samples0,
            filtered_features: features0,
            variant,
            filter_mass,
        },
        Initialization::TwdOnMetrics => {
            let step = problem.step(&samples0, &features0, &tree_r0, &tree_c0, None, 0)?;
            let sample_tree = problem.sample_tree(&step.w_r)?;
            let feature_tree = problem.decode(&step.w_c)?;
            IterationState {
                iteration: 0,
                sample_twd: step.w_r,
                feature_twd: step.w_c,
                sample_tree,
                feature_tree,
                filtered_samples: step.samples,
                filtered_features: step.features,
                variant,
                filter_mass,
            }
        }
    };

    let mut trajectory = record_trajectory.then(|| vec![(state.sample_twd.clone(), state.feature_twd.clone())]);
    let mut history = Vec::new();
    let mut status = RunStatus::MaxIterations;
    for l in 1..=config.max_iterations {
        let start = Instant::now();
        let step = problem.step(
            &state.filtered_samples,
            &state.filtered_features,
            &state.sample_tree,
            &state.feature_tree,
            filter_mass,
            l,
        )?;
        let rel_r = relative_change(&state.sample_twd, &step.w_r);
        let rel_c = relative_change(&state.feature_twd, &step.w_c);
        let sample_tree = problem.sample_tree(&step.w_r)?;
        let feature_tree = problem.decode(&step.w_c)?;
        let (l1_r, l1_c) = problem.l1_norms(&sample_tree, &feature_tree)?;
        state = IterationState {
            iteration: l,
            sample_twd: step.w_r,
            feature_twd: step.w_c,
            sample_tree,
            feature_tree,
            filtered_samples: step.samples,
            filtered_features: step.features,
            variant,
            filter_mass,
        };
        if let Some(t) = trajectory.as_mut() {
            t.push((state.sample_twd.clone(), state.feature_twd.clone()));
        }
        let record = IterationRecord {
            iteration: l,
            rel_change_r: rel_r,
            rel_change_c: rel_c,
            l1_haar_r: l1_r,
            l1_haar_c: l1_c,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        log::debug!("iteration {l}: rel change r {rel_r:.3e}, c {rel_c:.3e}");
        history.push(record);
        if rel_r.max(rel_c) < config.tolerance {
            status = RunStatus::Converged;
            break;
        }
    }
    if status == RunStatus::MaxIterations {
        log::warn!("no convergence after {} iterations", config.max_iterations);
    }
    Ok(RunOutput {
        state,
        history,
        status,
        initial_l1,
        trajectory,
    })
}

/// Relative change `(r, c)` produced by one more update from `state`.
pub fn check_fixed_point(state: &IterationState, x: &DataMatrix, config: &IterationConfig) -> Result<(f64, f64)> {
    let problem = Problem {
        x,
        config,
        tree_config: config.tree_config(),
        fixed_sample_tree: None,
    };
    let step = problem.step(
        &state.filtered_samples,
        &state.filtered_features,
        &state.sample_tree,
        &state.feature_tree,
        state.filter_mass,
        state.iteration + 1,
    )?;
    Ok((
        relative_change(&state.sample_twd, &step.w_r),
        relative_change(&state.feature_twd, &step.w_c),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{row_distances, InitialMetric};
    use ndarray::array;

    fn small_data() -> DataMatrix {
        DataMatrix::new(array![
            [5.0, 4.0, 0.5, 0.2, 0.1],
            [4.5, 5.0, 0.4, 0.1, 0.3],
            [0.2, 0.3, 4.0, 5.0, 4.4],
            [0.1, 0.4, 5.0, 4.2, 4.9],
            [0.3, 0.2, 4.6, 4.8, 5.0],
            [4.8, 4.1, 0.2, 0.5, 0.2]
        ])
        .unwrap()
    }

    fn metrics(x: &DataMatrix) -> (DistanceMatrix, DistanceMatrix) {
        (
            row_distances(x.view(), InitialMetric::Cosine).unwrap(),
            row_distances(x.view().t(), InitialMetric::Cosine).unwrap(),
        )
    }

    #[test]
    fn identical_rows_give_zero_sample_distances() {
        let x = DataMatrix::new(array![[1.0, 2.0, 3.0], [1.0, 2.0, 3.0], [1.0, 2.0, 3.0]]).unwrap();
        let m_r = DistanceMatrix::from_upper(3, |i, j| (i + j) as f64).unwrap();
        let m_c = row_distances(x.view().t(), InitialMetric::Euclidean).unwrap();
        let config = IterationConfig {
            max_iterations: 3,
            ..Default::default()
        };
        let out = run_alg1(&x, &m_r, &m_c, &config).unwrap();
        assert!(out.state.sample_twd.as_array().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_degenerate_shapes() {
        let x = DataMatrix::new(array![[1.0, 2.0]]).unwrap();
        let m_c = DistanceMatrix::from_upper(2, |_, _| 1.0).unwrap();
        assert!(matches!(
            run_alg1(&x, &DistanceMatrix::zeros(1), &m_c, &IterationConfig::default()),
            Err(Error::TrivialInput(_))
        ));
    }

    #[test]
    fn rejects_zero_column() {
        let x = DataMatrix::new(array![[1.0, 0.0], [2.0, 0.0]]).unwrap();
        let m = DistanceMatrix::from_upper(2, |_, _| 1.0).unwrap();
        assert!(matches!(
            run_alg1(&x, &m, &m, &IterationConfig::default()),
            Err(Error::ZeroMass { row: 1, .. })
        ));
    }

    #[test]
    fn alg2_needs_thresholds() {
        let x = small_data();
        let (m_r, m_c) = metrics(&x);
        assert!(matches!(
            run_alg2(&x, &m_r, &m_c, &IterationConfig::default()),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn full_threshold_matches_unfiltered() {
        let x = small_data();
        let (m_r, m_c) = metrics(&x);
        let config = IterationConfig {
            threshold_r: Some(1.0),
            threshold_c: Some(1.0),
            max_iterations: 4,
            ..Default::default()
        };
        let a = run_variant(&x, &m_r, &m_c, &config, Variant::ALG2, true).unwrap();
        let b = run_variant(&x, &m_r, &m_c, &config, Variant::UNFILTERED, true).unwrap();
        let (ta, tb) = (a.trajectory.unwrap(), b.trajectory.unwrap());
        assert_eq!(ta.len(), tb.len());
        for ((ar, ac), (br, bc)) in ta.iter().zip(&tb) {
            for (u, v) in ar.as_array().iter().zip(br.as_array()) {
                assert!((u - v).abs() < 1e-10);
            }
            for (u, v) in ac.as_array().iter().zip(bc.as_array()) {
                assert!((u - v).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn converged_run_is_a_fixed_point() {
        let x = small_data();
        let (m_r, m_c) = metrics(&x);
        let config = IterationConfig::default();
        let out = run_alg1(&x, &m_r, &m_c, &config).unwrap();
        assert_eq!(out.status, RunStatus::Converged);
        let (r, c) = check_fixed_point(&out.state, &x, &config).unwrap();
        assert!(r < config.tolerance && c < config.tolerance);
        assert_eq!(out.history.len(), out.state.iteration);
    }

    #[test]
    fn fixed_mode_keeps_sample_tree() {
        let x = small_data();
        let (m_r, m_c) = metrics(&x);
        let config = IterationConfig {
            threshold_r: Some(0.9),
            threshold_c: Some(0.9),
            ..Default::default()
        };
        let out = run_fixed_mode(&x, &m_r, &m_c, &config).unwrap();
        let t0 = decode_tree(&m_r, &config.tree_config()).unwrap();
        assert_eq!(out.state.sample_tree.to_newick(), t0.to_newick());
    }

    #[test]
    fn config_validation() {
        let bad = IterationConfig {
            max_iterations: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = IterationConfig {
            threshold_c: Some(1.5),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = IterationConfig {
            gamma_r: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
