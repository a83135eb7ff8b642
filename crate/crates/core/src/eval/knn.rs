//! k-nearest-neighbour classification over a precomputed distance matrix,
//! evaluated on repeated random train/test splits.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::DistanceMatrix;

/// Split attempts before giving up on covering every class.
const MAX_SPLIT_ATTEMPTS: usize = 10;

#[derive(Debug, Clone)]
pub struct LabeledDistances {
    distances: DistanceMatrix,
    labels: Vec<usize>,
}

impl LabeledDistances {
    pub fn new(distances: DistanceMatrix, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != distances.len() {
            return Err(Error::Shape(format!(
                "{} labels for a {1}×{1} distance matrix",
                labels.len(),
                distances.len()
            )));
        }
        Ok(LabeledDistances { distances, labels })
    }

    pub fn distances(&self) -> &DistanceMatrix {
        &self.distances
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    fn class_count(&self) -> usize {
        self.labels.iter().max().map_or(0, |&c| c + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnnScore {
    pub k: usize,
    pub mean: f64,
    /// Sample standard deviation over trials; zero for a single trial.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnReport {
    pub per_k: Vec<KnnScore>,
    /// Highest mean accuracy; ties go to the smaller `k`.
    pub best: KnnScore,
    /// `trial_accuracy[t][g]` is the accuracy of trial `t` with `k_grid[g]`.
    pub trial_accuracy: Vec<Vec<f64>>,
}

/// Majority vote among the `k` nearest training points. Ties go to the
/// class with the smallest summed distance, then to the lowest class id.
pub fn knn_predict(data: &LabeledDistances, train: &[usize], query: usize, k: usize) -> usize {
    let d = data.distances.as_array();
    let mut order: Vec<usize> = train.to_vec();
    order.sort_by(|&a, &b| d[[query, a]].total_cmp(&d[[query, b]]).then(a.cmp(&b)));
    let k = k.clamp(1, order.len());
    let classes = data.class_count();
    let mut votes = vec![0usize; classes];
    let mut summed = vec![0.0; classes];
    for &t in &order[..k] {
        let c = data.labels[t];
        votes[c] += 1;
        summed[c] += d[[query, t]];
    }
    (0..classes)
        .filter(|&c| votes[c] > 0)
        .min_by(|&a, &b| {
            votes[b]
                .cmp(&votes[a])
                .then(summed[a].total_cmp(&summed[b]))
                .then(a.cmp(&b))
        })
        .expect("at least one neighbour")
}

/// Draws a split whose training part covers every class.
fn draw_split(data: &LabeledDistances, n_train: usize, rng: &mut ChaCha8Rng) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = data.labels.len();
    let classes = data.class_count();
    for attempt in 0..MAX_SPLIT_ATTEMPTS {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        let (train, test) = idx.split_at(n_train);
        let mut seen = vec![false; classes];
        for &t in train {
            seen[data.labels[t]] = true;
        }
        let present = data.labels.iter().all(|&c| seen[c]);
        if present {
            return Ok((train.to_vec(), test.to_vec()));
        }
        log::warn!("training split {attempt} misses a class; resampling");
    }
    Err(Error::Parameter(format!(
        "no split covering every class after {MAX_SPLIT_ATTEMPTS} attempts"
    )))
}

/// Mean and spread of kNN accuracy over `trials` seeded random splits, for
/// every `k` in `k_grid`.
pub fn knn_accuracy(
    data: &LabeledDistances,
    k_grid: &[usize],
    train_fraction: f64,
    trials: usize,
    seed: u64,
) -> Result<KnnReport> {
    let n = data.labels.len();
    let mut distinct = data.labels.clone();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::Parameter("kNN evaluation needs at least two classes".into()));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Parameter(format!("train fraction must be in (0, 1), got {train_fraction}")));
    }
    if k_grid.is_empty() || k_grid.contains(&0) {
        return Err(Error::Parameter("k grid must be nonempty with positive entries".into()));
    }
    if trials == 0 {
        return Err(Error::Parameter("need at least one trial".into()));
    }
    let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trial_accuracy = Vec::with_capacity(trials);
    for _ in 0..trials {
        let (train, test) = draw_split(data, n_train, &mut rng)?;
        let row: Vec<f64> = k_grid
            .iter()
            .map(|&k| {
                let correct = test
                    .iter()
                    .filter(|&&q| knn_predict(data, &train, q, k) == data.labels[q])
                    .count();
                correct as f64 / test.len() as f64
            })
            .collect();
        trial_accuracy.push(row);
    }

    let per_k: Vec<KnnScore> = k_grid
        .iter()
        .enumerate()
        .map(|(g, &k)| {
            let acc: Vec<f64> = trial_accuracy.iter().map(|r| r[g]).collect();
            let mean = acc.iter().sum::<f64>() / trials as f64;
            let std = if trials > 1 {
                (acc.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (trials - 1) as f64).sqrt()
            } else {
                0.0
            };
            KnnScore { k, mean, std }
        })
        .collect();
    let best = *per_k
        .iter()
        .min_by(|a, b| b.mean.total_cmp(&a.mean).then(a.k.cmp(&b.k)))
        .expect("nonempty grid");
    Ok(KnnReport {
        per_k,
        best,
        trial_accuracy,
    })
}

/// The odd values `1, 3, …, 19`.
pub fn default_k_grid() -> Vec<usize> {
    (1..=19).step_by(2).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clusters(per: usize) -> LabeledDistances {
        let n = 2 * per;
        let d = DistanceMatrix::from_upper(n, |i, j| if i / per == j / per { 1.0 } else { 10.0 }).unwrap();
        LabeledDistances::new(d, (0..n).map(|i| i / per).collect()).unwrap()
    }

    #[test]
    fn separated_clusters_are_perfect() {
        let r = knn_accuracy(&clusters(10), &[1, 3, 5], 0.7, 5, 1).unwrap();
        for s in &r.per_k {
            assert_eq!(s.mean, 1.0);
        }
        assert_eq!(r.best.k, 1);
    }

    #[test]
    fn vote_ties_use_summed_distance_then_label() {
        let d = DistanceMatrix::from_upper(5, |i, j| match (i, j) {
            (0, 1) => 1.0,
            (0, 2) => 3.0,
            (0, 3) => 2.0,
            (0, 4) => 2.5,
            _ => 5.0,
        })
        .unwrap();
        let data = LabeledDistances::new(d, vec![0, 0, 0, 1, 1]).unwrap();
        // Neighbours of 0: 1 (class 0, 1.0), 3 (class 1, 2.0); one vote each.
        assert_eq!(knn_predict(&data, &[1, 2, 3, 4], 0, 2), 0);
        let d = DistanceMatrix::from_upper(3, |_, _| 1.0).unwrap();
        let data = LabeledDistances::new(d, vec![0, 1, 0]).unwrap();
        assert_eq!(knn_predict(&data, &[0, 1], 2, 2), 0);
    }

    #[test]
    fn deterministic_under_seed() {
        let a = knn_accuracy(&clusters(6), &[1, 3], 0.6, 4, 9).unwrap();
        let b = knn_accuracy(&clusters(6), &[1, 3], 0.6, 4, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_single_class() {
        let d = DistanceMatrix::from_upper(3, |_, _| 1.0).unwrap();
        let data = LabeledDistances::new(d, vec![0, 0, 0]).unwrap();
        assert!(knn_accuracy(&data, &[1], 0.5, 1, 0).is_err());
    }
}
