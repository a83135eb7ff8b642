//! Synthetic user × video interaction data with known hierarchies on both
//! modes.
//!
//! Embeddings diffuse from a root down a fixed category tree: each child is
//! Gaussian around its parent. Entries are distances between user and video
//! embeddings plus noise, shifted to be nonnegative, with rows and columns
//! shuffled.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{DataMatrix, DistanceMatrix};

/// A two-level category tree: top-level categories, each with named
/// subcategories holding a number of leaves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hierarchy {
    pub categories: Vec<Category>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub name: String,
    pub subcategories: Vec<(String, usize)>,
}

impl Hierarchy {
    fn uniform(layout: &[(&str, &[&str])], leaves: usize) -> Self {
        Hierarchy {
            categories: layout
                .iter()
                .map(|(name, subs)| Category {
                    name: name.to_string(),
                    subcategories: subs.iter().map(|s| (s.to_string(), leaves)).collect(),
                })
                .collect(),
        }
    }

    /// Videos: fiction, documentary and animation with their subgenres.
    pub fn videos(per_subgenre: usize) -> Self {
        Hierarchy::uniform(
            &[
                ("fiction", &["action", "drama", "sci-fi"]),
                ("documentary", &["biography", "historical"]),
                ("animation", &["family", "comedy"]),
            ],
            per_subgenre,
        )
    }

    /// Users: viewing device, then viewing context.
    pub fn users(per_context: usize) -> Self {
        Hierarchy::uniform(
            &[
                ("mobile", &["commute", "home"]),
                ("tablet", &["commute", "home"]),
                ("tv", &["family", "solo"]),
                ("desktop", &["work", "leisure"]),
            ],
            per_context,
        )
    }

    pub fn leaf_count(&self) -> usize {
        self.categories
            .iter()
            .flat_map(|c| c.subcategories.iter().map(|s| s.1))
            .sum()
    }

    /// `(category, subcategory)` index pair of every leaf, in generation
    /// order.
    fn leaves(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut sub_id = 0;
        for (c, cat) in self.categories.iter().enumerate() {
            for (_, count) in &cat.subcategories {
                out.extend(std::iter::repeat_n((c, sub_id), *count));
                sub_id += 1;
            }
        }
        out
    }

    fn validate(&self, what: &str) -> Result<()> {
        if self.categories.is_empty() || self.categories.iter().any(|c| c.subcategories.is_empty()) {
            return Err(Error::Parameter(format!("{what} hierarchy has an empty level")));
        }
        if self.leaf_count() < 2 {
            return Err(Error::Parameter(format!("{what} hierarchy needs at least two leaves")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToySpec {
    pub sigma_root_videos: f64,
    pub sigma_root_users: f64,
    pub sigma_child_videos: f64,
    pub sigma_child_users: f64,
    pub noise_sigma: f64,
    pub embed_dim: usize,
    pub seed: u64,
    pub user_tree: Hierarchy,
    pub video_tree: Hierarchy,
}

impl Default for ToySpec {
    fn default() -> Self {
        ToySpec {
            sigma_root_videos: 0.5,
            sigma_root_users: 0.25,
            sigma_child_videos: 1.0,
            sigma_child_users: 0.6,
            noise_sigma: 0.1,
            embed_dim: 30,
            seed: 0,
            user_tree: Hierarchy::users(8),
            video_tree: Hierarchy::videos(8),
        }
    }
}

impl ToySpec {
    pub fn with_seed(seed: u64) -> Self {
        ToySpec {
            seed,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let sigmas = [
            self.sigma_root_videos,
            self.sigma_root_users,
            self.sigma_child_videos,
            self.sigma_child_users,
        ];
        if sigmas.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Parameter("toy sigmas must be positive".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Parameter("noise sigma must be nonnegative".into()));
        }
        if self.embed_dim == 0 {
            return Err(Error::Parameter("embedding dimension must be at least 1".into()));
        }
        self.user_tree.validate("user")?;
        self.video_tree.validate("video")
    }
}

#[derive(Debug, Clone)]
pub struct ToyData {
    /// Users × videos, after shuffling.
    pub x: DataMatrix,
    /// Top-level category of every row / column of `x`.
    pub user_labels: Vec<usize>,
    pub video_labels: Vec<usize>,
    /// Second-level category (global index) of every row / column.
    pub user_sublabels: Vec<usize>,
    pub video_sublabels: Vec<usize>,
    /// `row_order[i]` is the generation index of row `i`.
    pub row_order: Vec<usize>,
    pub col_order: Vec<usize>,
    /// Edge-count distances in the true hierarchies, aligned with `x`.
    pub user_tree_distances: DistanceMatrix,
    pub video_tree_distances: DistanceMatrix,
}

fn gaussian_child(parent: &[f64], sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let normal = Normal::new(0.0, sigma).expect("positive sigma");
    parent.iter().map(|&p| p + normal.sample(rng)).collect()
}

/// Root-to-leaf Gaussian diffusion over `tree`; one embedding per leaf in
/// generation order.
fn diffuse(tree: &Hierarchy, dim: usize, sigma_root: f64, sigma_child: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let root = gaussian_child(&vec![0.0; dim], sigma_root, rng);
    let mut leaves = Vec::with_capacity(tree.leaf_count());
    for cat in &tree.categories {
        let c = gaussian_child(&root, sigma_child, rng);
        for (_, count) in &cat.subcategories {
            let s = gaussian_child(&c, sigma_child, rng);
            for _ in 0..*count {
                leaves.push(gaussian_child(&s, sigma_child, rng));
            }
        }
    }
    leaves
}

/// Path length in edges between two leaves of a two-level hierarchy.
fn hierarchy_distance(a: (usize, usize), b: (usize, usize)) -> f64 {
    if a.1 == b.1 {
        2.0
    } else if a.0 == b.0 {
        4.0
    } else {
        6.0
    }
}

pub fn generate_toy(spec: &ToySpec) -> Result<ToyData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let videos = diffuse(
        &spec.video_tree,
        spec.embed_dim,
        spec.sigma_root_videos,
        spec.sigma_child_videos,
        &mut rng,
    );
    let users = diffuse(
        &spec.user_tree,
        spec.embed_dim,
        spec.sigma_root_users,
        spec.sigma_child_users,
        &mut rng,
    );
    let (n, m) = (users.len(), videos.len());
    let mut y = Array2::from_shape_fn((n, m), |(i, j)| {
        users[i]
            .iter()
            .zip(&videos[j])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    });
    if spec.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, spec.noise_sigma).expect("positive sigma");
        y.mapv_inplace(|v| v + noise.sample(&mut rng));
    }
    let min = y.iter().copied().fold(f64::INFINITY, f64::min);
    if min < 0.0 {
        y.mapv_inplace(|v| v - min);
    }

    let mut row_order: Vec<usize> = (0..n).collect();
    let mut col_order: Vec<usize> = (0..m).collect();
    row_order.shuffle(&mut rng);
    col_order.shuffle(&mut rng);
    let x = Array2::from_shape_fn((n, m), |(i, j)| y[[row_order[i], col_order[j]]]);

    let user_leaves = spec.user_tree.leaves();
    let video_leaves = spec.video_tree.leaves();
    let users_at: Vec<(usize, usize)> = row_order.iter().map(|&r| user_leaves[r]).collect();
    let videos_at: Vec<(usize, usize)> = col_order.iter().map(|&c| video_leaves[c]).collect();
    Ok(ToyData {
        x: DataMatrix::new(x)?,
        user_labels: users_at.iter().map(|l| l.0).collect(),
        video_labels: videos_at.iter().map(|l| l.0).collect(),
        user_sublabels: users_at.iter().map(|l| l.1).collect(),
        video_sublabels: videos_at.iter().map(|l| l.1).collect(),
        user_tree_distances: DistanceMatrix::from_upper(n, |i, j| hierarchy_distance(users_at[i], users_at[j]))?,
        video_tree_distances: DistanceMatrix::from_upper(m, |i, j| hierarchy_distance(videos_at[i], videos_at[j]))?,
        row_order,
        col_order,
    })
}
