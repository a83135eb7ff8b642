#![allow(dead_code)]

use cotwd_core::{DistanceMatrix, WeightedBinaryTree};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random full binary tree on `m` leaves: repeatedly joins two random
/// subtrees. Leaf labels are shuffled so they are not in postorder.
pub fn random_tree(m: usize, rng: &mut ChaCha8Rng) -> WeightedBinaryTree {
    let n = 2 * m - 1;
    let mut active: Vec<usize> = (0..m).collect();
    let mut internal = Vec::with_capacity(m - 1);
    for v in m..n {
        active.shuffle(rng);
        let a = active.pop().unwrap();
        let b = active.pop().unwrap();
        internal.push([a, b]);
        active.push(v);
    }
    let weights = (0..n).map(|_| rng.random_range(0.05..2.0)).collect();
    let tree = WeightedBinaryTree::from_children(m, internal, weights).unwrap();
    // Relabel through Newick with shuffled names to scramble leaf labels.
    let mut names: Vec<String> = (0..m).map(|i| format!("l{i}")).collect();
    let newick = tree.to_newick_named(&names);
    names.shuffle(rng);
    WeightedBinaryTree::from_newick_named(&newick, &names).unwrap()
}

pub fn random_simplex(m: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..m).map(|_| rng.random::<f64>() + 1e-3).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

pub fn random_point_distances(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> DistanceMatrix {
    let pts: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..dim).map(|_| rng.random::<f64>()).collect())
        .collect();
    DistanceMatrix::from_upper(n, |i, j| {
        pts[i].iter().zip(&pts[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    })
    .unwrap()
}

/// Shortest paths on the explicit weighted graph of `tree`, by Dijkstra.
pub fn dijkstra_leaf_distances(tree: &WeightedBinaryTree) -> Vec<Vec<f64>> {
    let n = tree.node_count();
    let mut adj = vec![Vec::new(); n];
    for v in 0..n {
        if let Some(p) = tree.parent(v) {
            adj[v].push((p, tree.edge_weight(v)));
            adj[p].push((v, tree.edge_weight(v)));
        }
    }
    let m = tree.leaf_count();
    let mut out = vec![vec![0.0; m]; m];
    for a in 0..m {
        let src = tree.leaf_node(a).unwrap();
        let mut dist = vec![f64::INFINITY; n];
        let mut done = vec![false; n];
        dist[src] = 0.0;
        for _ in 0..n {
            let u = (0..n)
                .filter(|&u| !done[u])
                .min_by(|&x, &y| dist[x].total_cmp(&dist[y]))
                .unwrap();
            done[u] = true;
            for &(w, len) in &adj[u] {
                if dist[u] + len < dist[w] {
                    dist[w] = dist[u] + len;
                }
            }
        }
        for b in 0..m {
            out[a][b] = dist[tree.leaf_node(b).unwrap()];
        }
    }
    out
}
