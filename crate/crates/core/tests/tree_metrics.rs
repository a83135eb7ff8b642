mod common;

use common::{dijkstra_leaf_distances, random_point_distances, random_tree, rng};
use cotwd_core::tree::{decode_tree, TreeConfig};
use cotwd_core::{DistanceMatrix, WeightedBinaryTree};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tree_distance_matches_dijkstra(seed in any::<u64>(), m in 2usize..12) {
        let tree = random_tree(m, &mut rng(seed));
        let oracle = dijkstra_leaf_distances(&tree);
        for a in 0..m {
            for b in 0..m {
                let d = tree.tree_distance(a, b).unwrap();
                prop_assert!((d - oracle[a][b]).abs() <= 1e-12 * (1.0 + oracle[a][b]));
            }
        }
    }

    #[test]
    fn four_point_condition(seed in any::<u64>(), m in 4usize..=16) {
        let d = random_tree(m, &mut rng(seed)).pairwise_distances();
        let d = d.as_array();
        for i in 0..m {
            for j in (i + 1)..m {
                for k in (j + 1)..m {
                    for l in (k + 1)..m {
                        let mut s = [
                            d[[i, j]] + d[[k, l]],
                            d[[i, k]] + d[[j, l]],
                            d[[i, l]] + d[[j, k]],
                        ];
                        s.sort_by(f64::total_cmp);
                        // The two largest sums coincide.
                        prop_assert!((s[2] - s[1]).abs() <= 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn subtree_intervals_partition(seed in any::<u64>(), m in 2usize..40) {
        let tree = random_tree(m, &mut rng(seed));
        let iv = tree.subtree_leaf_sets();
        prop_assert_eq!(iv.interval[tree.root()], (0, m));
        for v in 0..tree.node_count() {
            match tree.children(v) {
                None => {
                    prop_assert_eq!(iv.len(v), 1);
                    prop_assert_eq!(iv.leaves(v), &[tree.leaf_label(v).unwrap()][..]);
                }
                Some([a, b]) => {
                    let (ia, ib) = (iv.interval[a], iv.interval[b]);
                    prop_assert_eq!(ia.1, ib.0);
                    prop_assert_eq!((ia.0, ib.1), iv.interval[v]);
                }
            }
        }
        let mut order = iv.order.clone();
        order.sort_unstable();
        prop_assert_eq!(order, (0..m).collect::<Vec<_>>());
    }

    #[test]
    fn newick_round_trip(seed in any::<u64>(), m in 2usize..30) {
        let tree = random_tree(m, &mut rng(seed));
        let names: Vec<String> = (0..m).map(|i| format!("leaf {i}")).collect();
        let text = tree.to_newick_named(&names);
        let back = WeightedBinaryTree::from_newick_named(&text, &names).unwrap();
        let (a, b) = (tree.pairwise_distances(), back.pairwise_distances());
        for (x, y) in a.as_array().iter().zip(b.as_array()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
        prop_assert_eq!(back.to_newick_named(&names), text);
    }

    #[test]
    fn decoded_trees_are_valid(seed in any::<u64>(), m in 2usize..40) {
        let d = random_point_distances(m, 3, &mut rng(seed));
        let tree = decode_tree(&d, &TreeConfig::default()).unwrap();
        prop_assert_eq!(tree.leaf_count(), m);
        prop_assert_eq!(tree.node_count(), 2 * m - 1);
        for v in 0..tree.node_count() {
            if let Some(p) = tree.parent(v) {
                prop_assert!(tree.edge_weight(v) >= 1e-12);
                prop_assert!(tree.height(v) < tree.height(p));
            }
        }
        for label in 0..m {
            let mut v = tree.leaf_node(label).unwrap();
            while let Some(p) = tree.parent(v) {
                v = p;
            }
            prop_assert_eq!(v, tree.root());
        }
    }
}

#[test]
fn newick_two_leaf_example() {
    let tree = WeightedBinaryTree::from_children(2, vec![[0, 1]], vec![0.5, 0.5, 0.0]).unwrap();
    let names = vec!["f0".to_string(), "f1".to_string()];
    assert_eq!(tree.to_newick_named(&names), "(f0:0.5,f1:0.5);");
}

#[test]
fn two_points_split_the_distance() {
    let d = DistanceMatrix::from_upper(2, |_, _| 3.0).unwrap();
    let tree = decode_tree(&d, &TreeConfig::default()).unwrap();
    // The embedding distance need not equal the input; the split must be even.
    assert_eq!(tree.edge_weight(0), tree.edge_weight(1));
    assert_eq!(tree.tree_distance(0, 1).unwrap(), 2.0 * tree.edge_weight(0));
}

/// Single linkage on the input distances, as a cluster oracle for well
/// separated data.
fn single_linkage_pairs(d: &DistanceMatrix) -> Vec<(usize, usize)> {
    let n = d.len();
    let mut cluster: Vec<usize> = (0..n).collect();
    let mut pairs = Vec::new();
    let mut edges: Vec<(f64, usize, usize)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .map(|(i, j)| (d.get(i, j), i, j))
        .collect();
    edges.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (_, i, j) in edges {
        let (ci, cj) = (cluster[i], cluster[j]);
        if ci != cj {
            pairs.push((i, j));
            for c in cluster.iter_mut() {
                if *c == cj {
                    *c = ci;
                }
            }
        }
    }
    pairs
}

#[test]
fn tight_pairs_become_cherries() {
    let pts = [0.0f64, 0.1, 10.0, 10.15];
    let d = DistanceMatrix::from_upper(4, |i, j| (pts[i] - pts[j]).abs()).unwrap();
    let tree = decode_tree(&d, &TreeConfig::default()).unwrap();
    for &(i, j) in &single_linkage_pairs(&d)[..2] {
        let (a, b) = (tree.leaf_node(i).unwrap(), tree.leaf_node(j).unwrap());
        assert_eq!(tree.parent(a), tree.parent(b), "{i} and {j} should be siblings");
    }
}

#[test]
fn decode_is_deterministic() {
    let d = random_point_distances(30, 4, &mut rng(5));
    let a = decode_tree(&d, &TreeConfig::default()).unwrap();
    let b = decode_tree(&d, &TreeConfig::default()).unwrap();
    assert_eq!(a, b);
}
