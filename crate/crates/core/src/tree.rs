//! Rooted full binary trees with weighted edges, decoded from a distance
//! matrix through the multi-scale hyperbolic embedding.
//!
//! Node numbering: nodes `0..m` are the leaves, internal nodes follow, and
//! every child has a smaller index than its parent. Iterating nodes in index
//! order is therefore a valid bottom-up traversal, and the root is always
//! the last node.

use std::fmt::Write as _;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::diffusion::{
    build_operator, clamp_to_simplex, diffusion_densities, kernel_with_scale, landmark_count,
    landmark_spectrum_with_scale, DiffusionOperator,
};
use crate::error::{Error, Result};
use crate::hyperbolic::{embed, MultiscaleEmbedding};
use crate::matrix::{median, DistanceMatrix};

pub const DEFAULT_WEIGHT_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedBinaryTree {
    parent: Vec<Option<usize>>,
    children: Vec<Option<[usize; 2]>>,
    /// Weight of the edge to the parent; zero at the root.
    edge_weight: Vec<f64>,
    height: Vec<f64>,
    depth: Vec<usize>,
    /// Leaf node -> point label.
    leaf_label: Vec<usize>,
    /// Point label -> leaf node.
    leaf_node: Vec<usize>,
}

impl WeightedBinaryTree {
    /// Builds a tree from the children of each internal node. `internal[i]`
    /// holds the children of node `m + i`; children must precede their
    /// parent and every non-root node must be used exactly once. Heights are
    /// `max(child height + edge weight)`, leaves at zero. Leaf `j` carries
    /// label `j`.
    pub fn from_children(leaf_count: usize, internal: Vec<[usize; 2]>, edge_weight: Vec<f64>) -> Result<Self> {
        let n = 2 * leaf_count - 1;
        if edge_weight.len() != n {
            return Err(Error::Shape(format!("{} edge weights for {n} nodes", edge_weight.len())));
        }
        let mut height = vec![0.0; n];
        for (i, ch) in internal.iter().enumerate() {
            let v = leaf_count + i;
            if ch.iter().any(|&c| c >= v) {
                return Err(Error::Parameter(format!("node {v} has a child with a larger index")));
            }
            height[v] = ch.iter().map(|&c| height[c] + edge_weight[c]).fold(f64::MIN, f64::max);
        }
        Self::assemble((0..leaf_count).collect(), internal, edge_weight, height)
    }

    fn assemble(
        leaf_label: Vec<usize>,
        internal: Vec<[usize; 2]>,
        mut edge_weight: Vec<f64>,
        height: Vec<f64>,
    ) -> Result<Self> {
        let m = leaf_label.len();
        if m < 2 {
            return Err(Error::TrivialInput(m));
        }
        let n = 2 * m - 1;
        if internal.len() != m - 1 || edge_weight.len() != n || height.len() != n {
            return Err(Error::Shape(format!(
                "{} internal nodes, {} weights, {} heights for {m} leaves",
                internal.len(),
                edge_weight.len(),
                height.len()
            )));
        }
        let mut parent = vec![None; n];
        let mut children = vec![None; n];
        for (i, ch) in internal.iter().enumerate() {
            let v = m + i;
            for &c in ch {
                if c >= v || parent[c].is_some() {
                    return Err(Error::Parameter(format!("invalid child {c} of node {v}")));
                }
                parent[c] = Some(v);
            }
            children[v] = Some(*ch);
        }
        if let Some(v) = (0..n - 1).find(|&v| parent[v].is_none()) {
            return Err(Error::Parameter(format!("node {v} is detached from the root")));
        }
        edge_weight[n - 1] = 0.0;
        for v in 0..n - 1 {
            let w = edge_weight[v];
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::Parameter(format!("edge weight {w} above node {v} is not positive")));
            }
        }
        let mut leaf_node = vec![usize::MAX; m];
        for (node, &label) in leaf_label.iter().enumerate() {
            if label >= m || leaf_node[label] != usize::MAX {
                return Err(Error::Parameter(format!("leaf labels are not a bijection onto 0..{m}")));
            }
            leaf_node[label] = node;
        }
        let mut depth = vec![0usize; n];
        for v in (0..n - 1).rev() {
            depth[v] = depth[parent[v].unwrap()] + 1;
        }
        Ok(WeightedBinaryTree {
            parent,
            children,
            edge_weight,
            height,
            depth,
            leaf_label,
            leaf_node,
        })
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_label.len()
    }

    pub fn node_count(&self) -> usize {
        self.parent.len()
    }

    pub fn root(&self) -> usize {
        self.parent.len() - 1
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        node < self.leaf_count()
    }

    pub fn parent(&self, node: usize) -> Option<usize> {
        self.parent[node]
    }

    pub fn children(&self, node: usize) -> Option<[usize; 2]> {
        self.children[node]
    }

    /// Weight of the edge from `node` to its parent (zero at the root).
    pub fn edge_weight(&self, node: usize) -> f64 {
        self.edge_weight[node]
    }

    pub fn edge_weights(&self) -> &[f64] {
        &self.edge_weight
    }

    pub fn height(&self, node: usize) -> f64 {
        self.height[node]
    }

    pub fn depth(&self, node: usize) -> usize {
        self.depth[node]
    }

    /// Point label of a leaf node.
    pub fn leaf_label(&self, node: usize) -> Option<usize> {
        self.leaf_label.get(node).copied()
    }

    /// Leaf node carrying a point label.
    pub fn leaf_node(&self, label: usize) -> Result<usize> {
        self.leaf_node.get(label).copied().ok_or(Error::UnknownLeaf(label))
    }

    /// Sum of edge weights along the path between two labelled leaves.
    pub fn tree_distance(&self, a: usize, b: usize) -> Result<f64> {
        let mut u = self.leaf_node(a)?;
        let mut v = self.leaf_node(b)?;
        let mut total = 0.0;
        while self.depth[u] > self.depth[v] {
            total += self.edge_weight[u];
            u = self.parent[u].unwrap();
        }
        while self.depth[v] > self.depth[u] {
            total += self.edge_weight[v];
            v = self.parent[v].unwrap();
        }
        while u != v {
            total += self.edge_weight[u] + self.edge_weight[v];
            u = self.parent[u].unwrap();
            v = self.parent[v].unwrap();
        }
        Ok(total)
    }

    /// Tree metric between all pairs of labels.
    pub fn pairwise_distances(&self) -> DistanceMatrix {
        let m = self.leaf_count();
        DistanceMatrix::from_upper(m, |a, b| self.tree_distance(a, b).expect("labels in range"))
            .expect("tree metric is a valid distance matrix")
    }

    /// Postorder leaf intervals: leaves are renumbered so that every node's
    /// leaf set is a contiguous range.
    pub fn subtree_leaf_sets(&self) -> LeafIntervals {
        let m = self.leaf_count();
        let n = self.node_count();
        let mut interval = vec![(0usize, 0usize); n];
        let mut order = Vec::with_capacity(m);
        let mut stack = vec![(self.root(), false)];
        while let Some((v, expanded)) = stack.pop() {
            match self.children[v] {
                None => {
                    interval[v] = (order.len(), order.len() + 1);
                    order.push(self.leaf_label[v]);
                }
                Some([a, b]) if !expanded => {
                    stack.push((v, true));
                    stack.push((b, false));
                    stack.push((a, false));
                }
                Some([a, b]) => interval[v] = (interval[a].0, interval[b].1),
            }
        }
        let mut position = vec![0; m];
        for (p, &label) in order.iter().enumerate() {
            position[label] = p;
        }
        LeafIntervals {
            order,
            position,
            interval,
        }
    }

    /// Newick text with branch lengths; leaf names are the point labels.
    pub fn to_newick(&self) -> String {
        self.newick_with(|label| label.to_string())
    }

    /// Newick text naming leaf `label` as `names[label]`.
    pub fn to_newick_named(&self, names: &[String]) -> String {
        self.newick_with(|label| names[label].clone())
    }

    fn newick_with(&self, name: impl Fn(usize) -> String) -> String {
        let mut out = String::new();
        let mut stack = vec![(self.root(), 0u8)];
        while let Some((v, state)) = stack.pop() {
            match (self.children[v], state) {
                (None, _) => {
                    out.push_str(&quote_name(&name(self.leaf_label[v])));
                    self.close_node(v, &mut out);
                }
                (Some([a, _]), 0) => {
                    out.push('(');
                    stack.push((v, 1));
                    stack.push((a, 0));
                }
                (Some([_, b]), 1) => {
                    out.push(',');
                    stack.push((v, 2));
                    stack.push((b, 0));
                }
                (Some(_), _) => {
                    out.push(')');
                    self.close_node(v, &mut out);
                }
            }
        }
        out.push(';');
        out
    }

    fn close_node(&self, v: usize, out: &mut String) {
        if v != self.root() {
            // Shortest representation that round-trips through f64 parsing.
            write!(out, ":{}", self.edge_weight[v]).unwrap();
        }
    }

    /// Parses Newick text. Leaves are labelled in order of appearance and
    /// their names returned by label.
    pub fn from_newick(text: &str) -> Result<(Self, Vec<String>)> {
        let parsed = NewickParser::new(text).parse()?;
        let names = parsed.leaf_names.clone();
        let labels = (0..names.len()).collect();
        Ok((parsed.build(labels)?, names))
    }

    /// Parses Newick text, labelling each leaf by the position of its name in
    /// `names`.
    pub fn from_newick_named(text: &str, names: &[String]) -> Result<Self> {
        let parsed = NewickParser::new(text).parse()?;
        if parsed.leaf_names.len() != names.len() {
            return Err(Error::Shape(format!(
                "newick has {} leaves, expected {}",
                parsed.leaf_names.len(),
                names.len()
            )));
        }
        let index: std::collections::HashMap<&str, usize> =
            names.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let labels = parsed
            .leaf_names
            .iter()
            .map(|s| {
                index.get(s.as_str()).copied().ok_or_else(|| Error::Newick {
                    pos: 0,
                    msg: format!("unknown leaf name {s:?}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        parsed.build(labels)
    }
}

/// Postorder leaf ordering and per-node leaf ranges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeafIntervals {
    /// Postorder position -> label.
    pub order: Vec<usize>,
    /// Label -> postorder position.
    pub position: Vec<usize>,
    /// Per node, the half-open range of postorder positions of its leaves.
    pub interval: Vec<(usize, usize)>,
}

impl LeafIntervals {
    pub fn len(&self, node: usize) -> usize {
        let (a, b) = self.interval[node];
        b - a
    }

    /// Labels of the leaves under `node`.
    pub fn leaves(&self, node: usize) -> &[usize] {
        let (a, b) = self.interval[node];
        &self.order[a..b]
    }
}

pub fn tree_distance(tree: &WeightedBinaryTree, a: usize, b: usize) -> Result<f64> {
    tree.tree_distance(a, b)
}

pub fn subtree_leaf_sets(tree: &WeightedBinaryTree) -> LeafIntervals {
    tree.subtree_leaf_sets()
}

pub fn to_newick(tree: &WeightedBinaryTree) -> String {
    tree.to_newick()
}

fn quote_name(name: &str) -> String {
    let plain = !name.is_empty()
        && !name
            .chars()
            .any(|c| c.is_whitespace() || "()[]',:;".contains(c));
    if plain {
        name.to_string()
    } else {
        format!("'{}'", name.replace('\'', "''"))
    }
}

struct ParsedNewick {
    /// (children, branch length) per node in postorder; leaves have no children.
    nodes: Vec<(Vec<usize>, Option<f64>)>,
    leaf_names: Vec<String>,
}

impl ParsedNewick {
    fn build(self, labels: Vec<usize>) -> Result<WeightedBinaryTree> {
        let m = self.leaf_names.len();
        if m < 2 {
            return Err(Error::TrivialInput(m));
        }
        // Renumber: leaves by appearance, internal nodes by postorder.
        let mut new_id = vec![0usize; self.nodes.len()];
        let (mut next_leaf, mut next_internal) = (0, m);
        for (i, (ch, _)) in self.nodes.iter().enumerate() {
            if ch.is_empty() {
                new_id[i] = next_leaf;
                next_leaf += 1;
            } else {
                new_id[i] = next_internal;
                next_internal += 1;
            }
        }
        let n = 2 * m - 1;
        if self.nodes.len() != n {
            return Err(Error::Newick {
                pos: 0,
                msg: "tree is not full binary".into(),
            });
        }
        let mut internal = vec![[0usize; 2]; m - 1];
        let mut weight = vec![0.0; n];
        let root = self.nodes.len() - 1;
        for (i, (ch, len)) in self.nodes.iter().enumerate() {
            if !ch.is_empty() {
                internal[new_id[i] - m] = [new_id[ch[0]], new_id[ch[1]]];
            }
            if i != root {
                weight[new_id[i]] = len.ok_or_else(|| Error::Newick {
                    pos: 0,
                    msg: "missing branch length".into(),
                })?;
            }
        }
        let mut height = vec![0.0; n];
        for (i, ch) in internal.iter().enumerate() {
            height[m + i] = ch.iter().map(|&c| height[c] + weight[c]).fold(f64::MIN, f64::max);
        }
        WeightedBinaryTree::assemble(labels, internal, weight, height)
    }
}

struct NewickParser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> NewickParser<'a> {
    fn new(text: &'a str) -> Self {
        NewickParser {
            src: text.as_bytes(),
            pos: 0,
        }
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::Newick {
            pos: self.pos,
            msg: msg.into(),
        })
    }

    fn skip_ws(&mut self) {
        loop {
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.peek() == Some(b'[') {
                while self.pos < self.src.len() && self.src[self.pos] != b']' {
                    self.pos += 1;
                }
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected '{}'", c as char))
        }
    }

    fn parse(mut self) -> Result<ParsedNewick> {
        let mut out = ParsedNewick {
            nodes: Vec::new(),
            leaf_names: Vec::new(),
        };
        // Explicit stack of open internal nodes and their finished children.
        let mut open: Vec<Vec<usize>> = Vec::new();
        loop {
            self.skip_ws();
            if self.peek() == Some(b'(') {
                self.pos += 1;
                open.push(Vec::new());
                continue;
            }
            let name = self.name()?;
            if name.is_empty() {
                return self.err("empty leaf name");
            }
            let len = self.branch_length()?;
            out.leaf_names.push(name);
            out.nodes.push((Vec::new(), len));
            let mut finished = out.nodes.len() - 1;
            loop {
                let Some(siblings) = open.last_mut() else {
                    self.expect(b';')?;
                    self.skip_ws();
                    if self.pos != self.src.len() {
                        return self.err("trailing characters after ';'");
                    }
                    return Ok(out);
                };
                siblings.push(finished);
                self.skip_ws();
                match self.peek() {
                    Some(b',') => {
                        self.pos += 1;
                        break;
                    }
                    Some(b')') => {
                        self.pos += 1;
                        let ch = open.pop().unwrap();
                        if ch.len() != 2 {
                            return self.err(format!("node with {} children; only binary trees are supported", ch.len()));
                        }
                        // Internal node labels are accepted and ignored.
                        self.name()?;
                        let len = self.branch_length()?;
                        out.nodes.push((ch, len));
                        finished = out.nodes.len() - 1;
                    }
                    _ => return self.err("expected ',' or ')'"),
                }
            }
        }
    }

    fn name(&mut self) -> Result<String> {
        self.skip_ws();
        if self.peek() == Some(b'\'') {
            self.pos += 1;
            let mut s = Vec::new();
            loop {
                match self.peek() {
                    None => return self.err("unterminated quoted name"),
                    Some(b'\'') if self.src.get(self.pos + 1) == Some(&b'\'') => {
                        s.push(b'\'');
                        self.pos += 2;
                    }
                    Some(b'\'') => {
                        self.pos += 1;
                        break;
                    }
                    Some(c) => {
                        s.push(c);
                        self.pos += 1;
                    }
                }
            }
            return String::from_utf8(s).or_else(|_| self.err("name is not utf-8"));
        }
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_whitespace() || b"()[]',:;".contains(&c) {
                break;
            }
            self.pos += 1;
        }
        String::from_utf8(self.src[start..self.pos].to_vec()).or_else(|_| self.err("name is not utf-8"))
    }

    fn branch_length(&mut self) -> Result<Option<f64>> {
        self.skip_ws();
        if self.peek() != Some(b':') {
            return Ok(None);
        }
        self.pos += 1;
        self.skip_ws();
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_digit() || b"+-.eE".contains(&c) {
                self.pos += 1;
            } else {
                break;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        match text.parse::<f64>() {
            Ok(v) => Ok(Some(v)),
            Err(_) => self.err(format!("bad branch length {text:?}")),
        }
    }
}

/// Parameters of the hyperbolic tree decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    /// Largest dyadic scale `K`; scales `0..=K` are embedded.
    pub max_scale: usize,
    /// Kernel scale as a multiple of the median squared pairwise distance.
    pub scale_multiplier: f64,
    pub density_normalize: bool,
    pub weight_floor: f64,
    /// Use the landmark operator instead of the full one.
    pub landmark: Option<LandmarkConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandmarkConfig {
    /// `c` in `n′ = ⌈n^c⌉`.
    pub exponent: f64,
    pub seed: u64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            max_scale: 5,
            scale_multiplier: 0.5,
            density_normalize: false,
            weight_floor: DEFAULT_WEIGHT_FLOOR,
            landmark: None,
        }
    }
}

/// A decoded tree with the embedding it was read from.
#[derive(Debug, Clone)]
pub struct DecodedTree {
    pub tree: WeightedBinaryTree,
    pub embedding: MultiscaleEmbedding,
    pub kernel_scale: f64,
}

/// Kernel scale used by the decoder: `multiplier × median` of the squared
/// distances. When that median is zero the median over the positive
/// distances is used instead, and when
/// every distance is zero the kernel is constant for any scale.
pub fn decoder_kernel_scale(distances: &DistanceMatrix, multiplier: f64) -> f64 {
    let median_all = distances.median_squared_offdiagonal();
    let base = if median_all > 0.0 {
        median_all
    } else {
        let positive: Vec<f64> = distances
            .upper_entries()
            .into_iter()
            .filter(|&d| d > 0.0)
            .map(|d| d * d)
            .collect();
        if positive.is_empty() {
            1.0
        } else {
            median(positive)
        }
    };
    multiplier * base
}

fn decoder_operator(distances: &DistanceMatrix, config: &TreeConfig, scale: f64) -> Result<DiffusionOperator> {
    let m = distances.len();
    if let Some(lm) = config.landmark {
        if m >= 4 && landmark_count(m, lm.exponent) >= 2 {
            let spectrum = landmark_spectrum_with_scale(distances, scale, lm.exponent, lm.seed)?;
            return Ok(spectrum.to_operator());
        }
        log::debug!("too few points ({m}) for landmarks; using the full operator");
    }
    build_operator(&kernel_with_scale(distances, scale)?, config.density_normalize)
}

/// Decodes a binary tree: kernel, diffusion operator, dyadic densities,
/// embedding, then greedy merging of leaf pairs in ascending linkage order.
pub fn decode_tree(distances: &DistanceMatrix, config: &TreeConfig) -> Result<WeightedBinaryTree> {
    decode_tree_detailed(distances, config).map(|d| d.tree)
}

pub fn decode_tree_detailed(distances: &DistanceMatrix, config: &TreeConfig) -> Result<DecodedTree> {
    let m = distances.len();
    if m < 2 {
        return Err(Error::TrivialInput(m));
    }
    if !(config.scale_multiplier.is_finite() && config.scale_multiplier > 0.0) {
        return Err(Error::Parameter(format!(
            "scale multiplier must be positive, got {}",
            config.scale_multiplier
        )));
    }
    if !(config.weight_floor > 0.0) {
        return Err(Error::Parameter("weight floor must be positive".into()));
    }
    let scale = decoder_kernel_scale(distances, config.scale_multiplier);
    let op = decoder_operator(distances, config, scale)?;
    let densities: Vec<Array2<f64>> = (0..=config.max_scale)
        .map(|k| clamp_to_simplex(diffusion_densities(&op, k)))
        .collect();
    let embedding = embed(&densities)?;
    let tree = merge_by_linkage(&embedding, config.weight_floor)?;
    Ok(DecodedTree {
        tree,
        embedding,
        kernel_scale: scale,
    })
}

/// Greedy agglomeration over all pairs sorted by ascending linkage score
/// (ties broken by the index pair). Each merge creates a node at height
/// `½ d_M(j, j′)`, raised if needed to sit at least `weight_floor` above
/// both children.
pub fn merge_by_linkage(embedding: &MultiscaleEmbedding, weight_floor: f64) -> Result<WeightedBinaryTree> {
    let m = embedding.len();
    if m < 2 {
        return Err(Error::TrivialInput(m));
    }
    let linkage = embedding.pairwise_linkage();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(m * (m - 1) / 2);
    for j in 0..m {
        for jp in (j + 1)..m {
            pairs.push((linkage[[j, jp]], j, jp));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let n = 2 * m - 1;
    let mut sets = DisjointSets::new(m);
    // Current subtree node for each set representative.
    let mut top: Vec<usize> = (0..m).collect();
    let mut internal = Vec::with_capacity(m - 1);
    let mut height = vec![0.0f64; n];
    let mut weight = vec![0.0f64; n];
    for &(_, j, jp) in &pairs {
        if internal.len() == m - 1 {
            break;
        }
        let (rj, rjp) = (sets.find(j), sets.find(jp));
        if rj == rjp {
            continue;
        }
        let (a, b) = (top[rj], top[rjp]);
        let v = m + internal.len();
        let h = (0.5 * embedding.distance(j, jp)).max(height[a].max(height[b]) + weight_floor);
        height[v] = h;
        weight[a] = (h - height[a]).max(weight_floor);
        weight[b] = (h - height[b]).max(weight_floor);
        internal.push([a, b]);
        let r = sets.union(rj, rjp);
        top[r] = v;
    }
    WeightedBinaryTree::assemble((0..m).collect(), internal, weight, height)
}

struct DisjointSets {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSets {
    fn new(n: usize) -> Self {
        DisjointSets {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> usize {
        let (a, b) = (self.find(a), self.find(b));
        if a == b {
            return a;
        }
        let (hi, lo) = if self.rank[a] >= self.rank[b] { (a, b) } else { (b, a) };
        self.parent[lo] = hi;
        if self.rank[hi] == self.rank[lo] {
            self.rank[hi] += 1;
        }
        hi
    }
}
