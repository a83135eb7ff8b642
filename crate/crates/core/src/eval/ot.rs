//! Exact discrete optimal transport by successive shortest paths on the
//! bipartite transport network. Intended for small instances.

use ndarray::ArrayView2;

use crate::error::{Error, Result};

/// Remaining supply below this is treated as exhausted.
const FLOW_EPS: f64 = 1e-15;
/// Relative improvement a relaxation must make.
const RELAX_EPS: f64 = 1e-12;

struct Edge {
    to: usize,
    rev: usize,
    cap: f64,
    cost: f64,
}

struct Network {
    adj: Vec<Vec<Edge>>,
}

impl Network {
    fn new(nodes: usize) -> Self {
        Network {
            adj: (0..nodes).map(|_| Vec::new()).collect(),
        }
    }

    fn add_edge(&mut self, from: usize, to: usize, cap: f64, cost: f64) {
        let rev_from = self.adj[to].len();
        let rev_to = self.adj[from].len();
        self.adj[from].push(Edge {
            to,
            rev: rev_from,
            cap,
            cost,
        });
        self.adj[to].push(Edge {
            to: from,
            rev: rev_to,
            cap: 0.0,
            cost: -cost,
        });
    }

    /// Bellman-Ford shortest path over edges with residual capacity.
    /// Returns the predecessor `(node, edge)` of every reached node.
    fn shortest_path(&self, source: usize, sink: usize) -> Option<Vec<Option<(usize, usize)>>> {
        let n = self.adj.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut pred = vec![None; n];
        dist[source] = 0.0;
        for _ in 0..n {
            let mut changed = false;
            for u in 0..n {
                if dist[u].is_infinite() {
                    continue;
                }
                for (ei, e) in self.adj[u].iter().enumerate() {
                    let candidate = dist[u] + e.cost;
                    // Relative slack keeps rounding noise from creating
                    // spurious negative cycles among tied costs.
                    if e.cap > FLOW_EPS && candidate < dist[e.to] - RELAX_EPS * (1.0 + candidate.abs()) {
                        dist[e.to] = dist[u] + e.cost;
                        pred[e.to] = Some((u, ei));
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        dist[sink].is_finite().then_some(pred)
    }
}

/// Minimum cost of moving `mu` onto `nu` with ground cost `cost`
/// (`mu.len() × nu.len()`). Both marginals must be nonnegative with equal
/// totals (within `1e-9`).
pub fn exact_ot(cost: ArrayView2<'_, f64>, mu: &[f64], nu: &[f64]) -> Result<f64> {
    let (p, q) = cost.dim();
    if mu.len() != p || nu.len() != q {
        return Err(Error::Shape(format!(
            "cost is {p}×{q}, marginals have lengths {} and {}",
            mu.len(),
            nu.len()
        )));
    }
    if cost.iter().any(|&c| !(c >= 0.0 && c.is_finite())) {
        return Err(Error::Parameter("transport costs must be finite and nonnegative".into()));
    }
    if mu.iter().chain(nu).any(|&v| !(v >= 0.0)) {
        return Err(Error::Parameter("marginals must be nonnegative".into()));
    }
    let (sa, sb): (f64, f64) = (mu.iter().sum(), nu.iter().sum());
    if (sa - sb).abs() > 1e-9 {
        return Err(Error::Marginal(sa, sb));
    }

    let source = p + q;
    let sink = source + 1;
    let mut net = Network::new(p + q + 2);
    for (i, &m) in mu.iter().enumerate() {
        net.add_edge(source, i, m, 0.0);
    }
    for (j, &v) in nu.iter().enumerate() {
        net.add_edge(p + j, sink, v, 0.0);
    }
    for i in 0..p {
        for j in 0..q {
            net.add_edge(i, p + j, f64::INFINITY, cost[[i, j]]);
        }
    }

    let target = sa.min(sb);
    let mut shipped = 0.0;
    let mut total_cost = 0.0;
    while target - shipped > FLOW_EPS {
        let Some(pred) = net.shortest_path(source, sink) else {
            break;
        };
        let mut bottleneck = target - shipped;
        let mut v = sink;
        let mut steps = 0;
        while let Some((u, ei)) = pred[v] {
            bottleneck = bottleneck.min(net.adj[u][ei].cap);
            v = u;
            steps += 1;
            if steps > net.adj.len() {
                return Err(Error::Parameter("transport network has a negative cycle".into()));
            }
        }
        if v != source {
            break;
        }
        let mut v = sink;
        while let Some((u, ei)) = pred[v] {
            let (to, rev, c) = {
                let e = &mut net.adj[u][ei];
                e.cap -= bottleneck;
                (e.to, e.rev, e.cost)
            };
            net.adj[to][rev].cap += bottleneck;
            total_cost += bottleneck * c;
            v = u;
        }
        shipped += bottleneck;
    }
    Ok(total_cost)
}
