//! Structural statistics of a contact network: edge and triangle counts,
//! betweenness and closeness centrality, and the degree, edgewise
//! shared-partner and geodesic-distance distributions.
//!
//! Conventions:
//! * betweenness sums `σ_jk(i)/σ_jk` over unordered pairs `{j, k}` not
//!   containing `i`, unnormalized;
//! * closeness is `1/Σ dist(i, j)` over nodes reachable from `i`, and 0 for
//!   an isolated node;
//! * the shared-partner count of an edge is the number of common neighbours
//!   of its endpoints.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::ctn::ContactGraph;

pub fn count_edges(g: &ContactGraph) -> usize {
    (0..g.node_count()).map(|i| g.degree(i)).sum::<usize>() / 2
}

/// Triangles, each counted once.
pub fn count_triangles(g: &ContactGraph) -> usize {
    let mut total = 0;
    for i in 0..g.node_count() {
        for &j in g.neighbors(i).iter().filter(|&&j| j > i) {
            total += common_neighbors(g, i, j).filter(|&w| w > j).count();
        }
    }
    total
}

/// Intersection of two sorted neighbour lists.
fn common_neighbors<'a>(g: &'a ContactGraph, i: usize, j: usize) -> impl Iterator<Item = usize> + 'a {
    let (a, b) = (g.neighbors(i), g.neighbors(j));
    let (mut x, mut y) = (0, 0);
    std::iter::from_fn(move || {
        while x < a.len() && y < b.len() {
            match a[x].cmp(&b[y]) {
                std::cmp::Ordering::Less => x += 1,
                std::cmp::Ordering::Greater => y += 1,
                std::cmp::Ordering::Equal => {
                    let v = a[x];
                    x += 1;
                    y += 1;
                    return Some(v);
                }
            }
        }
        None
    })
}

/// Unweighted BFS distances from `s`; `None` for unreachable nodes.
pub fn bfs_distances(g: &ContactGraph, s: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; g.node_count()];
    dist[s] = Some(0);
    let mut queue = VecDeque::from([s]);
    while let Some(v) = queue.pop_front() {
        let d = dist[v].unwrap();
        for &w in g.neighbors(v) {
            if dist[w].is_none() {
                dist[w] = Some(d + 1);
                queue.push_back(w);
            }
        }
    }
    dist
}

/// Brandes' algorithm for unweighted graphs.
pub fn betweenness(g: &ContactGraph) -> Vec<f64> {
    let n = g.node_count();
    let mut cb = vec![0.0; n];
    let mut stack = Vec::with_capacity(n);
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut sigma = vec![0.0f64; n];
    let mut dist = vec![-1i64; n];
    let mut delta = vec![0.0; n];
    let mut queue = VecDeque::with_capacity(n);
    for s in 0..n {
        stack.clear();
        for v in 0..n {
            preds[v].clear();
            sigma[v] = 0.0;
            dist[v] = -1;
            delta[v] = 0.0;
        }
        sigma[s] = 1.0;
        dist[s] = 0;
        queue.push_back(s);
        while let Some(v) = queue.pop_front() {
            stack.push(v);
            for &w in g.neighbors(v) {
                if dist[w] < 0 {
                    dist[w] = dist[v] + 1;
                    queue.push_back(w);
                }
                if dist[w] == dist[v] + 1 {
                    sigma[w] += sigma[v];
                    preds[w].push(v);
                }
            }
        }
        while let Some(w) = stack.pop() {
            for &v in &preds[w] {
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
            }
            if w != s {
                cb[w] += delta[w];
            }
        }
    }
    // each unordered pair was visited from both ends
    cb.iter_mut().for_each(|c| *c /= 2.0);
    cb
}

pub fn closeness(g: &ContactGraph) -> Vec<f64> {
    (0..g.node_count())
        .map(|i| {
            let total: usize = bfs_distances(g, i).into_iter().flatten().sum();
            if total == 0 {
                0.0
            } else {
                1.0 / total as f64
            }
        })
        .collect()
}

/// `d_k / N` for `k = 0..N−1`.
pub fn degree_distribution(g: &ContactGraph) -> Vec<f64> {
    let n = g.node_count();
    let mut counts = vec![0usize; n.max(1)];
    for i in 0..n {
        counts[g.degree(i)] += 1;
    }
    counts.into_iter().map(|c| c as f64 / n as f64).collect()
}

/// `esp_k / #edges` for `k = 0..N−2`; all zeros for an edgeless graph.
pub fn espd(g: &ContactGraph) -> Vec<f64> {
    let n = g.node_count();
    let mut counts = vec![0usize; n.saturating_sub(1).max(1)];
    let mut m = 0usize;
    for (i, j) in g.edges() {
        counts[common_neighbors(g, i, j).count()] += 1;
        m += 1;
    }
    counts
        .into_iter()
        .map(|c| if m == 0 { 0.0 } else { c as f64 / m as f64 })
        .collect()
}

/// Distribution of pairwise geodesic distances over all `C(N, 2)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeodesicDistribution {
    /// `by_distance[k]` is the share of pairs at distance `k`; index 0 is
    /// always 0.
    pub by_distance: Vec<f64>,
    pub unreachable: f64,
}

impl GeodesicDistribution {
    pub fn total(&self) -> f64 {
        self.by_distance.iter().sum::<f64>() + self.unreachable
    }
}

pub fn gdd(g: &ContactGraph) -> GeodesicDistribution {
    let n = g.node_count();
    let mut counts = vec![0usize; n.max(1)];
    let mut unreachable = 0usize;
    for i in 0..n {
        for d in bfs_distances(g, i).into_iter().skip(i + 1) {
            match d {
                Some(d) => counts[d] += 1,
                None => unreachable += 1,
            }
        }
    }
    let pairs = g.pair_count().max(1) as f64;
    GeodesicDistribution {
        by_distance: counts.into_iter().map(|c| c as f64 / pairs).collect(),
        unreachable: unreachable as f64 / pairs,
    }
}

/// All seven statistics of one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub num_nodes: usize,
    pub num_edges: usize,
    pub num_triangles: usize,
    pub betweenness: Vec<f64>,
    pub closeness: Vec<f64>,
    pub dd: Vec<f64>,
    pub espd: Vec<f64>,
    pub gdd: GeodesicDistribution,
}

impl GraphStats {
    pub fn compute(g: &ContactGraph) -> Self {
        Self {
            num_nodes: g.node_count(),
            num_edges: count_edges(g),
            num_triangles: count_triangles(g),
            betweenness: betweenness(g),
            closeness: closeness(g),
            dd: degree_distribution(g),
            espd: espd(g),
            gdd: gdd(g),
        }
    }
}
