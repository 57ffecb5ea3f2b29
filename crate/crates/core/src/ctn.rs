//! Contact-tracing networks: construction from locations, simulation, and the
//! two edge-level sanitizers.
//!
//! * GI: every person's location is perturbed once with the planar Laplace
//!   mechanism at the per-node budget, then the graph is rebuilt with the same
//!   contact cutoff. Under node independence the whole network costs `ε`.
//! * RR: every unordered pair independently flips its edge status with
//!   probability `π = 1/(1 + e^ε)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::point::GeoPoint;
use crate::privacy::{perturb_location, BudgetKind, PrivacyBudget};

/// Undirected simple graph on `n` nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContactGraph {
    n: usize,
    adj: Vec<Vec<usize>>,
}

impl ContactGraph {
    pub fn empty(n: usize) -> Self {
        Self { n, adj: vec![Vec::new(); n] }
    }

    pub fn complete(n: usize) -> Self {
        let adj = (0..n).map(|i| (0..n).filter(|&j| j != i).collect()).collect();
        Self { n, adj }
    }

    /// Builds a graph from an edge list. Self-loops, out-of-range endpoints
    /// and duplicate edges are rejected.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut g = Self::empty(n);
        for &(i, j) in edges {
            if i == j {
                return Err(Error::InvalidInput(format!("self-loop on node {i}")));
            }
            if i >= n || j >= n {
                return Err(Error::InvalidInput(format!("edge ({i}, {j}) out of range for {n} nodes")));
            }
            if g.has_edge(i, j) {
                return Err(Error::InvalidInput(format!("duplicate edge ({i}, {j})")));
            }
            g.insert(i, j);
        }
        Ok(g)
    }

    fn insert(&mut self, i: usize, j: usize) {
        let pos = self.adj[i].binary_search(&j).unwrap_err();
        self.adj[i].insert(pos, j);
        let pos = self.adj[j].binary_search(&i).unwrap_err();
        self.adj[j].insert(pos, i);
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adj[i].binary_search(&j).is_ok()
    }

    /// Sorted neighbour list of `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adj[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adj[i].len()
    }

    /// Edges as `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, nbrs) in self.adj.iter().enumerate() {
            out.extend(nbrs.iter().filter(|&&j| j > i).map(|&j| (i, j)));
        }
        out
    }

    /// Number of unordered node pairs, `n(n−1)/2`.
    pub fn pair_count(&self) -> usize {
        self.n * self.n.saturating_sub(1) / 2
    }
}

fn check_cutoff(a: f64) -> Result<()> {
    if a.is_finite() && a > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("contact distance must be positive, got {a}")))
    }
}

/// Edge `(i, j)` iff the two locations are within distance `a` (inclusive).
pub fn build_ctn(locations: &[GeoPoint], a: f64) -> Result<ContactGraph> {
    check_cutoff(a)?;
    if locations.len() < 2 {
        return Err(Error::InvalidInput("a contact network needs at least 2 locations".into()));
    }
    if locations.iter().any(|p| !p.is_finite()) {
        return Err(Error::InvalidInput("non-finite location".into()));
    }
    let n = locations.len();
    let mut adj = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            if locations[i].distance(&locations[j]) <= a {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    for list in &mut adj {
        list.sort_unstable();
    }
    Ok(ContactGraph { n, adj })
}

/// GI sanitization: perturb every location at the per-node budget and rebuild
/// the network on the released coordinates. Returns the released locations
/// together with the graph.
pub fn sanitize_gi<R: Rng + ?Sized>(
    locations: &[GeoPoint],
    epsilon: PrivacyBudget,
    a: f64,
    rng: &mut R,
) -> Result<(Vec<GeoPoint>, ContactGraph)> {
    if epsilon.kind() != BudgetKind::PerNode {
        return Err(Error::Contract(format!(
            "GI network sanitization needs a per-node budget, got {:?}",
            epsilon.kind()
        )));
    }
    check_cutoff(a)?;
    let unit = epsilon.with_kind(BudgetKind::PerUnitDistance);
    let released = locations
        .iter()
        .map(|&p| perturb_location(p, unit, rng))
        .collect::<Result<Vec<_>>>()?;
    let g = build_ctn(&released, a)?;
    Ok((released, g))
}

/// Flip probability `1/(1 + e^ε)` of the edge randomized-response mechanism.
/// `ε = 0` gives 1/2.
pub fn flip_probability(epsilon: f64) -> f64 {
    // 1/(1+e^ε) written to stay finite for large ε
    let e = (-epsilon).exp();
    e / (1.0 + e)
}

/// RR sanitization with a uniform per-pair budget.
pub fn sanitize_rr<R: Rng + ?Sized>(
    g: &ContactGraph,
    epsilon: PrivacyBudget,
    rng: &mut R,
) -> Result<ContactGraph> {
    if epsilon.kind() != BudgetKind::PerEdgePair {
        return Err(Error::Contract(format!(
            "RR sanitization needs a per-edge-pair budget, got {:?}",
            epsilon.kind()
        )));
    }
    let pi = flip_probability(epsilon.epsilon());
    Ok(flip_pairs(g, |_, _| pi, rng))
}

/// RR with per-pair budgets `eps[i][j]` (symmetric, only `i < j` is read).
/// Entries of 0 are allowed and flip with probability 1/2.
pub fn sanitize_rr_pairwise<R: Rng + ?Sized>(
    g: &ContactGraph,
    eps: &[Vec<f64>],
    rng: &mut R,
) -> Result<ContactGraph> {
    let n = g.node_count();
    if eps.len() != n || eps.iter().any(|row| row.len() != n) {
        return Err(Error::InvalidInput(format!("pair budget matrix must be {n}x{n}")));
    }
    for (i, row) in eps.iter().enumerate() {
        for &e in &row[i + 1..] {
            if !(e.is_finite() && e >= 0.0) {
                return Err(Error::InvalidParameter(format!("pair budget must be >= 0, got {e}")));
            }
        }
    }
    Ok(flip_pairs(g, |i, j| flip_probability(eps[i][j]), rng))
}

/// Flips every unordered pair with a fixed probability `pi`. Test hook for
/// boundary cases such as `π = 1/2` (ε = 0).
pub fn sanitize_rr_with_flip<R: Rng + ?Sized>(
    g: &ContactGraph,
    pi: f64,
    rng: &mut R,
) -> Result<ContactGraph> {
    if !(0.0..=1.0).contains(&pi) {
        return Err(Error::InvalidParameter(format!("flip probability must be in [0,1], got {pi}")));
    }
    Ok(flip_pairs(g, |_, _| pi, rng))
}

fn flip_pairs<R, F>(g: &ContactGraph, pi: F, rng: &mut R) -> ContactGraph
where
    R: Rng + ?Sized,
    F: Fn(usize, usize) -> f64,
{
    let n = g.node_count();
    let mut adj = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            let flip = rng.gen::<f64>() < pi(i, j);
            if g.has_edge(i, j) != flip {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    for list in &mut adj {
        list.sort_unstable();
    }
    ContactGraph { n, adj }
}

/// Expected RR edge count `m(1−π) + (M−m)π` for a graph with `m` edges out
/// of `M` pairs.
pub fn expected_rr_edges(edges: usize, pairs: usize, pi: f64) -> f64 {
    edges as f64 * (1.0 - pi) + (pairs - edges) as f64 * pi
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub x: f64,
    pub y: f64,
    pub sd: f64,
    pub weight: f64,
}

/// Gaussian-mixture location generator over a rectangular region. Points
/// falling outside the region are redrawn. `background` is the weight of a
/// uniform component over the whole region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub width: f64,
    pub height: f64,
    pub clusters: Vec<Cluster>,
    #[serde(default)]
    pub background: f64,
}

impl Default for ClusterSpec {
    /// Four equal clusters in a 300×300 region. With 100 people and a contact
    /// distance of 6 this yields about 39 contacts.
    fn default() -> Self {
        let sd = 16.5;
        let clusters = [(75.0, 75.0), (225.0, 75.0), (75.0, 225.0), (225.0, 225.0)]
            .into_iter()
            .map(|(x, y)| Cluster { x, y, sd, weight: 1.0 })
            .collect();
        Self { width: 300.0, height: 300.0, clusters, background: 0.0 }
    }
}

impl ClusterSpec {
    fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.height > 0.0) {
            return Err(Error::InvalidParameter("simulation region must have positive size".into()));
        }
        if self.clusters.iter().any(|c| !(c.sd > 0.0 && c.weight >= 0.0)) || self.background < 0.0 {
            return Err(Error::InvalidParameter("cluster sd must be > 0 and weights >= 0".into()));
        }
        let total = self.background + self.clusters.iter().map(|c| c.weight).sum::<f64>();
        if !(total > 0.0) {
            return Err(Error::InvalidParameter("mixture weights sum to zero".into()));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<GeoPoint>> {
        self.validate()?;
        let total = self.background + self.clusters.iter().map(|c| c.weight).sum::<f64>();
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let mut u = rng.gen::<f64>() * total;
            let mut chosen = None;
            for c in &self.clusters {
                if u < c.weight {
                    chosen = Some(c);
                    break;
                }
                u -= c.weight;
            }
            let p = match chosen {
                Some(c) => {
                    let (zx, zy) = standard_normal_pair(rng);
                    GeoPoint::new(c.x + c.sd * zx, c.y + c.sd * zy)
                }
                None => GeoPoint::new(rng.gen::<f64>() * self.width, rng.gen::<f64>() * self.height),
            };
            if (0.0..=self.width).contains(&p.x) && (0.0..=self.height).contains(&p.y) {
                out.push(p);
            }
        }
        Ok(out)
    }
}

/// Box–Muller.
fn standard_normal_pair<R: Rng + ?Sized>(rng: &mut R) -> (f64, f64) {
    let u1 = 1.0 - rng.gen::<f64>();
    let u2 = rng.gen::<f64>();
    let radius = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
    (radius * c, radius * s)
}

/// Draws `n` locations from `spec` and builds their contact network.
pub fn simulate_ctn<R: Rng + ?Sized>(
    n: usize,
    spec: &ClusterSpec,
    a: f64,
    rng: &mut R,
) -> Result<(Vec<GeoPoint>, ContactGraph)> {
    if n < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 people, got {n}")));
    }
    check_cutoff(a)?;
    let locations = spec.sample(n, rng)?;
    let g = build_ctn(&locations, a)?;
    Ok((locations, g))
}
