//! Universal-histogram release of subgroup counts.
//!
//! Attributes form a tree: the root holds the total, each further layer splits
//! its parent by the levels of one attribute, and the leaves are the finest
//! subgroups. Every layer is released with the Laplace mechanism at its share
//! of the budget, then two passes make the release consistent:
//!
//! * bottom-up, `z[v] = h̃[v]` at leaves and otherwise
//!   `z[v] = (k^l - k^(l-1))/(k^l - 1) · h̃[v] + (k^(l-1) - 1)/(k^l - 1) · Σ z[children]`,
//!   where `l` is the height of `v`'s subtree (leaves have `l = 1`);
//! * top-down, `h[root] = z[root]` and
//!   `h[v] = z[v] + (h[parent] - Σ z[siblings incl. v]) / k`.
//!
//! `k` is evaluated per node as its number of children, which reduces to the
//! usual fixed fanout for uniform trees.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::privacy::{sample_laplace, BudgetKind, PrivacyBudget};

/// One categorical attribute and its levels, in release order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub levels: Vec<String>,
}

/// Shape of the attribute hierarchy plus an optional per-layer budget split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeSpec {
    pub attributes: Vec<Attribute>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allocation: Option<Vec<f64>>,
}

impl TreeSpec {
    pub fn new(attributes: Vec<Attribute>) -> Result<Self> {
        let spec = Self { attributes, allocation: None };
        spec.validate()?;
        Ok(spec)
    }

    /// Uniform binary tree with `attributes` layers below the root, levels
    /// named `0` and `1`.
    pub fn binary(names: &[&str]) -> Result<Self> {
        Self::new(
            names
                .iter()
                .map(|n| Attribute { name: n.to_string(), levels: vec!["0".into(), "1".into()] })
                .collect(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.attributes.is_empty() {
            return Err(Error::InvalidInput("tree spec needs at least one attribute".into()));
        }
        for a in &self.attributes {
            if a.levels.len() < 2 {
                return Err(Error::InvalidInput(format!(
                    "attribute '{}' needs at least 2 levels, has {}",
                    a.name,
                    a.levels.len()
                )));
            }
        }
        if let Some(alloc) = &self.allocation {
            check_allocation(alloc, self.depth())?;
        }
        Ok(())
    }

    /// Number of noisy layers, root included.
    pub fn depth(&self) -> usize {
        self.attributes.len() + 1
    }

    pub fn leaf_count(&self) -> usize {
        self.attributes.iter().map(|a| a.levels.len()).product()
    }

    /// The configured allocation, or the uniform `1/h` split.
    pub fn allocation_or_uniform(&self) -> Vec<f64> {
        self.allocation
            .clone()
            .unwrap_or_else(|| uniform_allocation(self.depth()))
    }
}

pub fn uniform_allocation(depth: usize) -> Vec<f64> {
    vec![1.0 / depth as f64; depth]
}

fn check_allocation(alloc: &[f64], depth: usize) -> Result<()> {
    if alloc.len() != depth {
        return Err(Error::Contract(format!(
            "allocation has {} weights for {} layers",
            alloc.len(),
            depth
        )));
    }
    if alloc.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::Contract("allocation weights must be positive".into()));
    }
    let total: f64 = alloc.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Contract(format!("allocation sums to {total}, expected 1")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    /// Level index per attribute from the root down; empty for the root.
    pub path: Vec<usize>,
    pub layer: usize,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Height of the subtree rooted here; leaves have 1.
    pub height: u32,
    pub true_count: u64,
}

/// Rounding applied to a released tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PostProcess {
    Raw,
    RoundedNonnegative,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramTree {
    spec: TreeSpec,
    nodes: Vec<Node>,
    /// `layers[j]` is the contiguous node-index range of layer `j`.
    layers: Vec<std::ops::Range<usize>>,
    noisy: Option<Vec<f64>>,
    z: Option<Vec<f64>>,
    h: Option<Vec<f64>>,
}

/// Builds the tree and its bottom-up true counts. Leaves are given in
/// row-major order over the attributes (first attribute varies slowest).
pub fn build_tree(leaf_counts: &[u64], spec: &TreeSpec) -> Result<HistogramTree> {
    spec.validate()?;
    if leaf_counts.len() != spec.leaf_count() {
        return Err(Error::InvalidInput(format!(
            "expected {} leaf counts, got {}",
            spec.leaf_count(),
            leaf_counts.len()
        )));
    }
    let depth = spec.depth();
    let mut nodes = vec![Node {
        path: Vec::new(),
        layer: 0,
        parent: None,
        children: Vec::new(),
        height: depth as u32,
        true_count: 0,
    }];
    let mut layers = vec![0..1];
    for (j, attr) in spec.attributes.iter().enumerate() {
        let parents = layers[j].clone();
        let start = nodes.len();
        for p in parents {
            for level in 0..attr.levels.len() {
                let mut path = nodes[p].path.clone();
                path.push(level);
                let id = nodes.len();
                nodes.push(Node {
                    path,
                    layer: j + 1,
                    parent: Some(p),
                    children: Vec::new(),
                    height: (depth - j - 1) as u32,
                    true_count: 0,
                });
                nodes[p].children.push(id);
            }
        }
        layers.push(start..nodes.len());
    }
    let leaves = layers[depth - 1].clone();
    for (id, &c) in leaves.zip(leaf_counts) {
        nodes[id].true_count = c;
    }
    for id in (0..nodes.len()).rev() {
        if !nodes[id].children.is_empty() {
            nodes[id].true_count = nodes[id].children.iter().map(|&c| nodes[c].true_count).sum();
        }
    }
    Ok(HistogramTree { spec: spec.clone(), nodes, layers, noisy: None, z: None, h: None })
}

/// Noises every layer at `allocation[j] · ε` (sensitivity 1, since each
/// layer partitions the records) and runs both consistency passes. Layers
/// compose sequentially, so the whole release costs `ε`.
pub fn sanitize_tree<R: Rng + ?Sized>(
    tree: &HistogramTree,
    budget: PrivacyBudget,
    allocation: &[f64],
    rng: &mut R,
) -> Result<HistogramTree> {
    if budget.kind() != BudgetKind::PerDataset {
        return Err(Error::Contract(format!(
            "histogram release needs a per-dataset budget, got {:?}",
            budget.kind()
        )));
    }
    check_allocation(allocation, tree.depth())?;
    let mut noisy = Vec::with_capacity(tree.nodes.len());
    for node in &tree.nodes {
        let scale = 1.0 / (allocation[node.layer] * budget.epsilon());
        noisy.push(node.true_count as f64 + sample_laplace(scale, rng)?);
    }
    let mut out = tree.clone().with_noisy_counts(noisy)?;
    out.weighted_z_pass()?;
    out.consistency_h_pass()?;
    Ok(out)
}

impl HistogramTree {
    pub fn spec(&self) -> &TreeSpec {
        &self.spec
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, j: usize) -> Option<std::ops::Range<usize>> {
        self.layers.get(j).cloned()
    }

    pub fn root_true(&self) -> u64 {
        self.nodes[0].true_count
    }

    pub fn true_counts(&self) -> Vec<u64> {
        self.nodes.iter().map(|n| n.true_count).collect()
    }

    pub fn noisy(&self) -> Option<&[f64]> {
        self.noisy.as_deref()
    }

    pub fn z(&self) -> Option<&[f64]> {
        self.z.as_deref()
    }

    pub fn h(&self) -> Option<&[f64]> {
        self.h.as_deref()
    }

    /// Human-readable path such as `age=old/gender=F`; the root is `total`.
    pub fn node_label(&self, id: usize) -> String {
        let node = &self.nodes[id];
        if node.path.is_empty() {
            return "total".to_string();
        }
        node.path
            .iter()
            .zip(&self.spec.attributes)
            .map(|(&lvl, a)| format!("{}={}", a.name, a.levels[lvl]))
            .collect::<Vec<_>>()
            .join("/")
    }

    /// Installs externally supplied noisy counts `h̃` and clears later stages.
    pub fn with_noisy_counts(mut self, noisy: Vec<f64>) -> Result<Self> {
        if noisy.len() != self.nodes.len() {
            return Err(Error::InvalidInput(format!(
                "expected {} noisy counts, got {}",
                self.nodes.len(),
                noisy.len()
            )));
        }
        self.noisy = Some(noisy);
        self.z = None;
        self.h = None;
        Ok(self)
    }

    /// Bottom-up weighted estimate `z`.
    pub fn weighted_z_pass(&mut self) -> Result<()> {
        let noisy = self
            .noisy
            .as_ref()
            .ok_or_else(|| Error::State("noisy counts are not populated".into()))?;
        let mut z = vec![0.0; self.nodes.len()];
        // Children always have larger indices than their parent.
        for id in (0..self.nodes.len()).rev() {
            let node = &self.nodes[id];
            z[id] = if node.children.is_empty() {
                noisy[id]
            } else {
                let k = node.children.len() as f64;
                let kl = k.powi(node.height as i32);
                let kl1 = k.powi(node.height as i32 - 1);
                let child_sum: f64 = node.children.iter().map(|&c| z[c]).sum();
                (kl - kl1) / (kl - 1.0) * noisy[id] + (kl1 - 1.0) / (kl - 1.0) * child_sum
            };
        }
        self.z = Some(z);
        self.h = None;
        Ok(())
    }

    /// Top-down consistency pass producing the released counts `h`.
    pub fn consistency_h_pass(&mut self) -> Result<()> {
        let z = self
            .z
            .as_ref()
            .ok_or_else(|| Error::State("weighted estimates z are not populated".into()))?;
        let mut h = vec![0.0; self.nodes.len()];
        h[0] = z[0];
        for (id, node) in self.nodes.iter().enumerate() {
            if node.children.is_empty() {
                continue;
            }
            let k = node.children.len() as f64;
            let deficit = (h[id] - node.children.iter().map(|&c| z[c]).sum::<f64>()) / k;
            for &c in &node.children {
                h[c] = z[c] + deficit;
            }
        }
        self.h = Some(h);
        Ok(())
    }

    /// Returns a copy with `h` replaced per `mode`. Rounding acts on leaves;
    /// internal nodes are recomputed as sums so consistency is preserved.
    pub fn postprocess_counts(&self, mode: PostProcess) -> Result<HistogramTree> {
        let h = self
            .h
            .as_ref()
            .ok_or_else(|| Error::State("released counts h are not populated".into()))?;
        let mut out = self.clone();
        if mode == PostProcess::Raw {
            return Ok(out);
        }
        let mut rounded = h.clone();
        for id in (0..self.nodes.len()).rev() {
            let node = &self.nodes[id];
            rounded[id] = if node.children.is_empty() {
                h[id].round().max(0.0)
            } else {
                node.children.iter().map(|&c| rounded[c]).sum()
            };
        }
        out.h = Some(rounded);
        Ok(out)
    }

    /// Released counts of every node in `layer`, left to right.
    pub fn query_marginal(&self, layer: usize) -> Result<Vec<f64>> {
        let range = self.layer(layer).ok_or_else(|| {
            Error::InvalidInput(format!("layer {layer} out of range 0..{}", self.depth()))
        })?;
        let h = self
            .h
            .as_ref()
            .ok_or_else(|| Error::State("released counts h are not populated".into()))?;
        Ok(h[range].to_vec())
    }

    /// Largest relative violation of `h[u] = Σ h[children]` over internal nodes.
    pub fn consistency_error(&self) -> Option<f64> {
        let h = self.h.as_ref()?;
        Some(
            self.nodes
                .iter()
                .enumerate()
                .filter(|(_, n)| !n.children.is_empty())
                .map(|(id, n)| {
                    let s: f64 = n.children.iter().map(|&c| h[c]).sum();
                    (h[id] - s).abs() / h[id].abs().max(1.0)
                })
                .fold(0.0, f64::max),
        )
    }
}
