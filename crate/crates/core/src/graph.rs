//! Undirected graph representation and degree statistics.
//!
//! Two routes to degree assortativity live here. [`assortativity_excess`]
//! works from the remaining-degree distribution `q_k = (k+1) p_{k+1} / <k>`
//! and the joint edge distribution `e_jk`. [`assortativity_edge_pearson`]
//! uses raw degree moments over the edge list. Pearson correlation is
//! shift-invariant, so the two agree on every non-degenerate graph; the
//! model consumes the edge-moment form.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Variance / denominator floor below which assortativity is reported as degenerate.
pub const DEGENERATE_TOL: f64 = 1e-12;

/// Degree cap used by the structural one-hot features.
pub const DEGREE_ONEHOT_CAP: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("edge ({u}, {v}) has an endpoint outside 0..{num_nodes}")]
    EndpointOutOfRange { u: usize, v: usize, num_nodes: usize },
    #[error("features have {rows} rows but the graph has {num_nodes} nodes")]
    FeatureRows { rows: usize, num_nodes: usize },
    #[error("feature row {row} has dimension {got}, expected {expected}")]
    FeatureDim { row: usize, got: usize, expected: usize },
    #[error("node_labels has {got} entries but the graph has {num_nodes} nodes")]
    NodeLabels { got: usize, num_nodes: usize },
    #[error("degenerate graph: no edges")]
    NoEdges,
    #[error("degree quintiles need at least 5 nodes, graph has {0}")]
    TooFewNodes(usize),
}

/// Immutable undirected simple graph with per-node features.
///
/// Edges are stored once each as `(u, v)` with `u < v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    feature_dim: usize,
    features: Vec<f64>,
    label: Option<usize>,
    node_labels: Option<Vec<usize>>,
    degrees: Vec<usize>,
}

impl Graph {
    /// Builds a graph, validating edges and the feature matrix.
    pub fn new(
        num_nodes: usize,
        edges: Vec<(usize, usize)>,
        features: Vec<Vec<f64>>,
    ) -> Result<Self, GraphError> {
        if features.len() != num_nodes {
            return Err(GraphError::FeatureRows { rows: features.len(), num_nodes });
        }
        let feature_dim = features.first().map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(num_nodes * feature_dim);
        for (row, f) in features.iter().enumerate() {
            if f.len() != feature_dim {
                return Err(GraphError::FeatureDim { row, got: f.len(), expected: feature_dim });
            }
            flat.extend_from_slice(f);
        }
        let edges = normalize_edges(num_nodes, edges)?;
        let mut degrees = vec![0usize; num_nodes];
        for &(u, v) in &edges {
            degrees[u] += 1;
            degrees[v] += 1;
        }
        Ok(Self {
            num_nodes,
            edges,
            feature_dim,
            features: flat,
            label: None,
            node_labels: None,
            degrees,
        })
    }

    /// Builds a graph whose features are the structural encoding
    /// `[1] ++ one_hot(min(degree, 10))`.
    pub fn with_degree_features(
        num_nodes: usize,
        edges: Vec<(usize, usize)>,
    ) -> Result<Self, GraphError> {
        let edges = normalize_edges(num_nodes, edges)?;
        let mut degrees = vec![0usize; num_nodes];
        for &(u, v) in &edges {
            degrees[u] += 1;
            degrees[v] += 1;
        }
        Self::new(num_nodes, edges, degree_onehot_features(&degrees))
    }

    pub fn with_label(mut self, label: Option<usize>) -> Self {
        self.label = label;
        self
    }

    pub fn with_node_labels(mut self, labels: Option<Vec<usize>>) -> Result<Self, GraphError> {
        if let Some(l) = &labels {
            if l.len() != self.num_nodes {
                return Err(GraphError::NodeLabels { got: l.len(), num_nodes: self.num_nodes });
            }
        }
        self.node_labels = labels;
        Ok(self)
    }

    /// Returns a copy with `extra` columns appended to every feature row.
    pub fn with_extra_features(&self, extra: &[Vec<f64>]) -> Result<Self, GraphError> {
        if extra.len() != self.num_nodes {
            return Err(GraphError::FeatureRows { rows: extra.len(), num_nodes: self.num_nodes });
        }
        let rows: Vec<Vec<f64>> = (0..self.num_nodes)
            .map(|i| {
                let mut r = self.feature_row(i).to_vec();
                r.extend_from_slice(&extra[i]);
                r
            })
            .collect();
        let g = Self::new(self.num_nodes, self.edges.clone(), rows)?;
        g.with_label(self.label).with_node_labels(self.node_labels.clone())
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Row-major `num_nodes x feature_dim` feature matrix.
    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn feature_row(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn node_labels(&self) -> Option<&[usize]> {
        self.node_labels.as_deref()
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    /// Adjacency lists, neighbors sorted ascending.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_nodes];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        for a in &mut adj {
            a.sort_unstable();
        }
        adj
    }

    /// True when every node is reachable from node 0 (empty graphs count as connected).
    pub fn is_connected(&self) -> bool {
        if self.num_nodes == 0 {
            return true;
        }
        let adj = self.adjacency();
        let mut seen = vec![false; self.num_nodes];
        let mut stack = vec![0];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count == self.num_nodes
    }

    /// Relabels nodes so that old node `i` becomes `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self, GraphError> {
        assert_eq!(perm.len(), self.num_nodes, "permutation length");
        let edges = self.edges.iter().map(|&(u, v)| (perm[u], perm[v])).collect();
        let mut rows = vec![Vec::new(); self.num_nodes];
        for i in 0..self.num_nodes {
            rows[perm[i]] = self.feature_row(i).to_vec();
        }
        let node_labels = self.node_labels.as_ref().map(|l| {
            let mut out = vec![0; l.len()];
            for i in 0..l.len() {
                out[perm[i]] = l[i];
            }
            out
        });
        Self::new(self.num_nodes, edges, rows)?
            .with_label(self.label)
            .with_node_labels(node_labels)
    }
}

fn normalize_edges(
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
) -> Result<Vec<(usize, usize)>, GraphError> {
    let mut seen = HashSet::with_capacity(edges.len());
    let mut out = Vec::with_capacity(edges.len());
    for (u, v) in edges {
        if u >= num_nodes || v >= num_nodes {
            return Err(GraphError::EndpointOutOfRange { u, v, num_nodes });
        }
        if u == v {
            return Err(GraphError::SelfLoop(u));
        }
        let e = (u.min(v), u.max(v));
        if !seen.insert(e) {
            return Err(GraphError::DuplicateEdge(e.0, e.1));
        }
        out.push(e);
    }
    Ok(out)
}

/// `[1] ++ one_hot(min(d, 10))` per node; 12 columns.
pub fn degree_onehot_features(degrees: &[usize]) -> Vec<Vec<f64>> {
    degrees
        .iter()
        .map(|&d| {
            let mut row = vec![0.0; DEGREE_ONEHOT_CAP + 2];
            row[0] = 1.0;
            row[1 + d.min(DEGREE_ONEHOT_CAP)] = 1.0;
            row
        })
        .collect()
}

/// An assortativity value together with its degeneracy flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Assortativity {
    pub value: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DegreeStats {
    pub degrees: Vec<usize>,
    pub mean_degree: f64,
    pub mean_square_degree: f64,
    /// `(1/|E|) sum_{(a,b) in E} d_a d_b`
    pub edge_degree_product_mean: f64,
    pub assortativity: Assortativity,
}

pub fn compute_degree_stats(g: &Graph) -> Result<DegreeStats, GraphError> {
    if g.num_edges() == 0 {
        return Err(GraphError::NoEdges);
    }
    let n = g.num_nodes() as f64;
    let degrees = g.degrees().to_vec();
    let mean_degree = degrees.iter().map(|&d| d as f64).sum::<f64>() / n;
    let mean_square_degree = degrees.iter().map(|&d| (d * d) as f64).sum::<f64>() / n;
    let edge_degree_product_mean = g
        .edges()
        .iter()
        .map(|&(a, b)| (degrees[a] * degrees[b]) as f64)
        .sum::<f64>()
        / g.num_edges() as f64;
    let assortativity = assortativity_edge_pearson(g)?;
    Ok(DegreeStats {
        degrees,
        mean_degree,
        mean_square_degree,
        edge_degree_product_mean,
        assortativity,
    })
}

/// Degree assortativity from the remaining-degree distribution.
///
/// `q_k = (k+1) p_{k+1} / sum_j j p_j`, `e_jk` is the fraction of edge ends
/// (over the symmetrized edge list) joining remaining degrees `j` and `k`,
/// and `gamma = sum_jk jk (e_jk - q_j q_k) / sigma_q^2`.
pub fn assortativity_excess(g: &Graph) -> Result<Assortativity, GraphError> {
    if g.num_edges() == 0 {
        return Err(GraphError::NoEdges);
    }
    let n = g.num_nodes() as f64;
    let deg = g.degrees();

    let mut p: BTreeMap<usize, f64> = BTreeMap::new();
    for &d in deg {
        *p.entry(d).or_default() += 1.0 / n;
    }
    let mean_k: f64 = p.iter().map(|(&k, &pk)| k as f64 * pk).sum();
    let q: BTreeMap<usize, f64> = p
        .iter()
        .filter(|(&k, _)| k >= 1)
        .map(|(&k, &pk)| (k - 1, k as f64 * pk / mean_k))
        .collect();

    let ends = 2.0 * g.num_edges() as f64;
    let mut e: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for &(a, b) in g.edges() {
        let (ja, jb) = (deg[a] - 1, deg[b] - 1);
        *e.entry((ja, jb)).or_default() += 1.0 / ends;
        *e.entry((jb, ja)).or_default() += 1.0 / ends;
    }

    let mut numerator = 0.0;
    for (&(j, k), &ejk) in &e {
        numerator += (j * k) as f64 * ejk;
    }
    let q_mean: f64 = q.iter().map(|(&k, &qk)| k as f64 * qk).sum();
    let q_sq: f64 = q.iter().map(|(&k, &qk)| (k * k) as f64 * qk).sum();
    numerator -= q_mean * q_mean;
    let variance = q_sq - q_mean * q_mean;
    if variance < DEGENERATE_TOL {
        return Ok(Assortativity { value: 0.0, degenerate: true });
    }
    Ok(Assortativity { value: numerator / variance, degenerate: false })
}

/// Degree assortativity from raw degree moments over the undirected edge list.
pub fn assortativity_edge_pearson(g: &Graph) -> Result<Assortativity, GraphError> {
    if g.num_edges() == 0 {
        return Err(GraphError::NoEdges);
    }
    let deg = g.degrees();
    let m = g.num_edges() as f64;
    let (mut prod, mut half_sum, mut half_sq) = (0.0, 0.0, 0.0);
    for &(a, b) in g.edges() {
        let (da, db) = (deg[a] as f64, deg[b] as f64);
        prod += da * db;
        half_sum += 0.5 * (da + db);
        half_sq += 0.5 * (da * da + db * db);
    }
    let mean = half_sum / m;
    let numerator = prod / m - mean * mean;
    let denominator = half_sq / m - mean * mean;
    if denominator < DEGENERATE_TOL {
        return Ok(Assortativity { value: 0.0, degenerate: true });
    }
    Ok(Assortativity { value: numerator / denominator, degenerate: false })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DegreeHistogram {
    pub counts: BTreeMap<usize, usize>,
    pub power_law_alpha: f64,
}

/// Degree histogram plus the discrete maximum-likelihood power-law exponent
/// with `d_min = 1`.
pub fn degree_histogram(g: &Graph) -> Result<DegreeHistogram, GraphError> {
    degree_histogram_with_min(g, 1)
}

pub fn degree_histogram_with_min(g: &Graph, d_min: usize) -> Result<DegreeHistogram, GraphError> {
    if g.num_edges() == 0 {
        return Err(GraphError::NoEdges);
    }
    let mut counts = BTreeMap::new();
    for &d in g.degrees() {
        *counts.entry(d).or_insert(0) += 1;
    }
    let floor = d_min as f64 - 0.5;
    let (n, log_sum) = g
        .degrees()
        .iter()
        .filter(|&&d| d >= d_min)
        .fold((0usize, 0.0), |(n, s), &d| (n + 1, s + (d as f64 / floor).ln()));
    let power_law_alpha = if log_sum > 0.0 { 1.0 + n as f64 / log_sum } else { f64::INFINITY };
    Ok(DegreeHistogram { counts, power_law_alpha })
}

/// Splits nodes into five groups by degree, highest degrees in group 0.
///
/// Ties are broken by node index ascending; when `n % 5 != 0` the
/// remainder goes one node each to the lowest-indexed (highest-degree) groups.
pub fn degree_quintile_groups(g: &Graph) -> Result<Vec<usize>, GraphError> {
    let n = g.num_nodes();
    if n < 5 {
        return Err(GraphError::TooFewNodes(n));
    }
    let deg = g.degrees();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| deg[b].cmp(&deg[a]).then(a.cmp(&b)));
    let (base, rem) = (n / 5, n % 5);
    let mut groups = vec![0; n];
    let mut pos = 0;
    for group in 0..5 {
        let size = base + usize::from(group < rem);
        for &node in &order[pos..pos + size] {
            groups[node] = group;
        }
        pos += size;
    }
    Ok(groups)
}

/// JSON record form of a [`Graph`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphRecord {
    pub num_nodes: usize,
    pub edges: Vec<[usize; 2]>,
    pub features: Vec<Vec<f64>>,
    #[serde(default)]
    pub label: Option<usize>,
    #[serde(default)]
    pub node_labels: Option<Vec<usize>>,
}

impl From<&Graph> for GraphRecord {
    fn from(g: &Graph) -> Self {
        Self {
            num_nodes: g.num_nodes,
            edges: g.edges.iter().map(|&(u, v)| [u, v]).collect(),
            features: (0..g.num_nodes).map(|i| g.feature_row(i).to_vec()).collect(),
            label: g.label,
            node_labels: g.node_labels.clone(),
        }
    }
}

impl TryFrom<GraphRecord> for Graph {
    type Error = GraphError;

    fn try_from(r: GraphRecord) -> Result<Self, Self::Error> {
        let edges = r.edges.into_iter().map(|[u, v]| (u, v)).collect();
        Graph::new(r.num_nodes, edges, r.features)?
            .with_label(r.label)
            .with_node_labels(r.node_labels)
    }
}

impl Serialize for Graph {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        GraphRecord::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Graph {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let record = GraphRecord::deserialize(d)?;
        Graph::try_from(record).map_err(serde::de::Error::custom)
    }
}
