//! Per-graph precomputed index arrays and structural constants.
//!
//! Everything here depends only on the graph and the operation count `K`,
//! so a context is built once per graph and reused by every forward pass.

use std::sync::Arc;

use crate::graph::{compute_degree_stats, DegreeStats, Graph, GraphError};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GraphContext {
    pub num_nodes: usize,
    pub num_edges: usize,
    /// Operation count the attention index arrays were built for.
    pub num_ops: usize,
    pub features: Tensor,
    pub stats: DegreeStats,

    /// Message-passing arcs, each undirected edge in both directions.
    pub arc_src: Arc<[usize]>,
    pub arc_dst: Arc<[usize]>,
    /// Arcs plus one self-loop per node, with symmetric GCN normalization.
    pub gcn_src: Arc<[usize]>,
    pub gcn_dst: Arc<[usize]>,
    pub gcn_coef: Arc<[f64]>,
    /// `1 / d_i`, or 0 for isolated nodes.
    pub inv_degree: Arc<[f64]>,

    /// Undirected edge endpoints, one entry per edge.
    pub edge_u: Arc<[usize]>,
    pub edge_v: Arc<[usize]>,
    /// `1 x N` row of degrees.
    pub degree_row: Tensor,

    /// `N x 4` link-pattern inputs after the log transform.
    pub link_inputs: Tensor,

    /// Row `i*K + k` of the stacked mapped embeddings belongs to node `i`.
    pub block_node: Arc<[usize]>,
    /// For pair `(i, z, o)`: row `i*K + z` (the query).
    pub pair_query: Arc<[usize]>,
    /// For pair `(i, z, o)`: row `i*K + o` (the key).
    pub pair_key: Arc<[usize]>,
    /// `N` zeros, used to broadcast a `1 x c` row to every node.
    pub broadcast_zero: Arc<[usize]>,
}

impl GraphContext {
    pub fn new(g: &Graph, num_ops: usize) -> Result<Self, GraphError> {
        let stats = compute_degree_stats(g)?;
        let n = g.num_nodes();
        let deg = g.degrees();

        let mut arc_src = Vec::with_capacity(2 * g.num_edges());
        let mut arc_dst = Vec::with_capacity(2 * g.num_edges());
        for &(u, v) in g.edges() {
            arc_src.extend([u, v]);
            arc_dst.extend([v, u]);
        }
        let mut gcn_src = arc_src.clone();
        let mut gcn_dst = arc_dst.clone();
        gcn_src.extend(0..n);
        gcn_dst.extend(0..n);
        let gcn_coef: Vec<f64> = gcn_src
            .iter()
            .zip(&gcn_dst)
            .map(|(&j, &i)| 1.0 / (((deg[i] + 1) * (deg[j] + 1)) as f64).sqrt())
            .collect();
        let inv_degree: Vec<f64> =
            deg.iter().map(|&d| if d == 0 { 0.0 } else { 1.0 / d as f64 }).collect();

        let link_inputs = link_pattern_inputs(&stats);
        let k = num_ops;
        let block_node: Vec<usize> = (0..n * k).map(|r| r / k).collect();
        let mut pair_query = Vec::with_capacity(n * k * k);
        let mut pair_key = Vec::with_capacity(n * k * k);
        for i in 0..n {
            for z in 0..k {
                for o in 0..k {
                    pair_query.push(i * k + z);
                    pair_key.push(i * k + o);
                }
            }
        }

        Ok(Self {
            num_nodes: n,
            num_edges: g.num_edges(),
            num_ops,
            features: Tensor::new(n, g.feature_dim(), g.features().to_vec())
                .expect("graph feature matrix"),
            arc_src: arc_src.into(),
            arc_dst: arc_dst.into(),
            gcn_src: gcn_src.into(),
            gcn_dst: gcn_dst.into(),
            gcn_coef: gcn_coef.into(),
            inv_degree: inv_degree.into(),
            edge_u: g.edges().iter().map(|e| e.0).collect(),
            edge_v: g.edges().iter().map(|e| e.1).collect(),
            degree_row: Tensor::row_vector(deg.iter().map(|&d| d as f64).collect()),
            link_inputs,
            block_node: block_node.into(),
            pair_query: pair_query.into(),
            pair_key: pair_key.into(),
            broadcast_zero: vec![0; n].into(),
            stats,
        })
    }
}

/// Raw per-node link-pattern features
/// `[gamma_g, d_i^2 / mean(d^2), d_i / mean(d), mean_{(a,b) in E} d_a d_b]`.
pub fn raw_link_features(stats: &DegreeStats) -> Vec<[f64; 4]> {
    let gamma = stats.assortativity.value;
    stats
        .degrees
        .iter()
        .map(|&d| {
            let d = d as f64;
            [
                gamma,
                d * d / stats.mean_square_degree,
                d / stats.mean_degree,
                stats.edge_degree_product_mean,
            ]
        })
        .collect()
}

/// Raw features with `ln(1 + x)` applied to the three unbounded degree columns.
pub fn link_pattern_inputs(stats: &DegreeStats) -> Tensor {
    let rows: Vec<Vec<f64>> = raw_link_features(stats)
        .into_iter()
        .map(|[g, a, b, c]| vec![g, a.ln_1p(), b.ln_1p(), c.ln_1p()])
        .collect();
    Tensor::from_rows(&rows).expect("link pattern rows")
}
