//! Output heads, task losses and evaluation metrics.
//!
//! Tape losses take precomputed [`GraphContext`] index arrays so nothing is
//! materialized at `N x N`. The plain `f64` metrics work on a [`Graph`] and
//! hard cluster labels.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::GraphContext;
use crate::graph::Graph;
use crate::tensor::{Axis, Tape, Tensor, TensorError, Var};

pub const DEFAULT_CLUSTERS: usize = 10;
pub const DEFAULT_LAMBDA_BAL: f64 = 1.0;
pub const DEFAULT_LAMBDA_ENT: f64 = 0.1;

#[derive(Debug, Error)]
pub enum HeadError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("graph has no label but the task is graph classification")]
    MissingLabel,
    #[error("assignment has {got} rows for a graph with {expected} nodes")]
    AssignmentRows { expected: usize, got: usize },
    #[error("assignment row {row} is not a probability vector")]
    NotSimplex { row: usize },
}

fn default_clusters() -> usize {
    DEFAULT_CLUSTERS
}
fn default_lambda_bal() -> f64 {
    DEFAULT_LAMBDA_BAL
}
fn default_lambda_ent() -> f64 {
    DEFAULT_LAMBDA_ENT
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Task {
    GraphClassification {
        num_classes: usize,
    },
    CommunityDetection {
        #[serde(default = "default_clusters")]
        clusters: usize,
    },
    InversePartition {
        #[serde(default = "default_clusters")]
        clusters: usize,
        #[serde(default = "default_lambda_bal")]
        lambda_bal: f64,
        #[serde(default = "default_lambda_ent")]
        lambda_ent: f64,
    },
}

impl Task {
    pub fn community_detection() -> Self {
        Task::CommunityDetection { clusters: DEFAULT_CLUSTERS }
    }

    pub fn inverse_partition() -> Self {
        Task::InversePartition {
            clusters: DEFAULT_CLUSTERS,
            lambda_bal: DEFAULT_LAMBDA_BAL,
            lambda_ent: DEFAULT_LAMBDA_ENT,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Task::GraphClassification { .. } => "graph_classification",
            Task::CommunityDetection { .. } => "community_detection",
            Task::InversePartition { .. } => "inverse_partition",
        }
    }

    /// Head width: classes or clusters.
    pub fn output_dim(&self) -> usize {
        match *self {
            Task::GraphClassification { num_classes } => num_classes,
            Task::CommunityDetection { clusters, .. } | Task::InversePartition { clusters, .. } => clusters,
        }
    }

    pub fn primary_metric(&self) -> &'static str {
        match self {
            Task::GraphClassification { .. } => "accuracy",
            Task::CommunityDetection { .. } => "modularity",
            Task::InversePartition { .. } => "inter_edge_ratio",
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.output_dim() < 2 {
            return Err(format!("{} needs at least 2 classes/clusters", self.name()));
        }
        if let Task::InversePartition { lambda_bal, lambda_ent, .. } = *self {
            if !(lambda_bal >= 0.0 && lambda_ent >= 0.0) {
                return Err("lambda_bal and lambda_ent must be non-negative".into());
            }
        }
        Ok(())
    }
}

/// Per-node probability rows over `C` clusters.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftAssignment {
    probs: Tensor,
}

impl SoftAssignment {
    pub const TOL: f64 = 1e-6;

    pub fn new(probs: Tensor) -> Result<Self, HeadError> {
        for r in 0..probs.rows() {
            let row = probs.row(r);
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > Self::TOL || row.iter().any(|&p| p < 0.0 || !p.is_finite()) {
                return Err(HeadError::NotSimplex { row: r });
            }
        }
        Ok(Self { probs })
    }

    /// One-hot rows from hard labels.
    pub fn hard(labels: &[usize], clusters: usize) -> Self {
        let mut probs = Tensor::zeros(labels.len(), clusters);
        for (i, &c) in labels.iter().enumerate() {
            probs.data_mut()[i * clusters + c] = 1.0;
        }
        Self { probs }
    }

    pub fn uniform(n: usize, clusters: usize) -> Self {
        Self { probs: Tensor::full(n, clusters, 1.0 / clusters as f64) }
    }

    pub fn probs(&self) -> &Tensor {
        &self.probs
    }

    pub fn num_nodes(&self) -> usize {
        self.probs.rows()
    }

    pub fn clusters(&self) -> usize {
        self.probs.cols()
    }

    /// Argmax per row, lowest index on ties.
    pub fn argmax(&self) -> Vec<usize> {
        (0..self.probs.rows()).map(|r| argmax(self.probs.row(r))).collect()
    }
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Task name, scalar metrics and loss for one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task: String,
    pub metrics: BTreeMap<String, f64>,
    pub loss: f64,
}

/// Mean-pool, linear head, softmax cross-entropy. Returns `(logits, loss)`.
pub fn classify_graph(
    tape: &mut Tape,
    node_reps: Var,
    head: Var,
    label: usize,
) -> Result<(Var, Var), HeadError> {
    let num_classes = tape.shape(head).cols;
    if label >= num_classes {
        return Err(HeadError::LabelOutOfRange { label, num_classes });
    }
    let pooled = tape.mean(node_reps, Axis::Rows)?;
    let logits = tape.matmul(pooled, head)?;
    let loss = cross_entropy(tape, logits, label)?;
    Ok((logits, loss))
}

/// Cross-entropy of a `1 x C` logit row against `label`.
pub fn cross_entropy(tape: &mut Tape, logits: Var, label: usize) -> Result<Var, HeadError> {
    let num_classes = tape.shape(logits).cols;
    if label >= num_classes {
        return Err(HeadError::LabelOutOfRange { label, num_classes });
    }
    let logp = tape.log_softmax(logits);
    let mut onehot = Tensor::zeros(1, num_classes);
    onehot.data_mut()[label] = -1.0;
    let onehot = tape.constant(onehot);
    let picked = tape.mul(logp, onehot)?;
    Ok(tape.sum_all(picked))
}

/// Variance floor in [`standardize_columns`].
pub const STANDARDIZE_EPS: f64 = 1e-5;

/// Centers each column over the rows and scales it to unit variance.
pub fn standardize_columns(tape: &mut Tape, x: Var) -> Result<Var, TensorError> {
    let cols = tape.shape(x).cols;
    let mean = tape.mean(x, Axis::Rows)?;
    let centered = tape.sub(x, mean)?;
    let sq = tape.mul(centered, centered)?;
    let var = tape.mean(sq, Axis::Rows)?;
    let eps = tape.constant(Tensor::full(1, cols, STANDARDIZE_EPS));
    let var = tape.add(var, eps)?;
    let inv_std = tape.powf(var, -0.5);
    tape.mul(centered, inv_std)
}

/// Cluster logits `N x C`: node representations standardized per column
/// over the graph's nodes, then the bias-free head.
pub fn cluster_logits(tape: &mut Tape, node_reps: Var, head: Var) -> Result<Var, HeadError> {
    let z = standardize_columns(tape, node_reps)?;
    Ok(tape.matmul(z, head)?)
}

/// `-Q` for a soft assignment `S` (`N x C`):
/// `Q = (1/m) sum_{(u,v) in E} S_u . S_v - ||d^T S||^2 / (4 m^2)`.
pub fn soft_modularity_loss(tape: &mut Tape, ctx: &GraphContext, assign: Var) -> Result<Var, HeadError> {
    let m = ctx.num_edges as f64;
    let su = tape.row_gather(assign, ctx.edge_u.clone())?;
    let sv = tape.row_gather(assign, ctx.edge_v.clone())?;
    let agree = tape.mul(su, sv)?;
    let agree = tape.sum_all(agree);
    let agree = tape.scale(agree, 1.0 / m);
    let degree = tape.constant(ctx.degree_row.clone());
    let volume = tape.matmul(degree, assign)?;
    let vol_sq = tape.mul(volume, volume)?;
    let vol_sq = tape.sum_all(vol_sq);
    let null = tape.scale(vol_sq, 1.0 / (4.0 * m * m));
    let q = tape.sub(agree, null)?;
    Ok(tape.scale(q, -1.0))
}

/// Components of the inverse-partition objective.
#[derive(Debug, Clone, Copy)]
pub struct PartitionLoss {
    pub total: Var,
    pub intra: Var,
    pub balance: Var,
    pub entropy: Var,
}

/// `intra + lambda_bal * balance + lambda_ent * entropy` from cluster logits.
///
/// * `intra = (1/|E|) sum_{(a,b) in E} S_a . S_b`
/// * `balance = sum_c (mean_i S_ic - 1/C)^2`
/// * `entropy = mean_i H(S_i)`
pub fn inverse_partition_loss(
    tape: &mut Tape,
    ctx: &GraphContext,
    logits: Var,
    lambda_bal: f64,
    lambda_ent: f64,
) -> Result<PartitionLoss, HeadError> {
    let c = tape.shape(logits).cols;
    let assign = tape.softmax(logits);
    let su = tape.row_gather(assign, ctx.edge_u.clone())?;
    let sv = tape.row_gather(assign, ctx.edge_v.clone())?;
    let agree = tape.mul(su, sv)?;
    let intra = tape.sum_all(agree);
    let intra = tape.scale(intra, 1.0 / ctx.num_edges as f64);

    let mass = tape.mean(assign, Axis::Rows)?;
    let target = tape.constant(Tensor::full(1, c, 1.0 / c as f64));
    let dev = tape.sub(mass, target)?;
    let dev_sq = tape.mul(dev, dev)?;
    let balance = tape.sum_all(dev_sq);

    let logp = tape.log_softmax(logits);
    let plogp = tape.mul(assign, logp)?;
    let plogp = tape.sum_all(plogp);
    let entropy = tape.scale(plogp, -1.0 / ctx.num_nodes as f64);

    let bal = tape.scale(balance, lambda_bal);
    let ent = tape.scale(entropy, lambda_ent);
    let total = tape.add(intra, bal)?;
    let total = tape.add(total, ent)?;
    Ok(PartitionLoss { total, intra, balance, entropy })
}

fn check_rows(g: &Graph, n: usize) -> Result<(), HeadError> {
    if g.num_nodes() != n {
        return Err(HeadError::AssignmentRows { expected: g.num_nodes(), got: n });
    }
    Ok(())
}

/// Soft modularity of `assign` on `g`.
pub fn soft_modularity(g: &Graph, assign: &SoftAssignment) -> Result<f64, HeadError> {
    check_rows(g, assign.num_nodes())?;
    let m = g.num_edges() as f64;
    if m == 0.0 {
        return Ok(0.0);
    }
    let p = assign.probs();
    let c = p.cols();
    let agree: f64 = g
        .edges()
        .iter()
        .map(|&(u, v)| p.row(u).iter().zip(p.row(v)).map(|(a, b)| a * b).sum::<f64>())
        .sum();
    let mut volume = vec![0.0; c];
    for (i, &d) in g.degrees().iter().enumerate() {
        for (vc, &pc) in volume.iter_mut().zip(p.row(i)) {
            *vc += d as f64 * pc;
        }
    }
    let null: f64 = volume.iter().map(|v| v * v).sum::<f64>() / (4.0 * m * m);
    Ok(agree / m - null)
}

/// Newman modularity of a hard partition:
/// `Q = sum_c [ L_c / m - (D_c / 2m)^2 ]`.
pub fn hard_modularity(g: &Graph, labels: &[usize]) -> Result<f64, HeadError> {
    check_rows(g, labels.len())?;
    let m = g.num_edges() as f64;
    if m == 0.0 {
        return Ok(0.0);
    }
    let mut internal: BTreeMap<usize, f64> = BTreeMap::new();
    let mut volume: BTreeMap<usize, f64> = BTreeMap::new();
    for &(u, v) in g.edges() {
        if labels[u] == labels[v] {
            *internal.entry(labels[u]).or_default() += 1.0;
        }
    }
    for (i, &d) in g.degrees().iter().enumerate() {
        *volume.entry(labels[i]).or_default() += d as f64;
    }
    Ok(volume
        .iter()
        .map(|(c, &vol)| internal.get(c).copied().unwrap_or(0.0) / m - (vol / (2.0 * m)).powi(2))
        .sum())
}

/// Fraction of edges whose endpoints carry different labels.
pub fn inter_edge_ratio(g: &Graph, labels: &[usize]) -> Result<f64, HeadError> {
    check_rows(g, labels.len())?;
    if g.num_edges() == 0 {
        return Ok(0.0);
    }
    let inter = g.edges().iter().filter(|&&(u, v)| labels[u] != labels[v]).count();
    Ok(inter as f64 / g.num_edges() as f64)
}

/// Soft intra-edge probability `(1/|E|) sum_e S_a . S_b`.
pub fn soft_intra_edge(g: &Graph, assign: &SoftAssignment) -> Result<f64, HeadError> {
    check_rows(g, assign.num_nodes())?;
    if g.num_edges() == 0 {
        return Ok(0.0);
    }
    let p = assign.probs();
    let total: f64 = g
        .edges()
        .iter()
        .map(|&(u, v)| p.row(u).iter().zip(p.row(v)).map(|(a, b)| a * b).sum::<f64>())
        .sum();
    Ok(total / g.num_edges() as f64)
}

/// Fraction of `predictions` equal to `labels`; 0 for empty input.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures::path;

    fn two_k4() -> Graph {
        let mut edges = Vec::new();
        for base in [0, 4] {
            for a in 0..4 {
                for b in a + 1..4 {
                    edges.push((base + a, base + b));
                }
            }
        }
        Graph::with_degree_features(8, edges).unwrap()
    }

    #[test]
    fn uniform_logits_cross_entropy_is_ln_c() {
        let mut tape = Tape::new();
        let logits = tape.constant(Tensor::zeros(1, 3));
        let loss = cross_entropy(&mut tape, logits, 1).unwrap();
        assert!((tape.value(loss).item() - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_logits_have_near_zero_loss() {
        let mut tape = Tape::new();
        let logits = tape.constant(Tensor::row_vector(vec![50.0, 0.0, 0.0]));
        let loss = cross_entropy(&mut tape, logits, 0).unwrap();
        assert!(tape.value(loss).item() < 1e-20);
    }

    #[test]
    fn label_out_of_range() {
        let mut tape = Tape::new();
        let reps = tape.constant(Tensor::zeros(4, 2));
        let head = tape.constant(Tensor::zeros(2, 3));
        assert!(matches!(
            classify_graph(&mut tape, reps, head, 3),
            Err(HeadError::LabelOutOfRange { label: 3, num_classes: 3 })
        ));
    }

    #[test]
    fn accuracy_all_correct() {
        assert_eq!(accuracy(&[0, 2, 1], &[0, 2, 1]), 1.0);
        assert_eq!(accuracy(&[0, 0], &[0, 1]), 0.5);
    }

    #[test]
    fn modularity_two_cliques() {
        let g = two_k4();
        let labels = [0, 0, 0, 0, 1, 1, 1, 1];
        assert!((hard_modularity(&g, &labels).unwrap() - 0.5).abs() < 1e-12);
        let soft = soft_modularity(&g, &SoftAssignment::hard(&labels, 2)).unwrap();
        assert!((soft - 0.5).abs() < 1e-12);
        assert!(hard_modularity(&g, &[0; 8]).unwrap().abs() < 1e-12);
        assert!(soft_modularity(&g, &SoftAssignment::uniform(8, 10)).unwrap().abs() < 1e-12);

        let ctx = GraphContext::new(&g, 1).unwrap();
        let mut tape = Tape::new();
        let s = tape.constant(SoftAssignment::hard(&labels, 2).probs().clone());
        let loss = soft_modularity_loss(&mut tape, &ctx, s).unwrap();
        assert!((tape.value(loss).item() + 0.5).abs() < 1e-12);
    }

    #[test]
    fn inter_edge_ratio_examples() {
        let g = path(4);
        assert_eq!(inter_edge_ratio(&g, &[0, 0, 1, 1]).unwrap(), 1.0 / 3.0);
        assert_eq!(inter_edge_ratio(&g, &[2; 4]).unwrap(), 0.0);
    }

    #[test]
    fn intra_term_examples() {
        let g = path(4);
        assert!((soft_intra_edge(&g, &SoftAssignment::hard(&[0; 4], 2)).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(soft_intra_edge(&g, &SoftAssignment::hard(&[0, 1, 0, 1], 2)).unwrap(), 0.0);
        assert!((soft_intra_edge(&g, &SoftAssignment::uniform(4, 10)).unwrap() - 0.1).abs() < 1e-12);

        let ctx = GraphContext::new(&g, 1).unwrap();
        let mut tape = Tape::new();
        let logits = tape.constant(Tensor::zeros(4, 10));
        let parts = inverse_partition_loss(&mut tape, &ctx, logits, 1.0, 0.1).unwrap();
        assert!((tape.value(parts.intra).item() - 0.1).abs() < 1e-12);
        assert!(tape.value(parts.balance).item().abs() < 1e-15);
        assert!((tape.value(parts.entropy).item() - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn soft_assignment_rejects_bad_rows() {
        assert!(SoftAssignment::new(Tensor::from_rows(&[vec![0.5, 0.6]]).unwrap()).is_err());
        assert!(SoftAssignment::new(Tensor::from_rows(&[vec![0.25, 0.75]]).unwrap()).is_ok());
        assert_eq!(SoftAssignment::hard(&[1, 0], 2).argmax(), vec![1, 0]);
    }

    #[test]
    fn task_json() {
        let t: Task = serde_json::from_str(r#"{"kind":"inverse_partition"}"#).unwrap();
        assert_eq!(t, Task::inverse_partition());
        assert!(serde_json::from_str::<Task>(r#"{"kind":"community_detection","bogus":1}"#).is_err());
        assert_eq!(Task::GraphClassification { num_classes: 3 }.output_dim(), 3);
    }
}
