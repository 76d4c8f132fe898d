//! Candidate message-passing operations.
//!
//! Each operation maps node embeddings `N x d_in` to `N x d_m`. All linear
//! maps are bias-free. Aggregation over an empty neighborhood contributes
//! zero.
//!
//! | kind        | update for node `i`                                        |
//! |-------------|------------------------------------------------------------|
//! | `gcn`       | `sum_{j in N(i) + i} h_j W / sqrt((d_i+1)(d_j+1))`         |
//! | `gin`       | `relu(((1+eps) h_i + sum_{j in N(i)} h_j) W_a) W_b`        |
//! | `sage_mean` | `h_i W_1 + mean_{j in N(i)} h_j W_2`                       |
//! | `graphconv` | `h_i W_1 + sum_{j in N(i)} h_j W_2`                        |
//! | `linear`    | `h_i W`                                                    |

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::context::GraphContext;
use crate::params::{xavier_uniform, Bound, ParamId, ParamStore};
use crate::tensor::{Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Gcn,
    Gin,
    SageMean,
    GraphConv,
    Linear,
}

impl OpKind {
    /// The default candidate set, in its fixed order.
    pub const DEFAULT_SET: [OpKind; 5] =
        [OpKind::Gcn, OpKind::Gin, OpKind::SageMean, OpKind::GraphConv, OpKind::Linear];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Gcn => "gcn",
            OpKind::Gin => "gin",
            OpKind::SageMean => "sage_mean",
            OpKind::GraphConv => "graphconv",
            OpKind::Linear => "linear",
        }
    }

    /// Learnable scalars for input width `d_in` and output width `d_out`.
    pub fn num_parameters(self, d_in: usize, d_out: usize) -> usize {
        match self {
            OpKind::Gcn | OpKind::Linear => d_in * d_out,
            OpKind::Gin => d_in * d_out + d_out * d_out + 1,
            OpKind::SageMean | OpKind::GraphConv => 2 * d_in * d_out,
        }
    }

    /// Whether the output at node `i` can depend on its neighbors.
    pub fn uses_neighbors(self) -> bool {
        !matches!(self, OpKind::Linear)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OpKind::DEFAULT_SET
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown operation `{s}`"))
    }
}

/// One operation instance with its weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateOp {
    pub kind: OpKind,
    weights: Vec<ParamId>,
}

impl CandidateOp {
    pub fn weights(&self) -> &[ParamId] {
        &self.weights
    }
}

/// Ordered candidate operations of one layer. Index `k` always names the same op.
#[derive(Debug, Clone, PartialEq)]
pub struct OperationSet {
    ops: Vec<CandidateOp>,
    d_in: usize,
    d_out: usize,
}

impl OperationSet {
    /// Allocates weights for `kinds` in `store`, named `{prefix}.{k}.{kind}.{w}`.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        kinds: &[OpKind],
        d_in: usize,
        d_out: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let ops = kinds
            .iter()
            .enumerate()
            .map(|(k, &kind)| {
                let name = |w: &str| format!("{prefix}.{k}.{}.{w}", kind.name());
                let weights = match kind {
                    OpKind::Gcn | OpKind::Linear => {
                        vec![store.add(name("w"), xavier_uniform(rng, d_in, d_out))]
                    }
                    OpKind::Gin => vec![
                        store.add(name("eps"), Tensor::scalar(0.0)),
                        store.add(name("w_a"), xavier_uniform(rng, d_in, d_out)),
                        store.add(name("w_b"), xavier_uniform(rng, d_out, d_out)),
                    ],
                    OpKind::SageMean | OpKind::GraphConv => vec![
                        store.add(name("w_self"), xavier_uniform(rng, d_in, d_out)),
                        store.add(name("w_neigh"), xavier_uniform(rng, d_in, d_out)),
                    ],
                };
                CandidateOp { kind, weights }
            })
            .collect();
        Self { ops, d_in, d_out }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn ops(&self) -> &[CandidateOp] {
        &self.ops
    }

    pub fn kinds(&self) -> Vec<OpKind> {
        self.ops.iter().map(|o| o.kind).collect()
    }

    /// Column labels: the op name, suffixed with its index when a kind repeats.
    pub fn names(&self) -> Vec<String> {
        op_names(&self.kinds())
    }

    pub fn num_parameters(&self) -> usize {
        self.ops.iter().map(|o| o.kind.num_parameters(self.d_in, self.d_out)).sum()
    }

    /// Evaluates every operation once on `h`, returning `K` tensors of shape `N x d_m`.
    pub fn apply_all(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        ctx: &GraphContext,
        h: Var,
    ) -> Result<Vec<Var>, TensorError> {
        let s = tape.shape(h);
        if s.cols != self.d_in || s.rows != ctx.num_nodes {
            return Err(TensorError::ShapeMismatch {
                op: "apply_all",
                lhs: s,
                rhs: crate::tensor::Shape::new(ctx.num_nodes, self.d_in),
            });
        }
        self.ops.iter().map(|op| apply_one(tape, bound, ctx, op, h)).collect()
    }
}

pub fn op_names(kinds: &[OpKind]) -> Vec<String> {
    kinds
        .iter()
        .enumerate()
        .map(|(k, kind)| {
            if kinds.iter().filter(|&&other| other == *kind).count() > 1 {
                format!("{}_{k}", kind.name())
            } else {
                kind.name().to_string()
            }
        })
        .collect()
}

fn neighbor_sum(tape: &mut Tape, ctx: &GraphContext, x: Var) -> Result<Var, TensorError> {
    let msgs = tape.row_gather(x, ctx.arc_src.clone())?;
    tape.segment_sum(msgs, ctx.arc_dst.clone(), ctx.num_nodes)
}

fn apply_one(
    tape: &mut Tape,
    bound: &Bound,
    ctx: &GraphContext,
    op: &CandidateOp,
    h: Var,
) -> Result<Var, TensorError> {
    let w = |i: usize| bound.var(op.weights[i]);
    match op.kind {
        OpKind::Linear => tape.matmul(h, w(0)),
        OpKind::Gcn => {
            let hw = tape.matmul(h, w(0))?;
            let msgs = tape.row_gather(hw, ctx.gcn_src.clone())?;
            let scaled = tape.scale_rows(msgs, ctx.gcn_coef.clone())?;
            tape.segment_sum(scaled, ctx.gcn_dst.clone(), ctx.num_nodes)
        }
        OpKind::Gin => {
            let d_in = tape.shape(h).cols;
            let ones = tape.constant(Tensor::full(1, d_in, 1.0));
            let eps_row = tape.matmul(w(0), ones)?;
            let eps_h = tape.mul(h, eps_row)?;
            let own = tape.add(h, eps_h)?;
            let agg = neighbor_sum(tape, ctx, h)?;
            let z = tape.add(own, agg)?;
            let hidden = tape.matmul(z, w(1))?;
            let hidden = tape.relu(hidden);
            tape.matmul(hidden, w(2))
        }
        OpKind::SageMean => {
            let own = tape.matmul(h, w(0))?;
            let agg = neighbor_sum(tape, ctx, h)?;
            let mean = tape.scale_rows(agg, ctx.inv_degree.clone())?;
            let neigh = tape.matmul(mean, w(1))?;
            tape.add(own, neigh)
        }
        OpKind::GraphConv => {
            let own = tape.matmul(h, w(0))?;
            let hw = tape.matmul(h, w(1))?;
            let neigh = neighbor_sum(tape, ctx, hw)?;
            tape.add(own, neigh)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures::path;
    use crate::graph::Graph;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_identity_returns_input() {
        let g = path(3);
        let ctx = GraphContext::new(&g, 1).unwrap();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let set = OperationSet::new(&mut store, "l0", &[OpKind::Linear], 12, 12, &mut rng);
        *store.get_mut(set.ops()[0].weights()[0]) = Tensor::identity(12);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let h = tape.constant(ctx.features.clone());
        let out = set.apply_all(&mut tape, &bound, &ctx, h).unwrap();
        assert_eq!(tape.value(out[0]).data(), ctx.features.data());
    }

    #[test]
    fn isolated_node_sees_only_itself() {
        // node 3 is isolated
        let g = Graph::new(4, vec![(0, 1), (1, 2)], vec![vec![1.0, 2.0]; 4]).unwrap();
        let other = Graph::new(4, vec![(0, 1), (1, 2), (0, 2)], vec![vec![1.0, 2.0]; 4]).unwrap();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let set = OperationSet::new(&mut store, "l0", &OpKind::DEFAULT_SET, 2, 3, &mut rng);
        let run = |g: &Graph| {
            let ctx = GraphContext::new(g, 5).unwrap();
            let mut tape = Tape::new();
            let bound = store.bind(&mut tape);
            let h = tape.constant(ctx.features.clone());
            let outs = set.apply_all(&mut tape, &bound, &ctx, h).unwrap();
            outs.iter().map(|&o| tape.value(o).row(3).to_vec()).collect::<Vec<_>>()
        };
        assert_eq!(run(&g), run(&other));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let g = path(3);
        let ctx = GraphContext::new(&g, 1).unwrap();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let set = OperationSet::new(&mut store, "l0", &[OpKind::Gcn], 5, 4, &mut rng);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let h = tape.constant(ctx.features.clone());
        assert!(set.apply_all(&mut tape, &bound, &ctx, h).is_err());
    }

    #[test]
    fn names_disambiguate_repeats() {
        assert_eq!(op_names(&[OpKind::Linear, OpKind::Gcn, OpKind::Linear]), ["linear_0", "gcn", "linear_2"]);
        assert_eq!("sage_mean".parse::<OpKind>().unwrap(), OpKind::SageMean);
    }
}
