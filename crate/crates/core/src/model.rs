//! Multi-dimension node-specific architecture search model.
//!
//! A forward pass runs the feature-only mapping encoder once, then for each
//! layer:
//!
//! 1. evaluates every candidate operation once, giving the mapped embeddings
//!    `E_i = [e_i^1 .. e_i^K]` for each node;
//! 2. encodes the node's link pattern (degree ratios and graph assortativity)
//!    into a `K`-vector `lp_i`;
//! 3. for each search dimension `z`, scores the operations with
//!    `s_i^z = lp_i * (e_i^z W^s E_i^T) / sqrt(d_m)` and normalizes with a
//!    softmax, giving `p_i^{z,o}`;
//! 4. fuses `h_i <- relu(mean_z sum_o p_i^{z,o} e_i^o) + h_i`.
//!    With `rms_norm` (the default) the fused row is then rescaled to RMS 1.
//!
//! The number of search dimensions is always the number of operations, and
//! the query of dimension `z` is the `z`-th mapped embedding.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::GraphContext;
use crate::graph::GraphError;
use crate::heads::Task;
use crate::ops::{op_names, OpKind, OperationSet};
use crate::params::{xavier_uniform, Bound, ParamId, ParamStore};
use crate::tensor::{Axis, Tape, Tensor, TensorError, Var};

pub const CHECKPOINT_FORMAT: &str = "nodenas-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Norm floor in the cosine regularizer.
pub const COSINE_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("feature dimension mismatch: model expects {expected}, graph has {got}")]
    FeatureDim { expected: usize, got: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    /// Per-node probabilities over `Z = K` search dimensions.
    #[default]
    Mnnas,
    /// Per-node probabilities over a single search dimension.
    NodenasSingleDim,
    /// One probability vector per graph (node probabilities averaged before fusion).
    GraphLevelNas,
}

impl SearchMode {
    pub fn name(self) -> &'static str {
        match self {
            SearchMode::Mnnas => "mnnas",
            SearchMode::NodenasSingleDim => "nodenas_single_dim",
            SearchMode::GraphLevelNas => "graph_level_nas",
        }
    }
}

impl std::str::FromStr for SearchMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mnnas" => Ok(SearchMode::Mnnas),
            "nodenas_single_dim" => Ok(SearchMode::NodenasSingleDim),
            "graph_level_nas" => Ok(SearchMode::GraphLevelNas),
            _ => Err(format!(
                "unknown mode `{s}` (expected mnnas, nodenas_single_dim or graph_level_nas)"
            )),
        }
    }
}

fn default_ops() -> Vec<OpKind> {
    OpKind::DEFAULT_SET.to_vec()
}

fn default_eta() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Input feature width `d_i`.
    pub input_dim: usize,
    /// Encoder embedding width `d_e`; must equal `mapped_dim`.
    pub embed_dim: usize,
    /// Mapped embedding width `d_m`.
    pub mapped_dim: usize,
    /// Output width `d_o` (classes or clusters).
    pub output_dim: usize,
    pub layers: usize,
    #[serde(default = "default_ops")]
    pub ops: Vec<OpKind>,
    /// Initial value of the learnable global-path scale.
    #[serde(default = "default_eta")]
    pub eta_init: f64,
    #[serde(default)]
    pub mode: SearchMode,
    /// Rescale each fused row to RMS 1 after every layer.
    #[serde(default = "default_true")]
    pub rms_norm: bool,
}

fn default_true() -> bool {
    true
}

impl ModelConfig {
    pub fn new(input_dim: usize, hidden: usize, output_dim: usize, layers: usize) -> Self {
        Self {
            input_dim,
            embed_dim: hidden,
            mapped_dim: hidden,
            output_dim,
            layers,
            ops: default_ops(),
            eta_init: default_eta(),
            mode: SearchMode::Mnnas,
            rms_norm: true,
        }
    }

    pub fn num_ops(&self) -> usize {
        self.ops.len()
    }

    /// Probability rows per node and layer: `K` in mnnas mode, otherwise 1.
    pub fn search_dims(&self) -> usize {
        match self.mode {
            SearchMode::Mnnas => self.num_ops(),
            SearchMode::NodenasSingleDim | SearchMode::GraphLevelNas => 1,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            ("input_dim", self.input_dim),
            ("embed_dim", self.embed_dim),
            ("mapped_dim", self.mapped_dim),
            ("output_dim", self.output_dim),
            ("layers", self.layers),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(ModelError::Config(format!("{name} must be at least 1")));
            }
        }
        if self.ops.is_empty() {
            return Err(ModelError::Config("operation set is empty (K = 0)".into()));
        }
        if self.embed_dim != self.mapped_dim {
            return Err(ModelError::Config(format!(
                "embed_dim ({}) must equal mapped_dim ({}) for the residual connection",
                self.embed_dim, self.mapped_dim
            )));
        }
        if !self.eta_init.is_finite() {
            return Err(ModelError::Config("eta_init must be finite".into()));
        }
        Ok(())
    }

    /// Closed-form parameter count for this configuration.
    pub fn parameter_count(&self) -> ParameterCount {
        let (di, de, dm, dout, k) =
            (self.input_dim, self.embed_dim, self.mapped_dim, self.output_dim, self.num_ops());
        let attention = match self.mode {
            SearchMode::NodenasSingleDim => dm,
            _ => dm * dm,
        };
        let op_extras_per_layer: usize =
            self.ops.iter().map(|op| op.num_parameters(de, dm) - de * dm).sum();
        ParameterCount {
            encoder: 2 * di * de,
            head: dm * dout,
            attention_per_layer: attention,
            link_pattern_per_layer: 4 * k,
            ops_per_layer: k * de * dm,
            op_extras: self.layers * op_extras_per_layer,
            eta: 1,
            layers: self.layers,
        }
    }
}

/// Learnable scalar count, split by component.
///
/// `formula()` is `2 d_i d_e + d_m d_o + L (A + K (4 + d_e d_m))` with
/// `A = d_m^2` (or `d_m` in single-dimension mode). `total()` adds the extra
/// weights of multi-matrix operations (gin, sage_mean, graphconv) and the
/// encoder's learnable scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ParameterCount {
    pub encoder: usize,
    pub head: usize,
    pub attention_per_layer: usize,
    pub link_pattern_per_layer: usize,
    pub ops_per_layer: usize,
    pub op_extras: usize,
    pub eta: usize,
    pub layers: usize,
}

impl ParameterCount {
    pub fn formula(&self) -> usize {
        self.encoder
            + self.head
            + self.layers * (self.attention_per_layer + self.link_pattern_per_layer + self.ops_per_layer)
    }

    pub fn total(&self) -> usize {
        self.formula() + self.op_extras + self.eta
    }
}

#[derive(Debug, Clone, PartialEq)]
struct EncoderParams {
    main: ParamId,
    global: ParamId,
    eta: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ops: OperationSet,
    pub link: ParamId,
    pub attention: ParamId,
}

/// Per-layer, per-node, per-dimension operation probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchitectureProbabilities {
    pub num_nodes: usize,
    pub dims: usize,
    pub num_ops: usize,
    /// One `(N * dims) x K` tensor per layer; row `i * dims + z`.
    pub layers: Vec<Tensor>,
}

impl ArchitectureProbabilities {
    pub fn get(&self, layer: usize, node: usize, dim: usize, op: usize) -> f64 {
        self.layers[layer].get(node * self.dims + dim, op)
    }

    pub fn row(&self, layer: usize, node: usize, dim: usize) -> &[f64] {
        self.layers[layer].row(node * self.dims + dim)
    }

    /// Largest deviation of any row sum from 1, and the smallest entry.
    pub fn simplex_error(&self) -> (f64, f64) {
        let mut worst: f64 = 0.0;
        let mut min = f64::INFINITY;
        for t in &self.layers {
            for r in 0..t.rows() {
                let row = t.row(r);
                worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
                min = row.iter().copied().fold(min, f64::min);
            }
        }
        (worst, min)
    }
}

/// Tape handles produced by [`Mnnas::forward`].
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Final node representations, `N x d_m`.
    pub node_reps: Var,
    /// Per layer, `(N * Z) x K` probabilities.
    pub probabilities: Vec<Var>,
    /// Per layer, stacked mapped embeddings `(N * K) x d_m`.
    pub mapped: Vec<Var>,
    /// Cosine regularizer summed over layers.
    pub cosine: Var,
    /// Operation evaluations performed in each layer.
    pub op_evaluations: Vec<usize>,
    pub dims: usize,
}

impl ForwardOutput {
    pub fn architecture(&self, tape: &Tape, num_nodes: usize, num_ops: usize) -> ArchitectureProbabilities {
        ArchitectureProbabilities {
            num_nodes,
            dims: self.dims,
            num_ops,
            layers: self.probabilities.iter().map(|&p| tape.value(p).clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mnnas {
    config: ModelConfig,
    params: ParamStore,
    encoder: EncoderParams,
    layers: Vec<LayerParams>,
    head: ParamId,
}

impl Mnnas {
    /// Builds a model with Xavier-uniform weights, `eta = eta_init` and gin `eps = 0`.
    pub fn new(config: ModelConfig, rng: &mut impl Rng) -> Result<Self, ModelError> {
        config.validate()?;
        let mut params = ParamStore::new();
        let (di, de, dm) = (config.input_dim, config.embed_dim, config.mapped_dim);
        let encoder = EncoderParams {
            main: params.add("encoder.main", xavier_uniform(rng, di, de)),
            global: params.add("encoder.global", xavier_uniform(rng, di, de)),
            eta: params.add("encoder.eta", Tensor::scalar(config.eta_init)),
        };
        let k = config.num_ops();
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let d_in = if l == 0 { de } else { dm };
            let ops = OperationSet::new(&mut params, &format!("layer{l}.ops"), &config.ops, d_in, dm, rng);
            let link = params.add(format!("layer{l}.link_pattern"), xavier_uniform(rng, 4, k));
            let attention = match config.mode {
                SearchMode::NodenasSingleDim => {
                    params.add(format!("layer{l}.attention_query"), xavier_uniform(rng, dm, 1))
                }
                _ => params.add(format!("layer{l}.attention"), xavier_uniform(rng, dm, dm)),
            };
            layers.push(LayerParams { ops, link, attention });
        }
        let head = params.add("head", xavier_uniform(rng, dm, config.output_dim));
        Ok(Self { config, params, encoder, layers, head })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn head(&self) -> ParamId {
        self.head
    }

    pub fn eta(&self) -> ParamId {
        self.encoder.eta
    }

    pub fn op_names(&self) -> Vec<String> {
        op_names(&self.config.ops)
    }

    /// Learnable scalars actually allocated.
    pub fn count_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn context(&self, g: &crate::graph::Graph) -> Result<GraphContext, ModelError> {
        if g.feature_dim() != self.config.input_dim {
            return Err(ModelError::FeatureDim { expected: self.config.input_dim, got: g.feature_dim() });
        }
        Ok(GraphContext::new(g, self.config.num_ops())?)
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, ctx: &GraphContext) -> Result<ForwardOutput, ModelError> {
        if ctx.features.cols() != self.config.input_dim {
            return Err(ModelError::FeatureDim { expected: self.config.input_dim, got: ctx.features.cols() });
        }
        if ctx.num_ops != self.config.num_ops() {
            return Err(ModelError::Config(format!(
                "graph context built for K = {}, model has K = {}",
                ctx.num_ops,
                self.config.num_ops()
            )));
        }
        let x = tape.constant(ctx.features.clone());
        let mut h = mapping_encoder(
            tape,
            x,
            bound.var(self.encoder.main),
            bound.var(self.encoder.global),
            bound.var(self.encoder.eta),
        )?;
        let link_inputs = tape.constant(ctx.link_inputs.clone());
        let dm = self.config.mapped_dim;
        let mut probabilities = Vec::with_capacity(self.layers.len());
        let mut mapped_all = Vec::with_capacity(self.layers.len());
        let mut op_evaluations = Vec::with_capacity(self.layers.len());
        let mut cosine_terms = Vec::with_capacity(self.layers.len());

        for layer in &self.layers {
            let outputs = layer.ops.apply_all(tape, bound, ctx, h)?;
            op_evaluations.push(outputs.len());
            let mapped = stack_mapped(tape, &outputs, ctx.num_nodes, dm)?;
            let lp = link_pattern_encode(tape, link_inputs, bound.var(layer.link))?;
            let attention = bound.var(layer.attention);
            let (probs, fuse_weights, dims) = match self.config.mode {
                SearchMode::Mnnas => {
                    let p = adaptive_attention(tape, ctx, mapped, lp, attention)?;
                    (p, p, ctx.num_ops)
                }
                SearchMode::NodenasSingleDim => {
                    let p = single_dim_attention(tape, ctx, mapped, lp, attention)?;
                    (p, p, 1)
                }
                SearchMode::GraphLevelNas => {
                    let p = adaptive_attention(tape, ctx, mapped, lp, attention)?;
                    let per_node = mean_over_dims(tape, ctx, p, ctx.num_ops)?;
                    let graph = tape.mean(per_node, Axis::Rows)?;
                    let shared = tape.row_gather(graph, ctx.broadcast_zero.clone())?;
                    (shared, shared, 1)
                }
            };
            h = fuse(tape, ctx, mapped, fuse_weights, dims, h)?;
            if self.config.rms_norm {
                h = rms_normalize(tape, h)?;
            }
            probabilities.push(probs);
            mapped_all.push(mapped);
            cosine_terms.push(cosine_regularizer(tape, mapped, ctx.block_node.clone(), ctx.num_nodes)?);
        }

        let mut cosine = cosine_terms[0];
        for &c in &cosine_terms[1..] {
            cosine = tape.add(cosine, c)?;
        }
        let dims = self.config.search_dims();
        Ok(ForwardOutput { node_reps: h, probabilities, mapped: mapped_all, cosine, op_evaluations, dims })
    }

    pub fn to_checkpoint(&self, seed: u64, task: Option<Task>) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            task,
            op_order: self.op_names(),
            seed,
            params: self.params.clone(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, ModelError> {
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut model = Self::new(ckpt.config.clone(), &mut rng)?;
        if ckpt.op_order != model.op_names() {
            return Err(ModelError::Checkpoint(format!(
                "operation order {:?} does not match config {:?}",
                ckpt.op_order,
                model.op_names()
            )));
        }
        if ckpt.params.len() != model.params.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                model.params.len(),
                ckpt.params.len()
            )));
        }
        for (slot, saved) in model.params.entries().iter().zip(ckpt.params.entries()) {
            if slot.name != saved.name || slot.value.shape() != saved.value.shape() {
                return Err(ModelError::Checkpoint(format!(
                    "parameter {} {} does not match saved {} {}",
                    slot.name,
                    slot.value.shape(),
                    saved.name,
                    saved.value.shape()
                )));
            }
        }
        model.params = ckpt.params.clone();
        Ok(model)
    }
}

/// Serialized model: config echo, operation order, seed and every parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    #[serde(default)]
    pub task: Option<Task>,
    pub op_order: Vec<String>,
    pub seed: u64,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}

/// `h = relu(x W_main + eta * mean_j(x_j) W_global)`.
///
/// Only node features enter; the adjacency is never read.
pub fn mapping_encoder(tape: &mut Tape, x: Var, main: Var, global: Var, eta: Var) -> Result<Var, TensorError> {
    let local = tape.matmul(x, main)?;
    let mean = tape.mean(x, Axis::Rows)?;
    let global = tape.matmul(mean, global)?;
    let global = tape.matmul(eta, global)?;
    let pre = tape.add(local, global)?;
    Ok(tape.relu(pre))
}

/// `N x 4` link-pattern inputs times the layer's `4 x K` map.
pub fn link_pattern_encode(tape: &mut Tape, link_inputs: Var, weights: Var) -> Result<Var, TensorError> {
    tape.matmul(link_inputs, weights)
}

/// Stacks `K` operation outputs (`N x d_m` each) into `(N * K) x d_m`,
/// row `i * K + k` holding `o_k(h)_i`.
pub fn stack_mapped(tape: &mut Tape, outputs: &[Var], n: usize, dm: usize) -> Result<Var, TensorError> {
    let wide = tape.concat(outputs)?;
    tape.reshape(wide, n * outputs.len(), dm)
}

/// Multi-dimension attention; returns `(N * K) x K` probabilities, row `i*K + z`.
pub fn adaptive_attention(
    tape: &mut Tape,
    ctx: &GraphContext,
    mapped: Var,
    lp: Var,
    ws: Var,
) -> Result<Var, TensorError> {
    let k = ctx.num_ops;
    let dm = tape.shape(mapped).cols;
    let queries = tape.matmul(mapped, ws)?;
    let q = tape.row_gather(queries, ctx.pair_query.clone())?;
    let keys = tape.row_gather(mapped, ctx.pair_key.clone())?;
    let prod = tape.mul(q, keys)?;
    let dots = tape.sum(prod, Axis::Cols);
    let scores = tape.reshape(dots, ctx.num_nodes * k, k)?;
    let scores = tape.scale(scores, 1.0 / (dm as f64).sqrt());
    let gate = tape.row_gather(lp, ctx.block_node.clone())?;
    let gated = tape.mul(scores, gate)?;
    Ok(tape.softmax(gated))
}

/// Single-dimension attention with a learned query column `u`:
/// `s_i = lp_i * (E_i u) / sqrt(d_m)`; returns `N x K`.
pub fn single_dim_attention(
    tape: &mut Tape,
    ctx: &GraphContext,
    mapped: Var,
    lp: Var,
    query: Var,
) -> Result<Var, TensorError> {
    let dm = tape.shape(mapped).cols;
    let dots = tape.matmul(mapped, query)?;
    let scores = tape.reshape(dots, ctx.num_nodes, ctx.num_ops)?;
    let scores = tape.scale(scores, 1.0 / (dm as f64).sqrt());
    let gated = tape.mul(scores, lp)?;
    Ok(tape.softmax(gated))
}

fn mean_over_dims(tape: &mut Tape, ctx: &GraphContext, probs: Var, dims: usize) -> Result<Var, TensorError> {
    if dims == 1 {
        return Ok(probs);
    }
    let ids: Arc<[usize]> = (0..ctx.num_nodes * dims).map(|r| r / dims).collect();
    let summed = tape.segment_sum(probs, ids, ctx.num_nodes)?;
    Ok(tape.scale(summed, 1.0 / dims as f64))
}

/// `h_next_i = relu((1/Z) sum_z sum_o p_i^{z,o} e_i^o) + h_prev_i`.
///
/// `probs` is `(N * dims) x K`; `mapped` is the stacked `(N * K) x d_m`.
pub fn fuse(
    tape: &mut Tape,
    ctx: &GraphContext,
    mapped: Var,
    probs: Var,
    dims: usize,
    h_prev: Var,
) -> Result<Var, TensorError> {
    let (n, k) = (ctx.num_nodes, ctx.num_ops);
    let dm = tape.shape(mapped).cols;
    let per_node = mean_over_dims(tape, ctx, probs, dims)?;
    let column = tape.reshape(per_node, n * k, 1)?;
    let ones = tape.constant(Tensor::full(1, dm, 1.0));
    let spread = tape.matmul(column, ones)?;
    let weighted = tape.mul(mapped, spread)?;
    let mixed = tape.segment_sum(weighted, ctx.block_node.clone(), n)?;
    let act = tape.relu(mixed);
    tape.add(act, h_prev)
}

/// `sqrt(d) * x_i / ||x_i||` per row; zero rows stay zero.
pub fn rms_normalize(tape: &mut Tape, x: Var) -> Result<Var, TensorError> {
    let d = tape.shape(x).cols as f64;
    let unit = tape.normalize_rows(x, COSINE_EPS);
    Ok(tape.scale(unit, d.sqrt()))
}

/// `sum_i sum_{o != o'} cos(e_i^o, e_i^o')`, computed as
/// `sum_i (||sum_o y_i^o||^2 - sum_o ||y_i^o||^2)` with `y = e / max(||e||, eps)`.
///
/// `block_node[r]` is the node owning row `r` of `mapped`.
pub fn cosine_regularizer(
    tape: &mut Tape,
    mapped: Var,
    block_node: Arc<[usize]>,
    num_nodes: usize,
) -> Result<Var, TensorError> {
    let unit = tape.normalize_rows(mapped, COSINE_EPS);
    let per_node = tape.segment_sum(unit, block_node, num_nodes)?;
    let sq = tape.mul(per_node, per_node)?;
    let total = tape.sum_all(sq);
    let self_sq = tape.mul(unit, unit)?;
    let diag = tape.sum_all(self_sq);
    tape.sub(total, diag)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures::{cycle, path};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(42)
    }

    #[test]
    fn config_validation() {
        let mut c = ModelConfig::new(12, 8, 3, 2);
        assert!(c.validate().is_ok());
        c.ops.clear();
        assert!(matches!(c.validate(), Err(ModelError::Config(_))));
        let mut c = ModelConfig::new(12, 8, 3, 2);
        c.mapped_dim = 6;
        assert!(matches!(c.validate(), Err(ModelError::Config(_))));
        let mut c = ModelConfig::new(12, 8, 3, 2);
        c.layers = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn parameter_count_linear_only_example() {
        let mut c = ModelConfig::new(4, 8, 3, 2);
        c.ops = vec![OpKind::Linear; 5];
        let count = c.parameter_count();
        assert_eq!(count.formula(), 896);
        assert_eq!(count.total(), 897);
        let model = Mnnas::new(c, &mut rng()).unwrap();
        assert_eq!(model.count_parameters(), 897);
    }

    #[test]
    fn layer_increment_matches_formula() {
        let mut one = ModelConfig::new(4, 8, 3, 1);
        let mut two = one.clone();
        two.layers = 2;
        let per_layer_extra: usize = one.ops.iter().map(|o| o.num_parameters(8, 8) - 64).sum();
        let delta = two.parameter_count().total() - one.parameter_count().total();
        assert_eq!(delta, 64 + 5 * (4 + 64) + per_layer_extra);
        one.ops = vec![OpKind::Linear];
        assert_eq!(Mnnas::new(one.clone(), &mut rng()).unwrap().count_parameters(), one.parameter_count().total());
    }

    #[test]
    fn cosine_regularizer_examples() {
        let eval = |rows: &[Vec<f64>]| {
            let mut tape = Tape::new();
            let m = tape.constant(Tensor::from_rows(rows).unwrap());
            let out = cosine_regularizer(&mut tape, m, vec![0; rows.len()].into(), 1).unwrap();
            tape.value(out).item()
        };
        assert!(eval(&[vec![1.0, 0.0], vec![0.0, 1.0]]).abs() < 1e-12);
        assert!((eval(&[vec![0.3, 0.4], vec![0.3, 0.4]]) - 2.0).abs() < 1e-12);
        assert!((eval(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]]) - 6.0).abs() < 1e-12);
        assert!(eval(&[vec![0.0, 0.0], vec![1.0, 2.0]]).abs() < 1e-12);
    }

    #[test]
    fn zero_link_weights_give_uniform_probabilities() {
        let g = cycle(6);
        let config = ModelConfig::new(12, 4, 2, 1);
        let mut model = Mnnas::new(config, &mut rng()).unwrap();
        let link = model.layers()[0].link;
        *model.params_mut().get_mut(link) = Tensor::zeros(4, 5);
        let ctx = model.context(&g).unwrap();
        let mut tape = Tape::new();
        let bound = model.params().bind(&mut tape);
        let out = model.forward(&mut tape, &bound, &ctx).unwrap();
        for &v in tape.value(out.probabilities[0]).data() {
            assert!((v - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn feature_dim_mismatch() {
        let model = Mnnas::new(ModelConfig::new(5, 4, 2, 1), &mut rng()).unwrap();
        assert!(matches!(model.context(&path(4)), Err(ModelError::FeatureDim { expected: 5, got: 12 })));
    }
}
