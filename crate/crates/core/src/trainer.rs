//! Training loop, evaluation, degree-group explanations and run artifacts.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::GraphContext;
use crate::graph::{degree_quintile_groups, Graph, GraphError};
use crate::heads::{
    accuracy, argmax, classify_graph, cluster_logits, hard_modularity, inter_edge_ratio, inverse_partition_loss,
    soft_modularity_loss, HeadError, SoftAssignment, Task, TaskMetrics,
};
use crate::model::{Checkpoint, ModelConfig, ModelError, Mnnas};
use crate::optim::{global_norm, Adam, AdamConfig};
use crate::seeding;
use crate::tensor::{Tape, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("dataset `{name}`: {message}")]
    Data { name: String, message: String },
    #[error(
        "non-finite loss at epoch {epoch} (loss {loss}, learning rate {learning_rate}, grad norm {grad_norm})"
    )]
    NonFinite { epoch: usize, loss: f64, learning_rate: f64, grad_norm: f64 },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// How the cosine regularizer enters the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CosineReduction {
    /// Mean pairwise cosine: the sum divided by `layers * N * K * (K - 1)`.
    #[default]
    Mean,
    /// Raw sum over nodes, ordered pairs and layers.
    Sum,
    /// Not computed at all.
    Off,
}

fn one() -> usize {
    1
}
fn default_beta() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub task: Task,
    pub model: ModelConfig,
    #[serde(default)]
    pub optimizer: AdamConfig,
    pub epochs: usize,
    /// Graphs per optimizer step.
    #[serde(default = "one")]
    pub batch_size: usize,
    /// Weight of the cosine regularizer.
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub cosine_reduction: CosineReduction,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub eval_every: usize,
    /// Trailing feature columns redrawn from U[-1, 1) every epoch.
    #[serde(default)]
    pub resample_features: usize,
}

impl TrainConfig {
    pub fn new(task: Task, model: ModelConfig, epochs: usize) -> Self {
        Self {
            task,
            model,
            optimizer: AdamConfig::default(),
            epochs,
            batch_size: 1,
            beta: default_beta(),
            cosine_reduction: CosineReduction::default(),
            seed: 0,
            eval_every: 1,
            resample_features: 0,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.model.validate()?;
        self.task.validate().map_err(TrainError::Config)?;
        self.optimizer.validate().map_err(TrainError::Config)?;
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return Err(TrainError::Config("batch_size and eval_every must be at least 1".into()));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(TrainError::Config("beta must be finite and non-negative".into()));
        }
        if self.resample_features > self.model.input_dim {
            return Err(TrainError::Config(format!(
                "resample_features {} exceeds input_dim {}",
                self.resample_features, self.model.input_dim
            )));
        }
        if self.model.output_dim != self.task.output_dim() {
            return Err(TrainError::Config(format!(
                "model output_dim {} does not match the task's {}",
                self.model.output_dim,
                self.task.output_dim()
            )));
        }
        Ok(())
    }

    pub fn run_id(&self) -> String {
        format!("{}-{}-s{}", self.task.name(), self.model.mode.name(), self.seed)
    }
}

/// Named graph list evaluated during and after training.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub dataset: String,
    pub split: String,
    pub graphs: Vec<Graph>,
}

impl EvalSet {
    pub fn new(dataset: impl Into<String>, split: impl Into<String>, graphs: Vec<Graph>) -> Self {
        Self { dataset: dataset.into(), split: split.into(), graphs }
    }
}

/// One row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub run_id: String,
    pub task: String,
    pub dataset: String,
    pub split: String,
    pub metric: String,
    pub value: f64,
    pub seed: u64,
    pub epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean objective over training graphs.
    pub loss: f64,
    pub task_loss: f64,
    /// Mean pairwise cosine among mapped embeddings (0 when off).
    pub mean_cosine: f64,
    /// Largest pre-clip gradient norm of the epoch.
    pub max_grad_norm: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    pub task: String,
    pub mode: String,
    pub seed: u64,
    pub config: TrainConfig,
    pub num_parameters: usize,
    pub epochs: Vec<EpochRecord>,
    pub metrics: Vec<MetricRow>,
    pub wall_clock_seconds: f64,
    #[serde(default)]
    pub checkpoint: Option<String>,
}

impl RunReport {
    pub fn write_json(&self, path: &Path) -> Result<(), TrainError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Value of `metric` on `(dataset, split)` at the latest evaluated epoch.
    pub fn final_metric(&self, dataset: &str, split: &str, metric: &str) -> Option<f64> {
        self.metrics
            .iter()
            .rev()
            .find(|r| r.dataset == dataset && r.split == split && r.metric == metric)
            .map(|r| r.value)
    }

    pub fn mean_epoch_seconds(&self) -> f64 {
        self.epochs.iter().map(|e| e.seconds).sum::<f64>() / self.epochs.len().max(1) as f64
    }
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricRow]) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Loss handles for one graph.
#[derive(Debug, Clone, Copy)]
pub struct GraphLoss {
    pub total: Var,
    pub task: Var,
    /// Mean pairwise cosine, when computed.
    pub mean_cosine: Option<Var>,
    /// Head output: `1 x C` class logits or `N x C` cluster logits.
    pub logits: Var,
}

/// Builds the objective `L_task + beta * L_cos` for one graph on `tape`.
pub fn graph_objective(
    model: &Mnnas,
    tape: &mut Tape,
    bound: &crate::params::Bound,
    ctx: &GraphContext,
    graph: &Graph,
    task: &Task,
    beta: f64,
    reduction: CosineReduction,
) -> Result<(GraphLoss, crate::model::ForwardOutput), TrainError> {
    let out = model.forward(tape, bound, ctx)?;
    let head = bound.var(model.head());
    let (logits, task_loss) = match *task {
        Task::GraphClassification { .. } => {
            let label = graph.label().ok_or(HeadError::MissingLabel)?;
            classify_graph(tape, out.node_reps, head, label)?
        }
        Task::CommunityDetection { .. } => {
            let logits = cluster_logits(tape, out.node_reps, head)?;
            let assign = tape.softmax(logits);
            (logits, soft_modularity_loss(tape, ctx, assign)?)
        }
        Task::InversePartition { lambda_bal, lambda_ent, .. } => {
            let logits = cluster_logits(tape, out.node_reps, head)?;
            (logits, inverse_partition_loss(tape, ctx, logits, lambda_bal, lambda_ent)?.total)
        }
    };
    let k = ctx.num_ops as f64;
    let pairs = out.mapped.len() as f64 * ctx.num_nodes as f64 * k * (k - 1.0);
    let mean_cosine = if reduction != CosineReduction::Off && pairs > 0.0 {
        Some(tape.scale(out.cosine, 1.0 / pairs))
    } else {
        None
    };
    let total = match (reduction, mean_cosine) {
        (CosineReduction::Mean, Some(mc)) => {
            let reg = tape.scale(mc, beta);
            tape.add(task_loss, reg)?
        }
        (CosineReduction::Sum, Some(_)) => {
            let reg = tape.scale(out.cosine, beta);
            tape.add(task_loss, reg)?
        }
        _ => task_loss,
    };
    Ok((GraphLoss { total, task: task_loss, mean_cosine, logits }, out))
}

fn check_data(config: &TrainConfig, name: &str, graphs: &[Graph], need_labels: bool) -> Result<(), TrainError> {
    let err = |message: String| TrainError::Data { name: name.to_string(), message };
    for (i, g) in graphs.iter().enumerate() {
        if g.feature_dim() != config.model.input_dim {
            return Err(err(format!(
                "graph {i} has feature dimension {}, model expects {}",
                g.feature_dim(),
                config.model.input_dim
            )));
        }
        if g.num_edges() == 0 {
            return Err(err(format!("graph {i} has no edges")));
        }
        if let (true, Task::GraphClassification { num_classes }) = (need_labels, config.task) {
            match g.label() {
                None => return Err(err(format!("graph {i} has no label"))),
                Some(l) if l >= num_classes => {
                    return Err(err(format!("graph {i} label {l} out of range for {num_classes} classes")))
                }
                _ => {}
            }
        }
    }
    Ok(())
}

/// Trained model plus its run report.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Mnnas,
    pub report: RunReport,
}

impl TrainOutcome {
    pub fn checkpoint(&self) -> Checkpoint {
        self.model.to_checkpoint(self.report.seed, Some(self.report.config.task))
    }
}

/// Minimizes `L_task + beta * L_cos` with Adam, evaluating every `eval_every`
/// epochs (and always after the last) on the training set and each eval set.
pub fn train(config: &TrainConfig, train_graphs: &[Graph], evals: &[EvalSet]) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if train_graphs.is_empty() {
        return Err(TrainError::Data { name: "train".into(), message: "no training graphs".into() });
    }
    check_data(config, "train", train_graphs, true)?;
    for e in evals {
        check_data(config, &e.dataset, &e.graphs, true)?;
    }
    let start = Instant::now();
    let mut init_rng = seeding::stream(config.seed, seeding::INIT);
    let mut shuffle_rng = seeding::stream(config.seed, seeding::SHUFFLE);
    let mut model = Mnnas::new(config.model.clone(), &mut init_rng)?;
    let mut resample_rng = seeding::stream(config.seed, seeding::RESAMPLE);
    let mut contexts = train_graphs.iter().map(|g| model.context(g)).collect::<Result<Vec<_>, _>>()?;
    let mut adam = Adam::new(config.optimizer, model.params());
    let run_id = config.run_id();
    let mut report = RunReport {
        run_id: run_id.clone(),
        task: config.task.name().to_string(),
        mode: config.model.mode.name().to_string(),
        seed: config.seed,
        config: config.clone(),
        num_parameters: model.count_parameters(),
        epochs: Vec::with_capacity(config.epochs),
        metrics: Vec::new(),
        wall_clock_seconds: 0.0,
        checkpoint: None,
    };
    let mut order: Vec<usize> = (0..train_graphs.len()).collect();

    for epoch in 1..=config.epochs {
        let epoch_start = Instant::now();
        order.shuffle(&mut shuffle_rng);
        if config.resample_features > 0 {
            for ctx in contexts.iter_mut() {
                let d = ctx.features.cols();
                for row in ctx.features.data_mut().chunks_mut(d) {
                    row[d - config.resample_features..].iter_mut().for_each(|x| *x = resample_rng.gen_range(-1.0..1.0));
                }
            }
        }
        let (mut loss_sum, mut task_sum, mut cos_sum, mut max_norm) = (0.0, 0.0, 0.0, 0.0f64);
        for batch in order.chunks(config.batch_size) {
            let mut acc: Option<Vec<Tensor>> = None;
            for &gi in batch {
                let mut tape = Tape::new();
                let bound = model.params().bind(&mut tape);
                let (loss, _) = graph_objective(
                    &model,
                    &mut tape,
                    &bound,
                    &contexts[gi],
                    &train_graphs[gi],
                    &config.task,
                    config.beta,
                    config.cosine_reduction,
                )?;
                let value = tape.value(loss.total).item();
                let grads = bound.collect(&tape.backward(loss.total)?);
                if !value.is_finite() {
                    return Err(TrainError::NonFinite {
                        epoch,
                        loss: value,
                        learning_rate: config.optimizer.learning_rate,
                        grad_norm: global_norm(&grads),
                    });
                }
                loss_sum += value;
                task_sum += tape.value(loss.task).item();
                cos_sum += loss.mean_cosine.map_or(0.0, |v| tape.value(v).item());
                match acc.as_mut() {
                    None => acc = Some(grads),
                    Some(a) => {
                        for (x, g) in a.iter_mut().zip(&grads) {
                            x.data_mut().iter_mut().zip(g.data()).for_each(|(x, g)| *x += g);
                        }
                    }
                }
            }
            let mut grads = acc.expect("non-empty batch");
            let scale = 1.0 / batch.len() as f64;
            for g in grads.iter_mut() {
                g.data_mut().iter_mut().for_each(|x| *x *= scale);
            }
            let norm = global_norm(&grads);
            if !norm.is_finite() {
                return Err(TrainError::NonFinite {
                    epoch,
                    loss: loss_sum,
                    learning_rate: config.optimizer.learning_rate,
                    grad_norm: norm,
                });
            }
            max_norm = max_norm.max(adam.step(model.params_mut(), &mut grads));
        }
        let n = train_graphs.len() as f64;
        report.epochs.push(EpochRecord {
            epoch,
            loss: loss_sum / n,
            task_loss: task_sum / n,
            mean_cosine: cos_sum / n,
            max_grad_norm: max_norm,
            seconds: epoch_start.elapsed().as_secs_f64(),
        });

        if epoch % config.eval_every == 0 || epoch == config.epochs {
            let mut sets = vec![("train", "train", train_graphs)];
            sets.extend(evals.iter().map(|e| (e.dataset.as_str(), e.split.as_str(), e.graphs.as_slice())));
            for (dataset, split, graphs) in sets {
                let m = evaluate(&model, &config.task, graphs)?;
                push_rows(&mut report.metrics, &run_id, config, dataset, split, epoch, &m);
            }
        }
    }
    report.wall_clock_seconds = start.elapsed().as_secs_f64();
    Ok(TrainOutcome { model, report })
}

fn push_rows(
    rows: &mut Vec<MetricRow>,
    run_id: &str,
    config: &TrainConfig,
    dataset: &str,
    split: &str,
    epoch: usize,
    m: &TaskMetrics,
) {
    let all = m.metrics.iter().map(|(k, &v)| (k.as_str(), v)).chain(std::iter::once(("loss", m.loss)));
    for (metric, value) in all {
        rows.push(MetricRow {
            run_id: run_id.to_string(),
            task: config.task.name().to_string(),
            dataset: dataset.to_string(),
            split: split.to_string(),
            metric: metric.to_string(),
            value,
            seed: config.seed,
            epoch,
        });
    }
}

/// Per-graph predictions and losses; no parameter is modified.
pub fn evaluate(model: &Mnnas, task: &Task, graphs: &[Graph]) -> Result<TaskMetrics, TrainError> {
    let mut metrics: BTreeMap<String, f64> = BTreeMap::new();
    let mut loss_sum = 0.0;
    let (mut preds, mut labels) = (Vec::new(), Vec::new());
    for g in graphs {
        let ctx = model.context(g)?;
        let mut tape = Tape::new();
        let bound = model.params().bind(&mut tape);
        let (loss, _) = graph_objective(model, &mut tape, &bound, &ctx, g, task, 0.0, CosineReduction::Off)?;
        loss_sum += tape.value(loss.task).item();
        let logits = tape.value(loss.logits);
        match task {
            Task::GraphClassification { .. } => {
                preds.push(argmax(logits.row(0)));
                labels.push(g.label().ok_or(HeadError::MissingLabel)?);
            }
            Task::CommunityDetection { .. } | Task::InversePartition { .. } => {
                let hard: Vec<usize> = (0..logits.rows()).map(|r| argmax(logits.row(r))).collect();
                let clusters = logits.cols();
                let soft = crate::heads::soft_intra_edge(g, &softmax_assignment(logits))?;
                *metrics.entry("modularity".into()).or_default() += hard_modularity(g, &hard)?;
                *metrics.entry("inter_edge_ratio".into()).or_default() += inter_edge_ratio(g, &hard)?;
                *metrics.entry("soft_intra_edge".into()).or_default() += soft;
                let used = hard.iter().collect::<std::collections::BTreeSet<_>>().len();
                *metrics.entry("clusters_used".into()).or_default() += used.min(clusters) as f64;
            }
        }
    }
    let n = graphs.len().max(1) as f64;
    for v in metrics.values_mut() {
        *v /= n;
    }
    if let Task::GraphClassification { .. } = task {
        metrics.insert("accuracy".into(), accuracy(&preds, &labels));
    }
    Ok(TaskMetrics { task: task.name().to_string(), metrics, loss: loss_sum / n })
}

fn softmax_assignment(logits: &Tensor) -> SoftAssignment {
    let mut t = Tape::new();
    let v = t.constant(logits.clone());
    let p = t.softmax(v);
    SoftAssignment::new(t.value(p).clone()).expect("softmax rows")
}

/// Evaluates a checkpoint with its recorded task.
pub fn evaluate_checkpoint(ckpt: &Checkpoint, graphs: &[Graph]) -> Result<TaskMetrics, TrainError> {
    let model = Mnnas::from_checkpoint(ckpt)?;
    let task = ckpt.task.ok_or_else(|| TrainError::Config("checkpoint records no task".into()))?;
    let config = TrainConfig::new(task, ckpt.config.clone(), 1);
    check_data(&config, "eval", graphs, true)?;
    evaluate(&model, &task, graphs)
}

/// Mean operation probabilities per degree quintile (group 0 holds the highest degrees).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PreferenceTable {
    pub op_names: Vec<String>,
    /// `5 x K`.
    pub rows: Vec<Vec<f64>>,
    pub node_counts: Vec<usize>,
}

impl PreferenceTable {
    pub const GROUPS: usize = 5;

    pub fn top_ops(&self) -> Vec<usize> {
        self.rows.iter().map(|r| argmax(r)).collect()
    }

    pub fn write_csv(&self, w: impl Write) -> Result<(), TrainError> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["degree_group".to_string()];
        header.extend(self.op_names.iter().cloned());
        out.write_record(&header)?;
        for (g, row) in self.rows.iter().enumerate() {
            let mut rec = vec![g.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// For each degree quintile, the mean over its nodes, layers and search
/// dimensions of the operation probabilities.
pub fn explain(model: &Mnnas, graphs: &[Graph]) -> Result<PreferenceTable, TrainError> {
    let k = model.config().num_ops();
    let mut sums = vec![vec![0.0; k]; PreferenceTable::GROUPS];
    let mut counts = vec![0usize; PreferenceTable::GROUPS];
    for g in graphs {
        let ctx = model.context(g)?;
        let groups = degree_quintile_groups(g)?;
        let mut tape = Tape::new();
        let bound = model.params().bind(&mut tape);
        let out = model.forward(&mut tape, &bound, &ctx)?;
        let arch = out.architecture(&tape, g.num_nodes(), k);
        let per = (arch.layers.len() * arch.dims) as f64;
        for (node, &grp) in groups.iter().enumerate() {
            counts[grp] += 1;
            for layer in 0..arch.layers.len() {
                for z in 0..arch.dims {
                    for (s, &p) in sums[grp].iter_mut().zip(arch.row(layer, node, z)) {
                        *s += p / per;
                    }
                }
            }
        }
    }
    let rows = sums
        .into_iter()
        .zip(&counts)
        .map(|(row, &c)| row.into_iter().map(|s| if c > 0 { s / c as f64 } else { 1.0 / k as f64 }).collect())
        .collect();
    Ok(PreferenceTable { op_names: model.op_names(), rows, node_counts: counts })
}

/// Mean pairwise cosine similarity among each node's mapped embeddings,
/// averaged over layers, nodes and ordered operation pairs of every graph.
pub fn mean_pairwise_cosine(model: &Mnnas, graphs: &[Graph]) -> Result<f64, TrainError> {
    let k = model.config().num_ops() as f64;
    if k < 2.0 || graphs.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for g in graphs {
        let ctx = model.context(g)?;
        let mut tape = Tape::new();
        let bound = model.params().bind(&mut tape);
        let out = model.forward(&mut tape, &bound, &ctx)?;
        let pairs = out.mapped.len() as f64 * g.num_nodes() as f64 * k * (k - 1.0);
        total += tape.value(out.cosine).item() / pairs;
    }
    Ok(total / graphs.len() as f64)
}
