use std::sync::Arc;

use nodenas::context::GraphContext;
use nodenas::graph::Graph;
use nodenas::heads::{classify_graph, cluster_logits, inverse_partition_loss, soft_modularity_loss};
use nodenas::model::{
    adaptive_attention, cosine_regularizer, fuse, link_pattern_encode, mapping_encoder, single_dim_attention,
    stack_mapped, ModelConfig, Mnnas, SearchMode,
};
use nodenas::ops::{OpKind, OperationSet};
use nodenas::params::{Bound, ParamStore};
use nodenas::tensor::{gradcheck, Axis, Tape, Tensor, TensorError, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOL: f64 = 1e-4;
pub const COMPOSITE_TOL: f64 = 1e-3;

/// One finite-difference comparison.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub error: f64,
    pub tolerance: f64,
}

impl Check {
    fn new(name: impl Into<String>, error: f64, tolerance: f64) -> Self {
        Self { name: name.into(), error, tolerance }
    }

    pub fn passed(&self) -> bool {
        self.error < self.tolerance
    }
}

/// Every group of the suite.
pub fn all() -> Vec<Check> {
    [primitives, candidate_operations, attention_fusion_and_regularizer, task_losses, full_model_composite].into_iter().flat_map(|f| f()).collect()
}

fn rand_t(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::new(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Values kept away from zero so relu kinks stay outside the probe step.
fn rand_offset(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::new(
        r,
        c,
        (0..r * c)
            .map(|_| {
                let v: f64 = rng.gen_range(0.1..1.0);
                if rng.gen_bool(0.5) {
                    v
                } else {
                    -v
                }
            })
            .collect(),
    )
    .unwrap()
}

fn weighted_sum(tape: &mut Tape, x: Var, seed: u64) -> Result<Var, TensorError> {
    let s = tape.shape(x);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.constant(rand_t(&mut rng, s.rows, s.cols));
    let y = tape.mul(x, w)?;
    Ok(tape.sum_all(y))
}

fn six_node_graph() -> Graph {
    let g = Graph::with_degree_features(6, vec![(0, 1), (1, 2), (2, 3), (3, 0), (1, 4), (4, 5), (2, 5)]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let extra: Vec<Vec<f64>> = (0..6).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    g.with_extra_features(&extra).unwrap()
}

pub fn primitives() -> Vec<Check> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = rand_t(&mut rng, 3, 4);
    let b = rand_t(&mut rng, 4, 2);
    let c = rand_t(&mut rng, 3, 4);
    let row = rand_t(&mut rng, 1, 4);
    let pos = Tensor::new(3, 4, (0..12).map(|_| rng.gen_range(0.5..2.0)).collect()).unwrap();
    let kinked = rand_offset(&mut rng, 3, 4);

    type Case = (&'static str, Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>>, Vec<Tensor>);
    let cases: Vec<Case> = vec![
        ("matmul", Box::new(|t, v| { let y = t.matmul(v[0], v[1])?; weighted_sum(t, y, 2) }), vec![a.clone(), b.clone()]),
        ("add", Box::new(|t, v| { let y = t.add(v[0], v[1])?; weighted_sum(t, y, 3) }), vec![a.clone(), c.clone()]),
        ("add_row", Box::new(|t, v| { let y = t.add(v[0], v[1])?; weighted_sum(t, y, 3) }), vec![a.clone(), row.clone()]),
        ("sub", Box::new(|t, v| { let y = t.sub(v[0], v[1])?; weighted_sum(t, y, 4) }), vec![a.clone(), c.clone()]),
        ("mul", Box::new(|t, v| { let y = t.mul(v[0], v[1])?; weighted_sum(t, y, 5) }), vec![a.clone(), c.clone()]),
        ("mul_row", Box::new(|t, v| { let y = t.mul(v[0], v[1])?; weighted_sum(t, y, 5) }), vec![a.clone(), row.clone()]),
        ("scale", Box::new(|t, v| { let y = t.scale(v[0], -2.5); weighted_sum(t, y, 6) }), vec![a.clone()]),
        ("relu", Box::new(|t, v| { let y = t.relu(v[0]); weighted_sum(t, y, 7) }), vec![kinked.clone()]),
        ("sigmoid", Box::new(|t, v| { let y = t.sigmoid(v[0]); weighted_sum(t, y, 8) }), vec![a.clone()]),
        ("tanh", Box::new(|t, v| { let y = t.tanh(v[0]); weighted_sum(t, y, 9) }), vec![a.clone()]),
        ("exp", Box::new(|t, v| { let y = t.exp(v[0]); weighted_sum(t, y, 10) }), vec![a.clone()]),
        ("log", Box::new(|t, v| { let y = t.log(v[0]); weighted_sum(t, y, 11) }), vec![pos.clone()]),
        ("softmax", Box::new(|t, v| { let y = t.softmax(v[0]); weighted_sum(t, y, 12) }), vec![a.clone()]),
        ("log_softmax", Box::new(|t, v| { let y = t.log_softmax(v[0]); weighted_sum(t, y, 13) }), vec![a.clone()]),
        ("sum_rows", Box::new(|t, v| { let y = t.sum(v[0], Axis::Rows); weighted_sum(t, y, 14) }), vec![a.clone()]),
        ("sum_cols", Box::new(|t, v| { let y = t.sum(v[0], Axis::Cols); weighted_sum(t, y, 15) }), vec![a.clone()]),
        ("mean_rows", Box::new(|t, v| { let y = t.mean(v[0], Axis::Rows)?; weighted_sum(t, y, 16) }), vec![a.clone()]),
        ("mean_cols", Box::new(|t, v| { let y = t.mean(v[0], Axis::Cols)?; weighted_sum(t, y, 17) }), vec![a.clone()]),
        ("concat", Box::new(|t, v| { let y = t.concat(&[v[0], v[1]])?; weighted_sum(t, y, 18) }), vec![a.clone(), c.clone()]),
        ("row_gather", Box::new(|t, v| { let y = t.row_gather(v[0], Arc::from(vec![2, 0, 2, 1]))?; weighted_sum(t, y, 19) }), vec![a.clone()]),
        ("segment_sum", Box::new(|t, v| { let y = t.segment_sum(v[0], Arc::from(vec![1, 1, 0]), 3)?; weighted_sum(t, y, 20) }), vec![a.clone()]),
        ("reshape", Box::new(|t, v| { let y = t.reshape(v[0], 6, 2)?; weighted_sum(t, y, 21) }), vec![a.clone()]),
        ("normalize_rows", Box::new(|t, v| { let y = t.normalize_rows(v[0], 1e-12); weighted_sum(t, y, 22) }), vec![a.clone()]),
        ("powf", Box::new(|t, v| { let y = t.powf(v[0], -0.5); weighted_sum(t, y, 24) }), vec![pos.clone()]),
        ("scale_rows", Box::new(|t, v| { let y = t.scale_rows(v[0], Arc::from(vec![0.5, -1.0, 2.0]))?; weighted_sum(t, y, 23) }), vec![a.clone()]),
    ];
    for (name, f, inputs) in cases {
        let err = gradcheck(|t, v| f(t, v), &inputs).unwrap();
        out.push(Check::new(name, err, TOL));
    }
    out
}

fn op_bound(vars: &[Var]) -> Bound {
    Bound::from_vars(vars[1..].to_vec())
}

pub fn candidate_operations() -> Vec<Check> {
    let mut out = Vec::new();
    let g = six_node_graph();
    let ctx = GraphContext::new(&g, 1).unwrap();
    for kind in OpKind::DEFAULT_SET {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let set = OperationSet::new(&mut store, "op", &[kind], 4, 3, &mut rng);
        let mut inputs = vec![rand_t(&mut rng, 6, 4)];
        inputs.extend(store.entries().iter().map(|e| e.value.clone()));
        if kind == OpKind::Gin {
            inputs[1] = Tensor::scalar(0.3);
        }
        let err = gradcheck(
            |t, v| {
                let bound = op_bound(v);
                let out = set.apply_all(t, &bound, &ctx, v[0])?;
                weighted_sum(t, out[0], 30)
            },
            &inputs,
        )
        .unwrap();
        out.push(Check::new(kind.to_string(), err, TOL));
    }
    out
}

pub fn attention_fusion_and_regularizer() -> Vec<Check> {
    let mut out = Vec::new();
    let g = six_node_graph();
    let k = 3;
    let ctx = GraphContext::new(&g, k).unwrap();
    let n = g.num_nodes();
    let dm = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let outs: Vec<Tensor> = (0..k).map(|_| rand_t(&mut rng, n, dm)).collect();
    let link_w = rand_t(&mut rng, 4, k);
    let ws = rand_t(&mut rng, dm, dm);
    let u = rand_t(&mut rng, dm, 1);
    let h = rand_t(&mut rng, n, dm);

    let mut inputs = outs.clone();
    inputs.extend([link_w.clone(), ws.clone()]);
    let err = gradcheck(
        |t, v| {
            let mapped = stack_mapped(t, &v[..k], n, dm)?;
            let li = t.constant(ctx.link_inputs.clone());
            let lp = link_pattern_encode(t, li, v[k])?;
            let p = adaptive_attention(t, &ctx, mapped, lp, v[k + 1])?;
            weighted_sum(t, p, 40)
        },
        &inputs,
    )
    .unwrap();
    out.push(Check::new("attention", err, TOL));

    let mut inputs = outs.clone();
    inputs.extend([link_w.clone(), u.clone()]);
    let err = gradcheck(
        |t, v| {
            let mapped = stack_mapped(t, &v[..k], n, dm)?;
            let li = t.constant(ctx.link_inputs.clone());
            let lp = link_pattern_encode(t, li, v[k])?;
            let p = single_dim_attention(t, &ctx, mapped, lp, v[k + 1])?;
            weighted_sum(t, p, 41)
        },
        &inputs,
    )
    .unwrap();
    out.push(Check::new("single-dim attention", err, TOL));

    // fusion with probabilities from a softmax; values offset from the relu kink
    let fuse_outs: Vec<Tensor> = (0..k).map(|_| rand_offset(&mut rng, n, dm)).collect();
    let mut inputs = fuse_outs;
    inputs.extend([rand_t(&mut rng, n * k, k), h.clone()]);
    let err = gradcheck(
        |t, v| {
            let mapped = stack_mapped(t, &v[..k], n, dm)?;
            let p = t.softmax(v[k]);
            let y = fuse(t, &ctx, mapped, p, k, v[k + 1])?;
            weighted_sum(t, y, 42)
        },
        &inputs,
    )
    .unwrap();
    out.push(Check::new("fuse", err, TOL));

    let err = gradcheck(
        |t, v| {
            let mapped = stack_mapped(t, &v[..k], n, dm)?;
            cosine_regularizer(t, mapped, ctx.block_node.clone(), n)
        },
        &outs,
    )
    .unwrap();
    out.push(Check::new("cosine", err, TOL));

    let x = rand_offset(&mut rng, n, 5);
    let err = gradcheck(
        |t, v| {
            let y = mapping_encoder(t, v[0], v[1], v[2], v[3])?;
            weighted_sum(t, y, 43)
        },
        &[x, rand_t(&mut rng, 5, dm), rand_t(&mut rng, 5, dm), Tensor::scalar(0.1)],
    )
    .unwrap();
    out.push(Check::new("encoder", err, TOL));
    out
}

pub fn task_losses() -> Vec<Check> {
    let mut out = Vec::new();
    let g = six_node_graph();
    let ctx = GraphContext::new(&g, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let reps = rand_t(&mut rng, 6, 4);
    let head = rand_t(&mut rng, 4, 3);
    let err = gradcheck(|t, v| Ok::<_, TensorError>(classify_graph(t, v[0], v[1], 2).unwrap().1), &[reps, head])
        .unwrap();
    out.push(Check::new("cross-entropy", err, TOL));

    let reps = rand_t(&mut rng, 6, 4);
    let head = rand_t(&mut rng, 4, 3);
    let err = gradcheck(
        |t, v| {
            let z = cluster_logits(t, v[0], v[1]).unwrap();
            weighted_sum(t, z, 50)
        },
        &[reps, head],
    )
    .unwrap();
    out.push(Check::new("cluster head", err, TOL));

    let logits = rand_t(&mut rng, 6, 4);
    let err = gradcheck(
        |t, v| {
            let s = t.softmax(v[0]);
            Ok::<_, TensorError>(soft_modularity_loss(t, &ctx, s).unwrap())
        },
        &[logits.clone()],
    )
    .unwrap();
    out.push(Check::new("soft modularity", err, TOL));

    let err = gradcheck(
        |t, v| Ok::<_, TensorError>(inverse_partition_loss(t, &ctx, v[0], 1.0, 0.1).unwrap().total),
        &[logits],
    )
    .unwrap();
    out.push(Check::new("inverse partition", err, TOL));
    out
}

pub fn full_model_composite() -> Vec<Check> {
    let mut out = Vec::new();
    let g = six_node_graph();
    for mode in [SearchMode::Mnnas, SearchMode::NodenasSingleDim, SearchMode::GraphLevelNas] {
        for rms_norm in [true, false] {
            let mut config = ModelConfig::new(g.feature_dim(), 4, 3, 2);
            config.mode = mode;
            config.rms_norm = rms_norm;
            let model = Mnnas::new(config, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
            let ctx = model.context(&g).unwrap();
            let mut inputs: Vec<Tensor> = model.params().entries().iter().map(|e| e.value.clone()).collect();
            // move gin eps off zero so every path is exercised
            for (e, t) in model.params().entries().iter().zip(inputs.iter_mut()) {
                if e.name.ends_with("eps") {
                    *t = Tensor::scalar(0.2);
                }
            }
            let err = gradcheck(
                |t, v| {
                    let bound = Bound::from_vars(v.to_vec());
                    let out = model.forward(t, &bound, &ctx).map_err(|e| match e {
                        nodenas::model::ModelError::Tensor(e) => e,
                        other => panic!("{other}"),
                    })?;
                    let (_, ce) = classify_graph(t, out.node_reps, bound.var(model.head()), 1).unwrap();
                    let reg = t.scale(out.cosine, 0.1);
                    t.add(ce, reg)
                },
                &inputs,
            )
            .unwrap();
            out.push(Check::new(format!("composite {} rms_norm={rms_norm}", mode.name()), err, COMPOSITE_TOL));
        }
    }
    out
}

