//! Seeded synthetic graph generators and JSON-lines dataset files.
//!
//! Every generator draws from one ChaCha8 stream derived from the spec seed,
//! so an identical spec yields an identical edge list. Node features are the
//! 12-column degree encoding, optionally followed by `random_features`
//! uniform `[-1, 1)` columns drawn from a separate stream.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Graph, GraphError};
use crate::seeding;

/// Stream for appended random feature columns.
pub const FEATURES: &str = "features";

const RR_MAX_ATTEMPTS: usize = 1000;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid {family} parameters: {constraint}")]
    Invalid { family: &'static str, constraint: String },
    #[error("{family}: generation failed after {attempts} attempts")]
    Exhausted { family: &'static str, attempts: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

fn invalid(family: &'static str, constraint: impl Into<String>) -> SynthError {
    SynthError::Invalid { family, constraint: constraint.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Graph family and its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Family {
    /// Preferential attachment, `m` edges per new node.
    Ba { n: usize, m: usize },
    /// `G(n, p)`.
    Er { n: usize, p: f64 },
    /// Uniform `d`-regular graph.
    Rr { n: usize, d: usize },
    /// Ring lattice with `k` nearest neighbors plus random shortcuts.
    Nw { n: usize, k: usize, p: f64 },
    /// Stochastic block model; node labels record the block.
    Sbm { sizes: Vec<usize>, p_in: f64, p_out: f64 },
    /// Base shape bridged to a labeled motif.
    SpuriousMotif { bias: f64, split: Split },
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Ba { .. } => "ba",
            Family::Er { .. } => "er",
            Family::Rr { .. } => "rr",
            Family::Nw { .. } => "nw",
            Family::Sbm { .. } => "sbm",
            Family::SpuriousMotif { .. } => "spurious_motif",
        }
    }
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub family: Family,
    pub seed: u64,
    /// Number of graphs.
    #[serde(default = "one")]
    pub count: usize,
    #[serde(default)]
    pub random_features: usize,
}

impl GeneratorSpec {
    pub fn new(family: Family, seed: u64) -> Self {
        Self { family, seed, count: 1, random_features: 0 }
    }

    pub fn with_count(mut self, count: usize) -> Self {
        self.count = count;
        self
    }

    pub fn with_random_features(mut self, columns: usize) -> Self {
        self.random_features = columns;
        self
    }

    pub fn feature_dim(&self) -> usize {
        crate::graph::DEGREE_ONEHOT_CAP + 2 + self.random_features
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        validate_family(&self.family)?;
        if self.count == 0 {
            return Err(invalid(self.family.name(), "count must be at least 1"));
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<Vec<Graph>, SynthError> {
        self.validate()?;
        let mut rng = seeding::stream(self.seed, seeding::DATAGEN);
        let mut feat_rng = seeding::stream(self.seed, FEATURES);
        let mut out = Vec::with_capacity(self.count);
        for _ in 0..self.count {
            let g = generate_one(&self.family, &mut rng)?;
            let g = if self.random_features > 0 {
                let extra: Vec<Vec<f64>> = (0..g.num_nodes())
                    .map(|_| (0..self.random_features).map(|_| feat_rng.gen_range(-1.0..1.0)).collect())
                    .collect();
                g.with_extra_features(&extra)?
            } else {
                g
            };
            out.push(g);
        }
        Ok(out)
    }

    /// Generates exactly one graph; `count` is ignored.
    pub fn generate_graph(&self) -> Result<Graph, SynthError> {
        let mut one = self.clone();
        one.count = 1;
        Ok(one.generate()?.remove(0))
    }
}

fn check_prob(family: &'static str, name: &str, p: f64) -> Result<(), SynthError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(invalid(family, format!("{name} must lie in [0, 1], got {p}")));
    }
    Ok(())
}

fn validate_family(f: &Family) -> Result<(), SynthError> {
    let name = f.name();
    match *f {
        Family::Ba { n, m } => {
            if m < 1 || m >= n {
                return Err(invalid(name, format!("requires 1 <= m < n, got n={n}, m={m}")));
            }
        }
        Family::Er { n, p } => {
            if n < 2 {
                return Err(invalid(name, "requires n >= 2"));
            }
            check_prob(name, "p", p)?;
        }
        Family::Rr { n, d } => {
            if d >= n {
                return Err(invalid(name, format!("requires d < n, got n={n}, d={d}")));
            }
            if (n * d) % 2 != 0 {
                return Err(invalid(name, format!("n*d must be even, got n={n}, d={d}")));
            }
        }
        Family::Nw { n, k, p } => {
            if k < 2 || k % 2 != 0 || k >= n {
                return Err(invalid(name, format!("requires even k with 2 <= k < n, got n={n}, k={k}")));
            }
            check_prob(name, "p", p)?;
        }
        Family::Sbm { ref sizes, p_in, p_out } => {
            if sizes.is_empty() || sizes.iter().any(|&s| s == 0) || sizes.iter().sum::<usize>() < 2 {
                return Err(invalid(name, "requires non-empty blocks and at least 2 nodes"));
            }
            check_prob(name, "p_in", p_in)?;
            check_prob(name, "p_out", p_out)?;
        }
        Family::SpuriousMotif { bias, .. } => {
            if !(1.0 / 3.0..=1.0).contains(&bias) {
                return Err(invalid(name, format!("bias must lie in [1/3, 1], got {bias}")));
            }
        }
    }
    Ok(())
}

fn generate_one(f: &Family, rng: &mut ChaCha8Rng) -> Result<Graph, SynthError> {
    let g = match *f {
        Family::Ba { n, m } => Graph::with_degree_features(n, barabasi_albert(n, m, rng))?,
        Family::Er { n, p } => Graph::with_degree_features(n, erdos_renyi(n, p, rng))?,
        Family::Rr { n, d } => Graph::with_degree_features(n, random_regular(n, d, rng)?)?,
        Family::Nw { n, k, p } => Graph::with_degree_features(n, newman_watts(n, k, p, rng))?,
        Family::Sbm { ref sizes, p_in, p_out } => {
            let (edges, blocks) = stochastic_block(sizes, p_in, p_out, rng);
            Graph::with_degree_features(blocks.len(), edges)?.with_node_labels(Some(blocks))?
        }
        Family::SpuriousMotif { bias, split } => spurious_motif(bias, split, rng)?,
    };
    Ok(g)
}

/// Preferential attachment seeded by a star on `m + 1` nodes; `m (n - m)` edges.
pub fn barabasi_albert(n: usize, m: usize, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let mut edges: Vec<(usize, usize)> = (1..=m).map(|v| (0, v)).collect();
    let mut repeated: Vec<usize> = Vec::with_capacity(2 * m * n);
    repeated.extend(std::iter::repeat(0).take(m));
    repeated.extend(1..=m);
    for source in m + 1..n {
        let mut targets = BTreeSet::new();
        while targets.len() < m {
            targets.insert(repeated[rng.gen_range(0..repeated.len())]);
        }
        for &t in &targets {
            edges.push((t, source));
        }
        repeated.extend(targets);
        repeated.extend(std::iter::repeat(source).take(m));
    }
    edges
}

/// `G(n, p)` by geometric skipping over the lower-triangle pair sequence.
pub fn erdos_renyi(n: usize, p: f64, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    if p <= 0.0 {
        return edges;
    }
    if p >= 1.0 {
        for v in 1..n {
            for w in 0..v {
                edges.push((w, v));
            }
        }
        return edges;
    }
    let lp = (1.0 - p).ln();
    let (mut v, mut w): (usize, i64) = (1, -1);
    while v < n {
        let lr = (1.0 - rng.gen::<f64>()).ln();
        w += 1 + (lr / lp).floor() as i64;
        while w >= v as i64 && v < n {
            w -= v as i64;
            v += 1;
        }
        if v < n {
            edges.push((w as usize, v));
        }
    }
    edges
}

/// Uniform random `d`-regular graph by stub pairing with restarts.
pub fn random_regular(n: usize, d: usize, rng: &mut impl Rng) -> Result<Vec<(usize, usize)>, SynthError> {
    if d == 0 {
        return Ok(Vec::new());
    }
    for _ in 0..RR_MAX_ATTEMPTS {
        if let Some(edges) = try_regular(n, d, rng) {
            return Ok(edges.into_iter().collect());
        }
    }
    Err(SynthError::Exhausted { family: "rr", attempts: RR_MAX_ATTEMPTS })
}

fn try_regular(n: usize, d: usize, rng: &mut impl Rng) -> Option<BTreeSet<(usize, usize)>> {
    let mut edges = BTreeSet::new();
    let mut stubs: Vec<usize> = (0..n).flat_map(|v| std::iter::repeat(v).take(d)).collect();
    while !stubs.is_empty() {
        let mut potential: BTreeMap<usize, usize> = BTreeMap::new();
        stubs.shuffle(rng);
        for pair in stubs.chunks_exact(2) {
            let (a, b) = (pair[0].min(pair[1]), pair[0].max(pair[1]));
            if a != b && !edges.contains(&(a, b)) {
                edges.insert((a, b));
            } else {
                *potential.entry(a).or_default() += 1;
                *potential.entry(b).or_default() += 1;
            }
        }
        if !suitable(&edges, &potential) {
            return None;
        }
        stubs = potential.iter().flat_map(|(&v, &c)| std::iter::repeat(v).take(c)).collect();
    }
    Some(edges)
}

fn suitable(edges: &BTreeSet<(usize, usize)>, potential: &BTreeMap<usize, usize>) -> bool {
    if potential.is_empty() {
        return true;
    }
    let nodes: Vec<usize> = potential.keys().copied().collect();
    nodes
        .iter()
        .enumerate()
        .any(|(i, &a)| nodes[..i].iter().any(|&b| !edges.contains(&(b.min(a), b.max(a)))))
}

/// Ring lattice (each node joined to `k/2` neighbors per side) plus, for each
/// ring edge `(u, v)`, a shortcut from `u` with probability `p`.
pub fn newman_watts(n: usize, k: usize, p: f64, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let mut set = BTreeSet::new();
    let mut ring = Vec::with_capacity(n * k / 2);
    for j in 1..=k / 2 {
        for u in 0..n {
            let v = (u + j) % n;
            ring.push((u, v));
            set.insert((u.min(v), u.max(v)));
        }
    }
    let mut degree = vec![k; n];
    for &(u, _) in &ring {
        if rng.gen::<f64>() < p {
            if degree[u] >= n - 1 {
                continue;
            }
            let mut w = rng.gen_range(0..n);
            while w == u || set.contains(&(u.min(w), u.max(w))) {
                w = rng.gen_range(0..n);
            }
            set.insert((u.min(w), u.max(w)));
            degree[u] += 1;
            degree[w] += 1;
        }
    }
    set.into_iter().collect()
}

/// Returns the edge list and each node's block.
pub fn stochastic_block(
    sizes: &[usize],
    p_in: f64,
    p_out: f64,
    rng: &mut impl Rng,
) -> (Vec<(usize, usize)>, Vec<usize>) {
    let blocks: Vec<usize> = sizes.iter().enumerate().flat_map(|(b, &s)| std::iter::repeat(b).take(s)).collect();
    let n = blocks.len();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if blocks[u] == blocks[v] { p_in } else { p_out };
            if rng.gen::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    (edges, blocks)
}

pub const MOTIF_NAMES: [&str; 3] = ["cycle", "house", "crane"];
pub const BASE_NAMES: [&str; 3] = ["tree", "ladder", "wheel"];

/// Motif edges on local nodes `0..size`.
pub fn motif(kind: usize) -> (usize, Vec<(usize, usize)>) {
    let cycle = vec![(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)];
    match kind {
        0 => (5, cycle),
        1 => (5, [cycle, vec![(1, 4)]].concat()),
        _ => (6, [cycle, vec![(1, 4), (0, 5)]].concat()),
    }
}

/// Base edges on local nodes `0..size`; ladders round `size` down to even.
pub fn base(kind: usize, size: usize) -> (usize, Vec<(usize, usize)>) {
    match kind {
        0 => (size, (1..size).map(|i| ((i - 1) / 2, i)).collect()),
        1 => {
            let rungs = size / 2;
            let mut e = Vec::new();
            for i in 0..rungs {
                e.push((i, i + rungs));
                if i + 1 < rungs {
                    e.push((i, i + 1));
                    e.push((i + rungs, i + 1 + rungs));
                }
            }
            (2 * rungs, e)
        }
        _ => {
            let rim = size - 1;
            let mut e: Vec<(usize, usize)> = (1..=rim).map(|i| (0, i)).collect();
            e.extend((1..=rim).map(|i| (i, i % rim + 1)));
            (size, e)
        }
    }
}

/// One spurious-motif graph; returns it with `label = motif` and node labels
/// marking motif nodes with 1.
fn spurious_motif(bias: f64, split: Split, rng: &mut impl Rng) -> Result<Graph, SynthError> {
    let label = rng.gen_range(0..3);
    let base_kind = match split {
        Split::Train => {
            if rng.gen::<f64>() < bias {
                label
            } else {
                (label + rng.gen_range(1..3)) % 3
            }
        }
        Split::Test => rng.gen_range(0..3),
    };
    let (nb, mut edges) = base(base_kind, rng.gen_range(10..=20));
    let (nm, motif_edges) = motif(label);
    edges.extend(motif_edges.into_iter().map(|(u, v)| (u + nb, v + nb)));
    edges.push((rng.gen_range(0..nb), nb + rng.gen_range(0..nm)));
    let n = nb + nm;
    let marks = (0..n).map(|i| usize::from(i >= nb)).collect();
    Ok(Graph::with_degree_features(n, edges)?.with_label(Some(label)).with_node_labels(Some(marks))?)
}

/// Base kind of a spurious-motif graph, recovered from its structure.
pub fn spurious_base_kind(g: &Graph) -> Option<usize> {
    let marks = g.node_labels()?;
    let nb = marks.iter().filter(|&&m| m == 0).count();
    let base_edges = g.edges().iter().filter(|&&(u, v)| u < nb && v < nb).count();
    let max_deg = g.degrees()[..nb].iter().copied().max()?;
    if base_edges == nb - 1 {
        Some(0)
    } else if max_deg >= 6 {
        Some(2)
    } else {
        Some(1)
    }
}

/// Dataset directory recipe: `<name>/train.jsonl`, `<name>/test.jsonl`, `<name>/spec.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub name: String,
    pub train: GeneratorSpec,
    #[serde(default)]
    pub test: Option<GeneratorSpec>,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(invalid("dataset", format!("name `{}` must be a plain directory name", self.name)));
        }
        self.train.validate()?;
        if let Some(t) = &self.test {
            t.validate()?;
        }
        Ok(())
    }

    /// Generates and writes the dataset, returning its directory.
    pub fn write(&self, out_dir: &Path) -> Result<PathBuf, SynthError> {
        self.validate()?;
        let dir = out_dir.join(&self.name);
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        save_dataset(&dir.join("train.jsonl"), &self.train.generate()?)?;
        if let Some(t) = &self.test {
            save_dataset(&dir.join("test.jsonl"), &t.generate()?)?;
        }
        let spec_path = dir.join("spec.json");
        fs::write(&spec_path, serde_json::to_string_pretty(self)?).map_err(|e| io_err(&spec_path, e))?;
        Ok(dir)
    }
}

fn io_err(path: &Path, source: std::io::Error) -> SynthError {
    SynthError::Io { path: path.to_path_buf(), source }
}

/// Writes one JSON graph record per line.
pub fn save_dataset(path: &Path, graphs: &[Graph]) -> Result<(), SynthError> {
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    for g in graphs {
        serde_json::to_writer(&mut w, g)?;
        w.write_all(b"\n").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Reads a JSON-lines dataset. Blank lines are skipped; errors carry the 1-based line.
pub fn load_dataset(path: &Path) -> Result<Vec<Graph>, SynthError> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut graphs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let g = serde_json::from_str(&line).map_err(|e| SynthError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        graphs.push(g);
    }
    Ok(graphs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn ba_edge_count() {
        let e = barabasi_albert(300, 3, &mut rng(1));
        assert_eq!(e.len(), 3 * 297);
        let g = Graph::with_degree_features(300, e).unwrap();
        assert_eq!(g.num_edges(), 891);
        assert!(g.degrees().iter().all(|&d| d >= 3));
    }

    #[test]
    fn rr_degrees() {
        for seed in 0..5 {
            let g = GeneratorSpec::new(Family::Rr { n: 10, d: 3 }, seed).generate_graph().unwrap();
            assert!(g.degrees().iter().all(|&d| d == 3));
        }
    }

    #[test]
    fn rr_parity_error_names_constraint() {
        let err = GeneratorSpec::new(Family::Rr { n: 5, d: 3 }, 0).generate().unwrap_err();
        assert!(err.to_string().contains("n*d must be even"), "{err}");
    }

    #[test]
    fn nw_keeps_ring() {
        let g = GeneratorSpec::new(Family::Nw { n: 30, k: 4, p: 0.3 }, 3).generate_graph().unwrap();
        let adj = g.adjacency();
        for u in 0..30 {
            for j in 1..=2 {
                assert!(adj[u].contains(&((u + j) % 30)));
            }
        }
        assert!(g.num_edges() >= 60);
    }

    #[test]
    fn er_extremes() {
        assert!(erdos_renyi(10, 0.0, &mut rng(0)).is_empty());
        assert_eq!(erdos_renyi(10, 1.0, &mut rng(0)).len(), 45);
        let e = erdos_renyi(50, 0.3, &mut rng(0));
        assert!(e.iter().all(|&(u, v)| u < v && v < 50));
    }

    #[test]
    fn shapes() {
        let (n, e) = base(2, 10);
        let g = Graph::with_degree_features(n, e).unwrap();
        assert_eq!(g.degrees()[0], 9);
        assert_eq!(g.num_edges(), 18);
        let (n, e) = base(1, 11);
        assert_eq!((n, e.len()), (10, 13));
        let (n, e) = base(0, 15);
        assert_eq!((n, e.len()), (15, 14));
        assert_eq!(motif(2).0, 6);
        assert_eq!(motif(1).1.len(), 6);
    }

    #[test]
    fn motif_graphs_are_connected_and_labeled() {
        let spec = GeneratorSpec::new(Family::SpuriousMotif { bias: 0.9, split: Split::Train }, 5).with_count(50);
        for g in spec.generate().unwrap() {
            assert!(g.is_connected());
            let label = g.label().unwrap();
            assert!(label < 3);
            assert!(spurious_base_kind(&g).is_some());
        }
    }

    #[test]
    fn bias_range_checked() {
        let spec = GeneratorSpec::new(Family::SpuriousMotif { bias: 0.2, split: Split::Train }, 0);
        assert!(matches!(spec.generate(), Err(SynthError::Invalid { .. })));
    }

    #[test]
    fn random_feature_columns() {
        let g = GeneratorSpec::new(Family::Ba { n: 20, m: 2 }, 0).with_random_features(4).generate_graph().unwrap();
        assert_eq!(g.feature_dim(), 16);
        assert!((0..20).all(|i| g.feature_row(i)[12..].iter().all(|v| (-1.0..1.0).contains(v))));
    }

    #[test]
    fn dataset_roundtrip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let graphs = GeneratorSpec::new(Family::Er { n: 20, p: 0.2 }, 9).with_count(3).generate().unwrap();
        save_dataset(&path, &graphs).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), graphs);

        fs::write(&path, "").unwrap();
        assert!(load_dataset(&path).unwrap().is_empty());

        let good = serde_json::to_string(&graphs[0]).unwrap();
        fs::write(&path, format!("{good}\n{}\n", &good[..good.len() / 2])).unwrap();
        match load_dataset(&path) {
            Err(SynthError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
