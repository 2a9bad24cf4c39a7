//! Synthetic base-plus-motif graph classification datasets.
//!
//! Each graph is a base graph (wheel, tree or ladder) joined to a motif
//! (house, cycle or crane) by one bridge edge. The label is the motif alone;
//! the base kind is tied to the label with a configurable probability, which
//! gives a spurious shortcut in training that a shifted test split removes.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffmath::NumArray;
use crate::exec::{derive_seed, Execution};
use crate::graphdata::{Dataset, Graph, Label, Task};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("generator parameter error: {0}")]
pub struct GenError(pub String);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotifKind {
    House,
    Cycle,
    Crane,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseKind {
    Wheel,
    Tree,
    Ladder,
}

impl MotifKind {
    pub const ALL: [MotifKind; 3] = [MotifKind::House, MotifKind::Cycle, MotifKind::Crane];

    /// Class index used as the graph label.
    pub fn label(self) -> usize {
        self as usize
    }

    pub fn from_label(label: usize) -> Option<Self> {
        Self::ALL.get(label).copied()
    }

    /// The base kind this motif is spuriously paired with.
    pub fn paired_base(self) -> BaseKind {
        match self {
            MotifKind::House => BaseKind::Wheel,
            MotifKind::Cycle => BaseKind::Tree,
            MotifKind::Crane => BaseKind::Ladder,
        }
    }
}

impl BaseKind {
    pub const ALL: [BaseKind; 3] = [BaseKind::Wheel, BaseKind::Tree, BaseKind::Ladder];

    pub fn name(self) -> &'static str {
        match self {
            BaseKind::Wheel => "wheel",
            BaseKind::Tree => "tree",
            BaseKind::Ladder => "ladder",
        }
    }

    pub fn min_size(self) -> usize {
        match self {
            BaseKind::Wheel | BaseKind::Ladder => 4,
            BaseKind::Tree => 2,
        }
    }
}

impl fmt::Display for BaseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaseKind {
    type Err = GenError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BaseKind::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| GenError(format!("unknown base kind '{s}'")))
    }
}

/// Edges of a base graph on nodes `0..n`.
pub fn gen_base(kind: BaseKind, n: usize, rng: &mut impl Rng) -> Result<Vec<(usize, usize)>, GenError> {
    match kind {
        BaseKind::Wheel => {
            if n < 4 {
                return Err(GenError(format!("wheel needs at least 4 nodes, got {n}")));
            }
            let mut edges: Vec<(usize, usize)> = (1..n).map(|k| (0, k)).collect();
            edges.extend((1..n - 1).map(|k| (k, k + 1)));
            edges.push((1, n - 1));
            Ok(edges)
        }
        BaseKind::Tree => {
            if n < 2 {
                return Err(GenError(format!("tree needs at least 2 nodes, got {n}")));
            }
            Ok((1..n).map(|k| (rng.gen_range(0..k), k)).collect())
        }
        BaseKind::Ladder => {
            if n < 4 || !n.is_multiple_of(2) {
                return Err(GenError(format!("ladder needs an even node count of at least 4, got {n}")));
            }
            let h = n / 2;
            let mut edges = Vec::with_capacity(3 * h - 2);
            for k in 0..h - 1 {
                edges.push((k, k + 1));
                edges.push((h + k, h + k + 1));
            }
            edges.extend((0..h).map(|k| (k, h + k)));
            Ok(edges)
        }
    }
}

/// Motif node count and edges on nodes `0..count`.
pub fn gen_motif(kind: MotifKind) -> (usize, Vec<(usize, usize)>) {
    match kind {
        // square 0-1-2-3 with roof apex 4 over the 0-1 side
        MotifKind::House => (5, vec![(0, 1), (1, 2), (2, 3), (0, 3), (0, 4), (1, 4)]),
        MotifKind::Cycle => (5, vec![(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)]),
        // triangle 0-1-2 with legs on 0 and 1
        MotifKind::Crane => (5, vec![(0, 1), (1, 2), (0, 2), (0, 3), (1, 4)]),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MotifSpec {
    pub motif: MotifKind,
    pub base: BaseKind,
    pub base_size: usize,
}

/// Base on nodes `0..base_size`, motif after it, one uniform bridge edge.
/// Node features are the constant 1.
pub fn gen_graph(spec: MotifSpec, rng: &mut impl Rng) -> Result<Graph, GenError> {
    let (motif_n, motif_edges) = gen_motif(spec.motif);
    if spec.base_size < motif_n {
        return Err(GenError(format!("base size {} below motif size {motif_n}", spec.base_size)));
    }
    let nb = spec.base_size;
    let mut edges = gen_base(spec.base, nb, rng)?;
    let mut mask = vec![false; edges.len()];
    edges.extend(motif_edges.iter().map(|&(i, j)| (nb + i, nb + j)));
    mask.resize(edges.len(), true);
    let u = rng.gen_range(0..nb);
    let v = nb + rng.gen_range(0..motif_n);
    edges.push((u, v));
    mask.push(false);
    let n = nb + motif_n;
    let x = NumArray::matrix(n, 1, vec![1.0; n]).expect("feature shape");
    Graph::new(n, edges, x, None, Label::Class(spec.motif.label()), Some(mask), spec.base.name()).map_err(GenError)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShiftMode {
    Covariate,
    Concept,
}

impl FromStr for ShiftMode {
    type Err = GenError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "covariate" => Ok(ShiftMode::Covariate),
            "concept" => Ok(ShiftMode::Concept),
            _ => Err(GenError(format!("unknown shift mode '{s}'"))),
        }
    }
}

impl fmt::Display for ShiftMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShiftMode::Covariate => "covariate",
            ShiftMode::Concept => "concept",
        })
    }
}

/// Node featurization of generated graphs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeFeatures {
    /// The scalar 1 on every node.
    #[default]
    Constant,
    /// One-hot node degree, with degrees of [`DEGREE_BUCKETS`]` − 1` or more
    /// sharing the last slot.
    Degree,
}

pub const DEGREE_BUCKETS: usize = 6;

impl NodeFeatures {
    pub fn width(self) -> usize {
        match self {
            NodeFeatures::Constant => 1,
            NodeFeatures::Degree => DEGREE_BUCKETS,
        }
    }
}

impl FromStr for NodeFeatures {
    type Err = GenError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "constant" => Ok(NodeFeatures::Constant),
            "degree" => Ok(NodeFeatures::Degree),
            _ => Err(GenError(format!("unknown node features '{s}'"))),
        }
    }
}

impl fmt::Display for NodeFeatures {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NodeFeatures::Constant => "constant",
            NodeFeatures::Degree => "degree",
        })
    }
}

/// Replaces the node features of `g` with one-hot degrees.
pub fn with_degree_features(g: Graph) -> Graph {
    let deg = g.degrees();
    let mut x = NumArray::zeros(&[g.num_nodes(), DEGREE_BUCKETS]);
    for (i, d) in deg.iter().enumerate() {
        x.set2(i, (*d).min(DEGREE_BUCKETS - 1), 1.0);
    }
    let mask = g.gt_mask().map(<[bool]>::to_vec);
    Graph::new(g.num_nodes(), g.edges().to_vec(), x, g.edge_features().cloned(), g.label, mask, g.env.clone())
        .expect("features of a valid graph keep it valid")
}

/// Split names produced by [`gen_dataset`], in generation order.
pub const SPLITS: [&str; 4] = ["train", "id_val", "val", "test"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub shift_mode: ShiftMode,
    pub train_count: usize,
    pub id_val_count: usize,
    pub val_count: usize,
    pub test_count: usize,
    pub bias_train: f64,
    pub bias_val: f64,
    pub bias_test: f64,
    /// Inclusive base-size range for train and id_val.
    pub size_train: (usize, usize),
    /// Inclusive base-size range for val and test.
    pub size_eval: (usize, usize),
    pub seed: u64,
    #[serde(default)]
    pub node_features: NodeFeatures,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            shift_mode: ShiftMode::Concept,
            train_count: 2000,
            id_val_count: 300,
            val_count: 300,
            test_count: 400,
            bias_train: 0.9,
            bias_val: 1.0 / 3.0,
            bias_test: 1.0 / 3.0,
            size_train: (15, 25),
            size_eval: (15, 25),
            seed: 0,
            node_features: NodeFeatures::Constant,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), GenError> {
        if self.train_count == 0 || self.val_count == 0 || self.test_count == 0 {
            return Err(GenError("train, val and test counts must be positive".into()));
        }
        for (name, b) in [("bias_train", self.bias_train), ("bias_val", self.bias_val), ("bias_test", self.bias_test)] {
            if !(0.0..=1.0).contains(&b) {
                return Err(GenError(format!("{name} = {b} outside [0,1]")));
            }
        }
        for (name, (lo, hi)) in [("size_train", self.size_train), ("size_eval", self.size_eval)] {
            if lo > hi {
                return Err(GenError(format!("{name} range {lo}..{hi} is empty")));
            }
            if lo < 5 {
                return Err(GenError(format!("{name} minimum {lo} is below the motif size 5")));
            }
        }
        Ok(())
    }

    fn count(&self, split: usize) -> usize {
        [self.train_count, self.id_val_count, self.val_count, self.test_count][split]
    }

    fn bias(&self, split: usize) -> f64 {
        [self.bias_train, self.bias_train, self.bias_val, self.bias_test][split]
    }

    fn size_range(&self, split: usize) -> (usize, usize) {
        if split < 2 {
            self.size_train
        } else {
            self.size_eval
        }
    }
}

/// Per-split statistics of a generated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub count: usize,
    /// Fraction of graphs whose base is the label's paired base.
    pub realized_bias: f64,
    pub label_marginals: Vec<f64>,
    pub base_counts: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: GenConfig,
    pub splits: BTreeMap<String, SplitStats>,
}

fn choose_base(cfg: &GenConfig, split: usize, motif: MotifKind, rng: &mut impl Rng) -> BaseKind {
    match cfg.shift_mode {
        ShiftMode::Concept => {
            let paired = motif.paired_base();
            if rng.gen_bool(cfg.bias(split)) {
                paired
            } else {
                let others: Vec<BaseKind> = BaseKind::ALL.into_iter().filter(|&b| b != paired).collect();
                others[rng.gen_range(0..others.len())]
            }
        }
        ShiftMode::Covariate => {
            if split < 2 {
                [BaseKind::Wheel, BaseKind::Tree][rng.gen_range(0..2)]
            } else {
                BaseKind::Ladder
            }
        }
    }
}

fn sample_size(base: BaseKind, (lo, hi): (usize, usize), rng: &mut impl Rng) -> usize {
    let n = rng.gen_range(lo..=hi);
    match base {
        BaseKind::Ladder if n % 2 == 1 => {
            if n > lo || n + 1 > hi {
                n - 1
            } else {
                n + 1
            }
        }
        _ => n,
    }
    .max(base.min_size())
}

/// One graph of a split; seeded from `(seed, split, index)` only.
fn graph_at(cfg: &GenConfig, split: usize, index: usize) -> Result<Graph, GenError> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[split as u64, index as u64]));
    let motif = MotifKind::ALL[index % 3];
    let base = choose_base(cfg, split, motif, &mut rng);
    let base_size = sample_size(base, cfg.size_range(split), &mut rng);
    let g = gen_graph(MotifSpec { motif, base, base_size }, &mut rng)?;
    Ok(match cfg.node_features {
        NodeFeatures::Constant => g,
        NodeFeatures::Degree => with_degree_features(g),
    })
}

/// Generates every split. Labels cycle through the three motifs, so label
/// marginals are balanced to within one graph per split.
pub fn gen_dataset(cfg: &GenConfig) -> Result<(Dataset, Manifest), GenError> {
    gen_dataset_with(cfg, Execution::default())
}

pub fn gen_dataset_with(cfg: &GenConfig, exec: Execution) -> Result<(Dataset, Manifest), GenError> {
    cfg.validate()?;
    let mut graphs = Vec::new();
    let mut splits = BTreeMap::new();
    let mut stats = BTreeMap::new();
    for (si, name) in SPLITS.iter().enumerate() {
        let count = cfg.count(si);
        if count == 0 {
            continue;
        }
        let generated = exec.try_map(count, |i| graph_at(cfg, si, i))?;
        let start = graphs.len();
        stats.insert(name.to_string(), split_stats(&generated));
        graphs.extend(generated);
        splits.insert(name.to_string(), (start..graphs.len()).collect());
    }
    let ds = Dataset { graphs, task: Task::Classification { num_classes: 3 }, splits };
    Ok((ds, Manifest { config: cfg.clone(), splits: stats }))
}

pub fn split_stats(graphs: &[Graph]) -> SplitStats {
    let mut labels = [0usize; 3];
    let mut paired = 0;
    let mut base_counts = BTreeMap::new();
    for g in graphs {
        let label = g.label.class().unwrap_or(0);
        labels[label.min(2)] += 1;
        *base_counts.entry(g.env.clone()).or_insert(0) += 1;
        if let (Some(m), Ok(b)) = (MotifKind::from_label(label), g.env.parse::<BaseKind>()) {
            if m.paired_base() == b {
                paired += 1;
            }
        }
    }
    let n = graphs.len().max(1) as f64;
    SplitStats {
        count: graphs.len(),
        realized_bias: paired as f64 / n,
        label_marginals: labels.iter().map(|&c| c as f64 / n).collect(),
        base_counts,
    }
}
