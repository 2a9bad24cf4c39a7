//! Graph and dataset containers, the line-delimited dataset format, and
//! seeded batching.
//!
//! A dataset file is JSON lines. Line 1 is a header carrying the task and the
//! named splits; every following line is one graph:
//!
//! ```text
//! {"format":"dive-dataset","version":1,"task":{"kind":"classification","num_classes":3},"splits":{"test":[..],"train":[..],"val":[..]}}
//! {"num_nodes":10,"edges":[[0,1],[0,2]],"node_features":[[1.0],..],"label":1,"gt_mask":[false,true],"env":"wheel"}
//! ```
//!
//! `edge_features` and `gt_mask` are optional. Floats are written in shortest
//! round-trip form, so saving a loaded file reproduces it byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffmath::NumArray;

pub const FORMAT_NAME: &str = "dive-dataset";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid graph {graph}: {msg}")]
    InvalidGraph { graph: usize, msg: String },
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Label {
    Class(usize),
    Real(f64),
}

impl Label {
    pub fn class(self) -> Option<usize> {
        match self {
            Label::Class(c) => Some(c),
            Label::Real(_) => None,
        }
    }

    pub fn as_f64(self) -> f64 {
        match self {
            Label::Class(c) => c as f64,
            Label::Real(x) => x,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Task {
    Classification { num_classes: usize },
    Regression,
}

impl Task {
    /// Width of the prediction head.
    pub fn output_dim(self) -> usize {
        match self {
            Task::Classification { num_classes } => num_classes,
            Task::Regression => 1,
        }
    }
}

/// One undirected attributed graph with edges in canonical `(i<j)` sorted form.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    node_features: NumArray,
    edge_features: Option<NumArray>,
    pub label: Label,
    gt_mask: Option<Vec<bool>>,
    pub env: String,
}

impl Graph {
    /// Canonicalizes edges (swapping to `i<j` and sorting, carrying edge
    /// features and mask entries along) and checks every invariant.
    pub fn new(
        num_nodes: usize,
        edges: Vec<(usize, usize)>,
        node_features: NumArray,
        edge_features: Option<NumArray>,
        label: Label,
        gt_mask: Option<Vec<bool>>,
        env: impl Into<String>,
    ) -> Result<Self, String> {
        if num_nodes == 0 {
            return Err("graph has no nodes".into());
        }
        if node_features.rank() != 2 || node_features.rows() != num_nodes {
            return Err(format!("node_features shape {:?} for {num_nodes} nodes", node_features.shape()));
        }
        if let Some(m) = &gt_mask {
            if m.len() != edges.len() {
                return Err(format!("gt_mask has {} entries for {} edges", m.len(), edges.len()));
            }
        }
        if let Some(ef) = &edge_features {
            if ef.rank() != 2 || ef.rows() != edges.len() {
                return Err(format!("edge_features shape {:?} for {} edges", ef.shape(), edges.len()));
            }
        }
        let mut order: Vec<usize> = (0..edges.len()).collect();
        let canon: Vec<(usize, usize)> = edges.iter().map(|&(i, j)| (i.min(j), i.max(j))).collect();
        for &(i, j) in &canon {
            if i == j {
                return Err(format!("self loop on node {i}"));
            }
            if j >= num_nodes {
                return Err(format!("edge ({i},{j}) out of range for {num_nodes} nodes"));
            }
        }
        order.sort_by_key(|&k| canon[k]);
        if order.windows(2).any(|w| canon[w[0]] == canon[w[1]]) {
            return Err("duplicate edge".into());
        }
        let edges = order.iter().map(|&k| canon[k]).collect();
        let gt_mask = gt_mask.map(|m| order.iter().map(|&k| m[k]).collect());
        let edge_features = edge_features.map(|ef| {
            let c = ef.cols();
            let data = order.iter().flat_map(|&k| ef.data()[k * c..(k + 1) * c].to_vec()).collect();
            NumArray::matrix(order.len(), c, data).expect("edge feature shape")
        });
        Ok(Self { num_nodes, edges, node_features, edge_features, label, gt_mask, env: env.into() })
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

    pub fn node_features(&self) -> &NumArray {
        &self.node_features
    }

    pub fn edge_features(&self) -> Option<&NumArray> {
        self.edge_features.as_ref()
    }

    pub fn gt_mask(&self) -> Option<&[bool]> {
        self.gt_mask.as_deref()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_nodes];
        for &(i, j) in &self.edges {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }
}

/// Symmetric 0/1 adjacency with zero diagonal.
pub fn adjacency(g: &Graph) -> NumArray {
    let n = g.num_nodes();
    let mut a = NumArray::zeros(&[n, n]);
    for &(i, j) in g.edges() {
        a.set2(i, j, 1.0);
        a.set2(j, i, 1.0);
    }
    a
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub graphs: Vec<Graph>,
    pub task: Task,
    pub splits: BTreeMap<String, Vec<usize>>,
}

impl Dataset {
    pub fn split(&self, name: &str) -> Result<&[usize], DataError> {
        self.splits
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| DataError::Invalid(format!("dataset has no split named '{name}'")))
    }

    pub fn validate(&self) -> Result<(), DataError> {
        for (gi, g) in self.graphs.iter().enumerate() {
            let bad = |msg: String| DataError::InvalidGraph { graph: gi, msg };
            match (self.task, g.label) {
                (Task::Classification { num_classes }, Label::Class(c)) if c >= num_classes => {
                    return Err(bad(format!("label {c} not below {num_classes}")));
                }
                (Task::Classification { .. }, Label::Real(x)) => {
                    return Err(bad(format!("real label {x} in a classification dataset")));
                }
                (Task::Regression, Label::Class(c)) => {
                    return Err(bad(format!("class label {c} in a regression dataset")));
                }
                _ => {}
            }
            // Graph::new enforces the structural invariants; re-check in case
            // the value was assembled some other way.
            Graph::new(
                g.num_nodes,
                g.edges.clone(),
                g.node_features.clone(),
                g.edge_features.clone(),
                g.label,
                g.gt_mask.clone(),
                g.env.clone(),
            )
            .map_err(bad)?;
        }
        if let Some(first) = self.graphs.first() {
            let width = first.node_features.cols();
            let ef = first.edge_features.as_ref().map(NumArray::cols);
            for (gi, g) in self.graphs.iter().enumerate() {
                if g.node_features.cols() != width {
                    return Err(DataError::InvalidGraph {
                        graph: gi,
                        msg: format!("node feature width {} differs from {width}", g.node_features.cols()),
                    });
                }
                if g.edge_features.as_ref().map(NumArray::cols) != ef {
                    return Err(DataError::InvalidGraph { graph: gi, msg: "edge feature layout differs from graph 0".into() });
                }
            }
        }
        let mut seen = vec![None::<&str>; self.graphs.len()];
        for (name, idx) in &self.splits {
            for &i in idx {
                let slot = seen
                    .get_mut(i)
                    .ok_or_else(|| DataError::Invalid(format!("split '{name}' index {i} out of range")))?;
                if let Some(other) = slot {
                    return Err(DataError::Invalid(format!("graph {i} in both '{other}' and '{name}'")));
                }
                *slot = Some(name);
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    task: Task,
    splits: BTreeMap<String, Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct GraphRecord {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    node_features: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    edge_features: Option<Vec<Vec<f64>>>,
    label: serde_json::Number,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gt_mask: Option<Vec<bool>>,
    env: String,
}

fn rows_of(a: &NumArray) -> Vec<Vec<f64>> {
    let c = a.cols();
    if c == 0 {
        return vec![Vec::new(); a.rows()];
    }
    a.data().chunks(c).map(<[f64]>::to_vec).collect()
}

fn matrix_of(rows: &[Vec<f64>], what: &str) -> Result<NumArray, String> {
    NumArray::from_rows(rows).map_err(|_| format!("{what} rows have unequal widths"))
}

/// Serializes to the line-delimited format.
pub fn dataset_to_string(ds: &Dataset) -> String {
    let header = Header {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        task: ds.task,
        splits: ds.splits.clone(),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for g in &ds.graphs {
        let label = match g.label {
            Label::Class(c) => serde_json::Number::from(c as u64),
            Label::Real(x) => serde_json::Number::from_f64(x).expect("finite regression label"),
        };
        let rec = GraphRecord {
            num_nodes: g.num_nodes,
            edges: g.edges.clone(),
            node_features: rows_of(&g.node_features),
            edge_features: g.edge_features.as_ref().map(rows_of),
            label,
            gt_mask: g.gt_mask.clone(),
            env: g.env.clone(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    let mut f = fs::File::create(path)?;
    f.write_all(dataset_to_string(ds).as_bytes())?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    let f = fs::File::open(path)?;
    parse_dataset(BufReader::new(f))
}

/// Parses the line-delimited format and validates the result.
pub fn parse_dataset(reader: impl BufRead) -> Result<Dataset, DataError> {
    let mut lines = reader.lines().enumerate();
    let (_, first) = lines.next().ok_or(DataError::Parse { line: 1, msg: "empty file".into() })?;
    let header: Header =
        serde_json::from_str(&first?).map_err(|e| DataError::Parse { line: 1, msg: e.to_string() })?;
    if header.format != FORMAT_NAME || header.version != FORMAT_VERSION {
        return Err(DataError::Parse {
            line: 1,
            msg: format!("unsupported format {} v{}", header.format, header.version),
        });
    }
    let mut graphs = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: GraphRecord =
            serde_json::from_str(&line).map_err(|e| DataError::Parse { line: lineno, msg: e.to_string() })?;
        let gi = graphs.len();
        let invalid = |msg: String| DataError::InvalidGraph { graph: gi, msg };
        let label = match header.task {
            Task::Classification { .. } => Label::Class(
                rec.label
                    .as_u64()
                    .ok_or_else(|| DataError::Parse { line: lineno, msg: format!("label {} is not a class index", rec.label) })?
                    as usize,
            ),
            Task::Regression => Label::Real(rec.label.as_f64().expect("json numbers are finite")),
        };
        let node_features = if rec.node_features.is_empty() {
            NumArray::zeros(&[0, 0])
        } else {
            matrix_of(&rec.node_features, "node_features").map_err(invalid)?
        };
        let edge_features = match &rec.edge_features {
            Some(rows) if rows.is_empty() => Some(NumArray::zeros(&[0, 0])),
            Some(rows) => Some(matrix_of(rows, "edge_features").map_err(invalid)?),
            None => None,
        };
        let g = Graph::new(rec.num_nodes, rec.edges, node_features, edge_features, label, rec.gt_mask, rec.env)
            .map_err(invalid)?;
        graphs.push(g);
    }
    let ds = Dataset { graphs, task: header.task, splits: header.splits };
    ds.validate()?;
    Ok(ds)
}

/// An ordered group of graph indices processed together.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch(pub Vec<usize>);

/// Seeded permutation of `split` cut into consecutive chunks of `batch_size`.
pub fn make_batches(split: &[usize], batch_size: usize, seed: u64) -> Result<Vec<Batch>, DataError> {
    if batch_size == 0 {
        return Err(DataError::Invalid("batch size must be at least 1".into()));
    }
    let mut order = split.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(order.chunks(batch_size).map(|c| Batch(c.to_vec())).collect())
}
