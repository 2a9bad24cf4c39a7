use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffmath::{Bound, NumArray, ParamStore, Tape, Value};
use crate::gnn::{edge_prob, readout_classify, GnnParams, MlpParams};
use crate::graphdata::{Graph, Task};
use crate::noise::NoiseSource;

use super::mask::{gumbel_sigmoid_mask, masked_adjacency, EdgeMaskResult};
use super::{DiveError, Mode};

/// Architecture shared by every member of a collection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub hidden: usize,
    pub layers: usize,
    pub mlp_hidden: usize,
    pub dropout_extractor: f64,
    pub dropout_classifier: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { hidden: 64, layers: 3, mlp_hidden: 64, dropout_extractor: 0.0, dropout_classifier: 0.0 }
    }
}

/// One member: the mask-side GNN and edge head, and the feature-side GNN and
/// prediction head. The two halves own disjoint parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictor {
    pub extractor: GnnParams,
    pub mask_head: MlpParams,
    pub classifier: GnnParams,
    pub head: MlpParams,
}

impl Predictor {
    fn new(
        store: &mut ParamStore,
        k: usize,
        in_dim: usize,
        out_dim: usize,
        cfg: &ModelConfig,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let ex = format!("model{k}/extractor");
        let cl = format!("model{k}/classifier");
        let mut extractor = GnnParams::new(store, &ex, in_dim, cfg.hidden, cfg.layers, rng);
        let mut mask_head = MlpParams::new(store, &ex, 2 * cfg.hidden, cfg.mlp_hidden, 1, rng);
        let mut classifier = GnnParams::new(store, &cl, in_dim, cfg.hidden, cfg.layers, rng);
        let mut head = MlpParams::new(store, &cl, cfg.hidden, cfg.mlp_hidden, out_dim, rng);
        extractor.dropout = cfg.dropout_extractor;
        mask_head.dropout = cfg.dropout_extractor;
        classifier.dropout = cfg.dropout_classifier;
        head.dropout = cfg.dropout_classifier;
        Self { extractor, mask_head, classifier, head }
    }
}

/// `m` jointly trained predictors plus the diversity weight and temperature.
#[derive(Clone, Debug, PartialEq)]
pub struct Collection {
    pub params: ParamStore,
    pub predictors: Vec<Predictor>,
    pub lambda: f64,
    pub tau: f64,
    pub task: Task,
    pub model: ModelConfig,
}

impl Collection {
    pub fn new(
        task: Task,
        in_dim: usize,
        size: usize,
        lambda: f64,
        tau: f64,
        model: ModelConfig,
        seed: u64,
    ) -> Result<Self, DiveError> {
        if size == 0 {
            return Err(DiveError::Parameter("collection needs at least one predictor".into()));
        }
        if !(lambda >= 0.0) {
            return Err(DiveError::Parameter(format!("lambda must be nonnegative, got {lambda}")));
        }
        if !(tau > 0.0) {
            return Err(DiveError::Parameter(format!("tau must be positive, got {tau}")));
        }
        if model.hidden == 0 || model.layers == 0 || model.mlp_hidden == 0 || in_dim == 0 {
            return Err(DiveError::Parameter("widths and layer count must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let predictors =
            (0..size).map(|k| Predictor::new(&mut params, k, in_dim, task.output_dim(), &model, &mut rng)).collect();
        Ok(Self { params, predictors, lambda, tau, task, model })
    }

    pub fn size(&self) -> usize {
        self.predictors.len()
    }
}

/// Extractor on the original adjacency, mask sampling, then the classifier
/// on the masked adjacency. Returns logits `[1×C]` (or `[1×1]`).
pub fn forward_one(
    tape: &mut Tape,
    bound: &Bound,
    pred: &Predictor,
    g: &Graph,
    tau: f64,
    mut noise: Option<&mut dyn NoiseSource>,
    mode: Mode,
) -> Result<(Value, EdgeMaskResult), DiveError> {
    let x = tape.constant(g.node_features().clone());
    let a = tape.constant(crate::graphdata::adjacency(g));
    let z = crate::gnn::gcn_forward(tape, bound, &pred.extractor, a, x, train_only(&mut noise, mode))?;
    let ef = g.edge_features().map(|e| tape.constant(e.clone()));
    let p = edge_prob(tape, bound, &pred.mask_head, z, g.edges(), ef, train_only(&mut noise, mode))?;
    let m = gumbel_sigmoid_mask(tape, p, tau, crate::noise::reborrow(&mut noise), mode)?;
    let a_p = masked_adjacency(tape, g, m)?;
    let logits = readout_classify(tape, bound, &pred.classifier, &pred.head, a_p, x, train_only(&mut noise, mode))?;
    Ok((logits, EdgeMaskResult { p, m, a_p }))
}

fn train_only<'a>(noise: &'a mut Option<&mut dyn NoiseSource>, mode: Mode) -> Option<&'a mut dyn NoiseSource> {
    match mode {
        Mode::Train => crate::noise::reborrow(noise),
        Mode::Eval => None,
    }
}

/// Task loss for one graph's logits.
pub fn task_loss(tape: &mut Tape, logits: Value, g: &Graph, task: Task) -> Result<Value, DiveError> {
    match task {
        Task::Classification { .. } => {
            let y = g.label.class().ok_or_else(|| DiveError::Usage("real label in classification task".into()))?;
            Ok(tape.cross_entropy(logits, &[y])?)
        }
        Task::Regression => {
            let flat = tape.reshape(logits, &[1])?;
            Ok(tape.mse(flat, &NumArray::vector(vec![g.label.as_f64()]))?)
        }
    }
}
