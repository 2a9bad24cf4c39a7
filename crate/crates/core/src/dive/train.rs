use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffmath::{adam_step, AdamConfig, AdamState, DiffError, NumArray, Tape};
use crate::exec::{derive_seed, Execution};
use crate::graphdata::{make_batches, Dataset, Task};
use crate::harness::metrics::{MetricKind, Prf};
use crate::noise::RngNoise;

use super::loss::graph_objective;
use super::select::{mask_metrics, predict, task_metric};
use super::model::Collection;
use super::{DiveError, Mode};

const TAG_BATCHES: u64 = 1;
const TAG_NOISE: u64 = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub max_epochs: usize,
    /// Epochs without improvement of the best member's validation metric
    /// before stopping.
    pub patience: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Split used for early stopping and snapshot selection.
    pub val_split: String,
    /// Also evaluate the test split every epoch.
    pub log_test: bool,
    pub exec: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 300,
            patience: 50,
            batch_size: 32,
            adam: AdamConfig::default(),
            seed: 0,
            val_split: "val".into(),
            log_test: true,
            exec: Execution::default(),
        }
    }
}

/// One line of the per-epoch metric log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean total objective over training graphs.
    pub train_loss: f64,
    /// Mean task loss of each member.
    pub train_main: Vec<f64>,
    /// Mean diversity term (`None` for a single member).
    pub diversity: Option<f64>,
    /// Task metric of each member under the sampled training masks.
    pub train_metric: Vec<f64>,
    pub val_metric: Vec<f64>,
    /// Mean mask precision/recall/F1 per member on the validation split.
    pub val_mask: Option<Vec<Prf>>,
    pub test_metric: Option<Vec<f64>>,
    pub test_mask: Option<Vec<Prf>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub log: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val: f64,
}

struct GraphStep {
    grads: Vec<NumArray>,
    total: f64,
    main: Vec<f64>,
    diversity: Option<f64>,
    outputs: Vec<Vec<f64>>,
}

fn abort(epoch: usize) -> impl Fn(DiveError) -> DiveError {
    move |e| match e {
        DiveError::Diff(d @ DiffError::NonFinite { .. }) => DiveError::NumericAbort { epoch, source: d },
        other => other,
    }
}

fn split_eval(
    coll: &Collection,
    ds: &Dataset,
    split: &str,
    exec: Execution,
) -> Result<(Vec<f64>, Option<Vec<Prf>>), DiveError> {
    let idx = ds.split(split)?;
    if idx.is_empty() {
        return Err(DiveError::Usage(format!("split '{split}' is empty")));
    }
    let preds = predict(coll, ds, idx, exec)?;
    let metrics = preds.iter().map(|p| task_metric(coll.task, p, ds, idx)).collect::<Result<Vec<_>, _>>()?;
    let masks = preds
        .iter()
        .map(|p| mask_metrics(p, ds, idx).map(|s| Prf { precision: s.mean_precision, recall: s.mean_recall, f1: s.mean_f1 }))
        .collect::<Option<Vec<_>>>();
    Ok((metrics, masks))
}

/// Joint training of every member with one Adam optimizer over all
/// parameters. Gradients are computed per graph (one tape each, possibly in
/// parallel) and summed in batch order, so results do not depend on the
/// execution mode. The parameters of the epoch with the best validation
/// metric (best member) are restored at the end.
pub fn train(
    coll: &mut Collection,
    ds: &Dataset,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome, DiveError> {
    let train_idx = ds.split("train")?.to_vec();
    if train_idx.is_empty() {
        return Err(DiveError::Usage("training split is empty".into()));
    }
    if cfg.batch_size == 0 || cfg.max_epochs == 0 {
        return Err(DiveError::Parameter("batch size and max epochs must be positive".into()));
    }
    if coll.task != ds.task {
        return Err(DiveError::Parameter(format!("collection task {:?} vs dataset task {:?}", coll.task, ds.task)));
    }
    let metric = MetricKind::for_task(coll.task);
    let mut adam = AdamState::new(cfg.adam, coll.params.values());
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, Vec<NumArray>)> = None;
    let mut stale = 0usize;

    for epoch in 0..cfg.max_epochs {
        let batches = make_batches(&train_idx, cfg.batch_size, derive_seed(cfg.seed, &[TAG_BATCHES, epoch as u64]))?;
        let m = coll.size();
        let mut sum_total = 0.0;
        let mut sum_main = vec![0.0; m];
        let mut sum_div = 0.0;
        let mut score = vec![0.0; m];
        for (bi, batch) in batches.iter().enumerate() {
            let b = batch.0.len();
            let frozen: &Collection = coll;
            let steps = cfg
                .exec
                .try_map(b, |k| -> Result<GraphStep, DiveError> {
                    let g = &ds.graphs[batch.0[k]];
                    let seed = derive_seed(cfg.seed, &[TAG_NOISE, epoch as u64, bi as u64, k as u64]);
                    let mut noise = RngNoise(ChaCha8Rng::seed_from_u64(seed));
                    let mut tape = Tape::new();
                    let bound = frozen.params.bind(&mut tape, true);
                    let terms = graph_objective(&mut tape, &bound, frozen, g, Some(&mut noise), Mode::Train)?;
                    let scaled = tape.mul_scalar(terms.total, 1.0 / b as f64)?;
                    tape.backward(scaled)?;
                    Ok(GraphStep {
                        grads: bound.grads(&tape),
                        total: tape.scalar(terms.total),
                        main: terms.main.iter().map(|&v| tape.scalar(v)).collect(),
                        diversity: terms.diversity.map(|v| tape.scalar(v)),
                        outputs: terms.logits.iter().map(|&v| tape.value(v).data().to_vec()).collect(),
                    })
                })
                .map_err(abort(epoch))?;
            let mut grads = coll.params.zeros_like();
            for (k, step) in steps.iter().enumerate() {
                for (acc, g) in grads.iter_mut().zip(&step.grads) {
                    acc.add_assign(g);
                }
                sum_total += step.total;
                for (acc, v) in sum_main.iter_mut().zip(&step.main) {
                    *acc += v;
                }
                sum_div += step.diversity.unwrap_or(0.0);
                let label = ds.graphs[batch.0[k]].label;
                for (i, out) in step.outputs.iter().enumerate() {
                    score[i] += match coll.task {
                        Task::Classification { .. } => {
                            let pred = crate::dive::select::GraphPrediction { output: out.clone(), mask: Vec::new() };
                            f64::from(Some(pred.class()) == label.class())
                        }
                        Task::Regression => (out[0] - label.as_f64()).abs(),
                    };
                }
            }
            if grads.iter().any(|g| !g.all_finite()) {
                return Err(DiveError::NumericAbort {
                    epoch,
                    source: DiffError::NonFinite { op: "gradient", node: 0 },
                });
            }
            adam_step(coll.params.values_mut(), &mut grads, &mut adam)?;
        }
        let n = train_idx.len() as f64;
        let (val_metric, val_mask) = split_eval(coll, ds, &cfg.val_split, cfg.exec)?;
        let (test_metric, test_mask) = if cfg.log_test && ds.splits.get("test").is_some_and(|t| !t.is_empty()) {
            let (t, tm) = split_eval(coll, ds, "test", cfg.exec)?;
            (Some(t), tm)
        } else {
            (None, None)
        };
        let record = EpochRecord {
            epoch,
            train_loss: sum_total / n,
            train_main: sum_main.iter().map(|s| s / n).collect(),
            diversity: (m >= 2).then(|| sum_div / n),
            train_metric: score.iter().map(|s| s / n).collect(),
            val_metric,
            val_mask,
            test_metric,
            test_mask,
        };
        on_epoch(&record);
        let best_member = record.val_metric[metric.best_index(&record.val_metric).expect("nonempty")];
        log.push(record);
        match &best {
            Some((v, _, _)) if !metric.better(best_member, *v) => {
                stale += 1;
                if stale >= cfg.patience {
                    break;
                }
            }
            _ => {
                best = Some((best_member, epoch, coll.params.values().to_vec()));
                stale = 0;
            }
        }
    }
    let (best_val, best_epoch, snapshot) = best.expect("at least one epoch ran");
    for (dst, src) in coll.params.values_mut().iter_mut().zip(snapshot) {
        *dst = src;
    }
    Ok(TrainOutcome { log, best_epoch, best_val })
}
