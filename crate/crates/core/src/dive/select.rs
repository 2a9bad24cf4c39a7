use serde::{Deserialize, Serialize};

use crate::diffmath::Tape;
use crate::exec::Execution;
use crate::graphdata::{Dataset, Task};
use crate::harness::metrics::{mask_prf, metric_accuracy, metric_mae, MaskSummary, MetricKind};

use super::model::{forward_one, Collection};
use super::{DiveError, Mode};

/// Eval-mode output of one member on one graph.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphPrediction {
    /// Logits, or the single regression output.
    pub output: Vec<f64>,
    /// Thresholded edge mask, aligned with the graph's edges.
    pub mask: Vec<bool>,
}

impl GraphPrediction {
    /// Argmax class; ties go to the lowest class.
    pub fn class(&self) -> usize {
        let mut best = 0;
        for (k, &v) in self.output.iter().enumerate() {
            if v > self.output[best] {
                best = k;
            }
        }
        best
    }
}

/// Eval-mode predictions indexed `[member][position in indices]`.
pub fn predict(
    coll: &Collection,
    ds: &Dataset,
    indices: &[usize],
    exec: Execution,
) -> Result<Vec<Vec<GraphPrediction>>, DiveError> {
    let per_graph = exec.try_map(indices.len(), |pos| -> Result<Vec<GraphPrediction>, DiveError> {
        let g = &ds.graphs[indices[pos]];
        let mut tape = Tape::new();
        let bound = coll.params.bind(&mut tape, false);
        coll.predictors
            .iter()
            .map(|pred| {
                let (logits, mask) = forward_one(&mut tape, &bound, pred, g, coll.tau, None, Mode::Eval)?;
                Ok(GraphPrediction {
                    output: tape.value(logits).data().to_vec(),
                    mask: tape.value(mask.m).data().iter().map(|&x| x > 0.5).collect(),
                })
            })
            .collect()
    })?;
    let mut by_member: Vec<Vec<GraphPrediction>> = vec![Vec::with_capacity(indices.len()); coll.size()];
    for preds in per_graph {
        for (k, p) in preds.into_iter().enumerate() {
            by_member[k].push(p);
        }
    }
    Ok(by_member)
}

/// Task metric of one member's predictions.
pub fn task_metric(task: Task, preds: &[GraphPrediction], ds: &Dataset, indices: &[usize]) -> Result<f64, DiveError> {
    let r = match task {
        Task::Classification { .. } => {
            let p: Vec<usize> = preds.iter().map(GraphPrediction::class).collect();
            let y: Vec<usize> = indices.iter().map(|&i| ds.graphs[i].label.class().unwrap_or(usize::MAX)).collect();
            metric_accuracy(&p, &y)
        }
        Task::Regression => {
            let p: Vec<f64> = preds.iter().map(|g| g.output[0]).collect();
            let y: Vec<f64> = indices.iter().map(|&i| ds.graphs[i].label.as_f64()).collect();
            metric_mae(&p, &y)
        }
    };
    r.map_err(|e| DiveError::Usage(e.to_string()))
}

/// Per-graph mask scores against ground truth, or `None` if any graph lacks it.
pub fn mask_metrics(preds: &[GraphPrediction], ds: &Dataset, indices: &[usize]) -> Option<MaskSummary> {
    let mut per_graph = Vec::with_capacity(indices.len());
    for (p, &i) in preds.iter().zip(indices) {
        let gt = ds.graphs[i].gt_mask()?;
        per_graph.push(mask_prf(&p.mask, gt).ok()?);
    }
    Some(MaskSummary::from_per_graph(per_graph))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub split: String,
    pub metric: MetricKind,
    /// Validation metric of each member.
    pub metrics: Vec<f64>,
    pub chosen: usize,
}

/// Evaluates every member on `split` and picks the best (lowest index on ties).
pub fn select_best(coll: &Collection, ds: &Dataset, split: &str, exec: Execution) -> Result<SelectionReport, DiveError> {
    let indices = ds.split(split)?;
    if indices.is_empty() {
        return Err(DiveError::Usage(format!("validation split '{split}' is empty")));
    }
    let preds = predict(coll, ds, indices, exec)?;
    let metric = MetricKind::for_task(coll.task);
    let metrics = preds.iter().map(|p| task_metric(coll.task, p, ds, indices)).collect::<Result<Vec<_>, _>>()?;
    let chosen = metric.best_index(&metrics).expect("collection is nonempty");
    Ok(SelectionReport { split: split.to_string(), metric, metrics, chosen })
}
