use serde::{Deserialize, Serialize};

use crate::graphdata::Task;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("dimension error: {0}")]
    Dimension(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Accuracy,
    Mae,
}

impl MetricKind {
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Classification { .. } => MetricKind::Accuracy,
            Task::Regression => MetricKind::Mae,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Accuracy => "accuracy",
            MetricKind::Mae => "mae",
        }
    }

    /// Strictly better: higher accuracy, lower MAE.
    pub fn better(self, candidate: f64, incumbent: f64) -> bool {
        match self {
            MetricKind::Accuracy => candidate > incumbent,
            MetricKind::Mae => candidate < incumbent,
        }
    }

    /// Index of the best value; ties go to the lowest index.
    pub fn best_index(self, values: &[f64]) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, &v) in values.iter().enumerate() {
            if best.is_none_or(|b| self.better(v, values[b])) {
                best = Some(i);
            }
        }
        best
    }
}

pub fn metric_accuracy(preds: &[usize], labels: &[usize]) -> Result<f64, MetricError> {
    if preds.len() != labels.len() {
        return Err(MetricError::Dimension(format!("{} predictions for {} labels", preds.len(), labels.len())));
    }
    if preds.is_empty() {
        return Err(MetricError::Usage("accuracy of an empty set".into()));
    }
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

pub fn metric_mae(preds: &[f64], targets: &[f64]) -> Result<f64, MetricError> {
    if preds.len() != targets.len() {
        return Err(MetricError::Dimension(format!("{} predictions for {} targets", preds.len(), targets.len())));
    }
    if preds.is_empty() {
        return Err(MetricError::Usage("MAE of an empty set".into()));
    }
    Ok(preds.iter().zip(targets).map(|(p, t)| (p - t).abs()).sum::<f64>() / preds.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision, recall and F1 of a predicted edge mask.
///
/// With nothing predicted, precision is 1 if the ground truth is also empty
/// and 0 otherwise. With an empty ground truth, recall is 1. F1 is 0 when
/// `P + R = 0`.
pub fn mask_prf(pred: &[bool], gt: &[bool]) -> Result<Prf, MetricError> {
    if pred.len() != gt.len() {
        return Err(MetricError::Dimension(format!("mask of {} edges vs ground truth of {}", pred.len(), gt.len())));
    }
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&p, &g) in pred.iter().zip(gt) {
        match (p, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    let precision = if tp + fp == 0 {
        if tp + fneg == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fneg == 0 { 1.0 } else { tp as f64 / (tp + fneg) as f64 };
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    Ok(Prf { precision, recall, f1 })
}

/// Per-graph mask scores and their (macro) means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskSummary {
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub mean_f1: f64,
    pub per_graph: Vec<Prf>,
}

impl MaskSummary {
    pub fn from_per_graph(per_graph: Vec<Prf>) -> Self {
        let n = per_graph.len().max(1) as f64;
        let mean = |f: fn(&Prf) -> f64| per_graph.iter().map(f).sum::<f64>() / n;
        Self {
            mean_precision: mean(|p| p.precision),
            mean_recall: mean(|p| p.recall),
            mean_f1: mean(|p| p.f1),
            per_graph,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_cases() {
        assert_eq!(metric_accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert!((metric_accuracy(&[0, 1, 1], &[0, 1, 0]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(matches!(metric_accuracy(&[], &[]), Err(MetricError::Usage(_))));
    }

    #[test]
    fn mae_cases() {
        assert_eq!(metric_mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(metric_mae(&[1.0, 3.0], &[2.0, 1.0]).unwrap(), 1.5);
        assert!(metric_mae(&[], &[]).is_err());
    }

    #[test]
    fn prf_cases() {
        let t = [true, true, false];
        assert_eq!(mask_prf(&t, &t).unwrap(), Prf { precision: 1.0, recall: 1.0, f1: 1.0 });
        assert_eq!(mask_prf(&[false; 3], &t).unwrap(), Prf { precision: 0.0, recall: 0.0, f1: 0.0 });
        let p = mask_prf(&[true, true, false], &[false, true, true]).unwrap();
        assert_eq!((p.precision, p.recall, p.f1), (0.5, 0.5, 0.5));
        assert!(mask_prf(&[true], &[true, false]).is_err());
    }

    #[test]
    fn best_index_ties_go_low() {
        assert_eq!(MetricKind::Accuracy.best_index(&[0.6, 0.9]), Some(1));
        assert_eq!(MetricKind::Accuracy.best_index(&[0.9, 0.9]), Some(0));
        assert_eq!(MetricKind::Mae.best_index(&[0.3, 0.1, 0.1]), Some(1));
        assert_eq!(MetricKind::Mae.best_index(&[]), None);
    }
}
