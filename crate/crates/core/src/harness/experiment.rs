use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::diffmath::checkpoint::{checkpoint_bytes, load_into, read_checkpoint};
use crate::dive::{predict, select_best, select::mask_metrics, select::task_metric, train, Collection, DiveError, SelectionReport};
use crate::exec::Execution;
use crate::graphdata::{dataset_to_string, parse_dataset, Dataset};
use crate::motifgen::{gen_dataset_with, Manifest};

use super::metrics::{MaskSummary, MetricKind};
use super::{ExperimentConfig, HarnessError};

/// Task metric and mask scores of one member on one split.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub split: String,
    pub model: usize,
    pub metric: MetricKind,
    pub value: f64,
    /// Present when every graph of the split has a ground-truth mask.
    pub mask: Option<MaskSummary>,
}

/// Eval-mode metrics of every member on `split`, one record per member.
pub fn evaluate(coll: &Collection, ds: &Dataset, split: &str, exec: Execution) -> Result<Vec<MetricsRecord>, DiveError> {
    let idx = ds.split(split)?;
    if idx.is_empty() {
        return Err(DiveError::Usage(format!("split '{split}' is empty")));
    }
    let preds = predict(coll, ds, idx, exec)?;
    let metric = MetricKind::for_task(coll.task);
    preds
        .iter()
        .enumerate()
        .map(|(model, p)| {
            Ok(MetricsRecord {
                split: split.to_string(),
                model,
                metric,
                value: task_metric(coll.task, p, ds, idx)?,
                mask: mask_metrics(p, ds, idx),
            })
        })
        .collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// The dataset an experiment runs on, with its content hash.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub dataset: Dataset,
    pub sha256: String,
    /// File holding the dataset.
    pub path: PathBuf,
    pub generator: Option<Manifest>,
}

/// Loads `cfg.dataset`, or generates a dataset into `dir/dataset.jsonl`, and
/// writes `dir/manifest.json`.
pub fn prepare_dataset(cfg: &ExperimentConfig, dir: &Path) -> Result<PreparedData, HarnessError> {
    const STAGE: &str = "dataset";
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(STAGE, e))?;
    let (bytes, path, generator) = match &cfg.dataset {
        Some(p) => {
            let bytes = fs::read(p).map_err(|e| HarnessError::Data { stage: STAGE, msg: format!("{}: {e}", p.display()) })?;
            (bytes, p.clone(), None)
        }
        None => {
            let (ds, manifest) =
                gen_dataset_with(&cfg.gen, cfg.exec()).map_err(|e| HarnessError::Config(e.to_string()))?;
            let text = dataset_to_string(&ds);
            let path = dir.join("dataset.jsonl");
            fs::write(&path, &text).map_err(|e| HarnessError::io(STAGE, e))?;
            (text.into_bytes(), path, Some(manifest))
        }
    };
    let dataset = parse_dataset(&bytes[..]).map_err(|e| HarnessError::from_data(STAGE, e))?;
    let sha256 = sha256_hex(&bytes);
    let splits: std::collections::BTreeMap<&str, usize> =
        dataset.splits.iter().map(|(k, v)| (k.as_str(), v.len())).collect();
    let manifest = serde_json::json!({
        "path": path.display().to_string(),
        "sha256": sha256,
        "num_graphs": dataset.graphs.len(),
        "task": dataset.task,
        "splits": splits,
        "generator": generator,
    });
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(dir.join("manifest.json"), text + "\n").map_err(|e| HarnessError::io(STAGE, e))?;
    Ok(PreparedData { dataset, sha256, path, generator })
}

/// Rebuilds a collection for `cfg` on `ds` and loads a checkpoint into it.
pub fn load_collection(cfg: &ExperimentConfig, ds: &Dataset, checkpoint: &Path) -> Result<Collection, HarnessError> {
    let mut coll = new_collection(cfg, ds, 0)?;
    let f = fs::File::open(checkpoint).map_err(|e| HarnessError::io("checkpoint", e))?;
    let loaded = read_checkpoint(std::io::BufReader::new(f)).map_err(|e| HarnessError::from_checkpoint("checkpoint", e))?;
    load_into(&mut coll.params, &loaded).map_err(|e| HarnessError::from_checkpoint("checkpoint", e))?;
    Ok(coll)
}

fn new_collection(cfg: &ExperimentConfig, ds: &Dataset, trial: usize) -> Result<Collection, HarnessError> {
    let in_dim = ds
        .graphs
        .first()
        .map(|g| g.node_features().cols())
        .ok_or_else(|| HarnessError::Data { stage: "model", msg: "dataset has no graphs".into() })?;
    Collection::new(ds.task, in_dim, cfg.collection_size, cfg.lambda, cfg.tau, cfg.model, cfg.trial_seed(trial))
        .map_err(|e| HarnessError::from_dive("model", e))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub selection: SelectionReport,
    /// Every member on every evaluation split.
    pub records: Vec<MetricsRecord>,
}

impl TrialResult {
    pub fn record(&self, split: &str, model: usize) -> Option<&MetricsRecord> {
        self.records.iter().find(|r| r.split == split && r.model == model)
    }

    /// The selected member's record on `split`.
    pub fn selected(&self, split: &str) -> Option<&MetricsRecord> {
        self.record(split, self.selection.chosen)
    }
}

/// Mean and sample standard deviation of one quantity across trials.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AggregateRow {
    pub split: String,
    pub quantity: String,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub dir: PathBuf,
    pub dataset_sha256: String,
    pub trials: Vec<TrialResult>,
    pub aggregate: Vec<AggregateRow>,
    pub runtime_secs: f64,
}

impl ExperimentResult {
    pub fn aggregate_row(&self, split: &str, quantity: &str) -> Option<&AggregateRow> {
        self.aggregate.iter().find(|r| r.split == split && r.quantity == quantity)
    }
}

pub(crate) fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

const EVAL_SPLITS: [&str; 3] = ["id_val", "val", "test"];

fn write_file(path: &Path, contents: impl AsRef<[u8]>, stage: &'static str) -> Result<(), HarnessError> {
    fs::write(path, contents).map_err(|e| HarnessError::Failed { stage, msg: format!("{}: {e}", path.display()) })
}

fn run_trial(cfg: &ExperimentConfig, ds: &Dataset, trial: usize, dir: &Path) -> Result<TrialResult, HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io("trial", e))?;
    let mut coll = new_collection(cfg, ds, trial)?;
    let train_cfg = cfg.train_config(trial);
    let log_file = fs::File::create(dir.join("metrics.jsonl")).map_err(|e| HarnessError::io("train", e))?;
    let mut log = BufWriter::new(log_file);
    let mut log_err = None;
    let outcome = train(&mut coll, ds, &train_cfg, &mut |rec| {
        let line = serde_json::to_string(rec).expect("epoch record serializes");
        if let Err(e) = writeln!(log, "{line}") {
            log_err.get_or_insert(e);
        }
    })
    .map_err(|e| HarnessError::from_dive("train", e))?;
    if let Some(e) = log_err {
        return Err(HarnessError::io("train", e));
    }
    log.flush().map_err(|e| HarnessError::io("train", e))?;

    write_file(&dir.join("checkpoint.bin"), checkpoint_bytes(&coll.params), "checkpoint")?;
    let selection =
        select_best(&coll, ds, &train_cfg.val_split, cfg.exec()).map_err(|e| HarnessError::from_dive("select", e))?;
    write_file(
        &dir.join("selection.json"),
        serde_json::to_string_pretty(&selection).expect("selection serializes") + "\n",
        "select",
    )?;

    let mut records = Vec::new();
    for split in EVAL_SPLITS {
        if ds.splits.get(split).is_some_and(|s| !s.is_empty()) {
            records.extend(evaluate(&coll, ds, split, cfg.exec()).map_err(|e| HarnessError::from_dive("evaluate", e))?);
        }
    }
    let mut csv = String::from("split,model,graph,precision,recall,f1\n");
    for r in &records {
        if let Some(mask) = &r.mask {
            for (prf, g) in mask.per_graph.iter().zip(ds.split(&r.split).expect("evaluated split")) {
                let _ = writeln!(csv, "{},{},{},{},{},{}", r.split, r.model, g, prf.precision, prf.recall, prf.f1);
            }
        }
    }
    write_file(&dir.join("mask_metrics.csv"), csv, "evaluate")?;
    let result = TrialResult {
        trial,
        seed: cfg.trial_seed(trial),
        best_epoch: outcome.best_epoch,
        epochs_run: outcome.log.len(),
        selection,
        records,
    };
    write_file(
        &dir.join("final.json"),
        serde_json::to_string_pretty(&result).expect("trial result serializes") + "\n",
        "evaluate",
    )?;
    Ok(result)
}

fn summary_csv(trials: &[TrialResult]) -> String {
    let mut out = String::from("trial,seed,model,selected,split,metric,value,mask_precision,mask_recall,mask_f1\n");
    for t in trials {
        for r in &t.records {
            let (p, rc, f) = match &r.mask {
                Some(m) => (m.mean_precision.to_string(), m.mean_recall.to_string(), m.mean_f1.to_string()),
                None => Default::default(),
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                t.trial,
                t.seed,
                r.model,
                r.model == t.selection.chosen,
                r.split,
                r.metric.name(),
                r.value,
                p,
                rc,
                f
            );
        }
    }
    out
}

/// Mean and standard deviation across trials of the selected member's metric
/// and mask F1 on every evaluation split.
pub(crate) fn aggregate(trials: &[TrialResult]) -> Vec<AggregateRow> {
    let mut rows = Vec::new();
    for split in EVAL_SPLITS {
        let sel: Vec<&MetricsRecord> = trials.iter().filter_map(|t| t.selected(split)).collect();
        if sel.is_empty() {
            continue;
        }
        let values: Vec<f64> = sel.iter().map(|r| r.value).collect();
        let (mean, std) = mean_std(&values);
        rows.push(AggregateRow { split: split.into(), quantity: sel[0].metric.name().into(), mean, std, n: values.len() });
        let f1: Vec<f64> = sel.iter().filter_map(|r| r.mask.as_ref().map(|m| m.mean_f1)).collect();
        if f1.len() == sel.len() {
            let (mean, std) = mean_std(&f1);
            rows.push(AggregateRow { split: split.into(), quantity: "mask_f1".into(), mean, std, n: f1.len() });
        }
    }
    rows
}

fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::from("split,quantity,mean,std,n\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.split, r.quantity, r.mean, r.std, r.n);
    }
    out
}

/// Prepares the data, trains `cfg.repeat` trials (seeds `seed`, `seed + 1`, …)
/// and writes every artifact under `cfg.output`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult, HarnessError> {
    cfg.validate()?;
    let start = Instant::now();
    let dir = cfg.output.clone();
    fs::create_dir_all(&dir).map_err(|e| HarnessError::io("output", e))?;
    write_file(&dir.join("config.txt"), cfg.to_text(), "output")?;
    let data = prepare_dataset(cfg, &dir)?;
    let ds = &data.dataset;
    if ds.split(cfg.validation.split()).map_or(true, |s| s.is_empty()) {
        return Err(HarnessError::Data {
            stage: "dataset",
            msg: format!("validation split '{}' is missing or empty", cfg.validation.split()),
        });
    }
    let trials = cfg.exec().try_map(cfg.repeat, |t| run_trial(cfg, ds, t, &dir.join(format!("trial_{t}"))))?;
    let aggregate = aggregate(&trials);
    write_file(&dir.join("summary.csv"), summary_csv(&trials), "summary")?;
    write_file(&dir.join("aggregate.csv"), aggregate_csv(&aggregate), "summary")?;
    Ok(ExperimentResult {
        dir,
        dataset_sha256: data.sha256,
        trials,
        aggregate,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    Lambda,
    CollectionSize,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Lambda => "lambda",
            SweepAxis::CollectionSize => "collection_size",
        }
    }
}

impl FromStr for SweepAxis {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lambda" => Ok(SweepAxis::Lambda),
            "collection_size" => Ok(SweepAxis::CollectionSize),
            _ => Err(HarnessError::Config(format!("unknown sweep axis '{s}' (lambda or collection_size)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: String,
    pub metric: String,
    /// Selected member's test metric across trials.
    pub mean: f64,
    pub std: f64,
    pub mask_f1_mean: Option<f64>,
    pub mask_f1_std: Option<f64>,
    pub dataset_sha256: String,
    pub runtime_secs: f64,
}

/// One experiment per axis value, all on the same dataset, plus `sweep.csv`.
pub fn run_sweep(base: &ExperimentConfig, axis: SweepAxis, values: &[String]) -> Result<Vec<SweepRow>, HarnessError> {
    if values.is_empty() {
        return Err(HarnessError::Config("sweep needs at least one value".into()));
    }
    let mut points = Vec::with_capacity(values.len());
    for v in values {
        let mut cfg = base.clone();
        cfg.set(axis.name(), v)?;
        cfg.output = base.output.join(format!("{}_{}", axis.name(), v.trim()));
        cfg.validate()?;
        points.push((v.trim().to_string(), cfg));
    }
    base.validate()?;
    let data = prepare_dataset(base, &base.output)?;
    let mut rows = Vec::with_capacity(points.len());
    for (value, mut cfg) in points {
        cfg.dataset = Some(data.path.clone());
        let res = run_experiment(&cfg)?;
        let test = res.aggregate_row("test", MetricKind::for_task(data.dataset.task).name());
        let f1 = res.aggregate_row("test", "mask_f1");
        rows.push(SweepRow {
            axis: axis.name().into(),
            value,
            metric: MetricKind::for_task(data.dataset.task).name().into(),
            mean: test.map_or(f64::NAN, |r| r.mean),
            std: test.map_or(f64::NAN, |r| r.std),
            mask_f1_mean: f1.map(|r| r.mean),
            mask_f1_std: f1.map(|r| r.std),
            dataset_sha256: res.dataset_sha256,
            runtime_secs: res.runtime_secs,
        });
    }
    let mut csv = String::from("axis,value,metric,mean,std,mask_f1_mean,mask_f1_std,dataset_sha256,runtime_secs\n");
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{}",
            r.axis,
            r.value,
            r.metric,
            r.mean,
            r.std,
            opt(r.mask_f1_mean),
            opt(r.mask_f1_std),
            r.dataset_sha256,
            r.runtime_secs
        );
    }
    write_file(&base.output.join("sweep.csv"), csv, "sweep")?;
    Ok(rows)
}
