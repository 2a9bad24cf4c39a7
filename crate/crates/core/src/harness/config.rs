use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::diffmath::AdamConfig;
use crate::dive::{ModelConfig, TrainConfig};
use crate::exec::Execution;
use crate::motifgen::{GenConfig, NodeFeatures, ShiftMode};

use super::HarnessError;

/// Which split drives early stopping and member selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ValidationMode {
    /// The shifted validation split (`val`).
    Ood,
    /// The in-distribution validation split (`id_val`).
    Id,
}

impl ValidationMode {
    pub fn split(self) -> &'static str {
        match self {
            ValidationMode::Ood => "val",
            ValidationMode::Id => "id_val",
        }
    }
}

impl FromStr for ValidationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ood" => Ok(ValidationMode::Ood),
            "id" => Ok(ValidationMode::Id),
            _ => Err(format!("expected 'ood' or 'id', got '{s}'")),
        }
    }
}

impl fmt::Display for ValidationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ValidationMode::Ood => "ood",
            ValidationMode::Id => "id",
        })
    }
}

/// Everything needed to reproduce one experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    /// Existing dataset file; when absent the dataset is generated from `gen`.
    pub dataset: Option<PathBuf>,
    pub gen: GenConfig,
    pub collection_size: usize,
    pub lambda: f64,
    pub tau: f64,
    pub model: ModelConfig,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Base seed; trial `t` uses `seed + t`.
    pub seed: Option<u64>,
    pub repeat: usize,
    pub validation: ValidationMode,
    pub output: PathBuf,
    pub parallel: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            gen: GenConfig::default(),
            collection_size: 2,
            lambda: 0.5,
            tau: 1.0,
            model: ModelConfig::default(),
            lr: 1e-3,
            weight_decay: 0.0,
            batch_size: 32,
            max_epochs: 300,
            patience: 50,
            seed: None,
            repeat: 1,
            validation: ValidationMode::Ood,
            output: PathBuf::from("runs/experiment"),
            parallel: true,
        }
    }
}

/// Every recognised key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("dataset", "path of a dataset file (omit to generate one)"),
    ("shift_mode", "generated data: concept or covariate"),
    ("train_count", "generated data: training graphs"),
    ("id_val_count", "generated data: in-distribution validation graphs"),
    ("val_count", "generated data: shifted validation graphs"),
    ("test_count", "generated data: test graphs"),
    ("bias_train", "generated data: P(base paired with label) in train and id_val"),
    ("bias_val", "generated data: the same for val"),
    ("bias_test", "generated data: the same for test"),
    ("size_train", "generated data: base size range for train/id_val, as min-max"),
    ("size_eval", "generated data: base size range for val/test, as min-max"),
    ("data_seed", "generated data: seed"),
    ("node_features", "generated data: constant or degree (one-hot)"),
    ("collection_size", "number of jointly trained predictors (1-32)"),
    ("lambda", "diversity weight (>= 0)"),
    ("tau", "Gumbel-Sigmoid temperature (> 0)"),
    ("hidden", "GNN hidden width (1-4096)"),
    ("layers", "GNN layers per encoder (1-16)"),
    ("mlp_hidden", "hidden width of the MLP heads (1-4096)"),
    ("dropout", "dropout rate on both encoders, in [0, 1)"),
    ("lr", "Adam learning rate (> 0)"),
    ("weight_decay", "Adam weight decay (>= 0)"),
    ("batch_size", "graphs per optimizer step (>= 1)"),
    ("max_epochs", "maximum training epochs (>= 1)"),
    ("patience", "early-stopping patience in epochs (>= 1)"),
    ("seed", "base seed (required)"),
    ("repeat", "number of trials (1-100)"),
    ("validation", "selection split: ood or id"),
    ("output", "output directory"),
    ("parallel", "use the thread pool: true or false"),
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, HarnessError>
where
    T::Err: fmt::Display,
{
    value.trim().parse::<T>().map_err(|e| HarnessError::Config(format!("{key}: cannot parse '{value}': {e}")))
}

fn parse_range(key: &str, value: &str) -> Result<(usize, usize), HarnessError> {
    let (a, b) = value
        .split_once('-')
        .ok_or_else(|| HarnessError::Config(format!("{key}: expected min-max, got '{value}'")))?;
    Ok((parse(key, a)?, parse(key, b)?))
}

impl ExperimentConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        let v = value.trim();
        match key {
            "dataset" => self.dataset = if v.is_empty() { None } else { Some(PathBuf::from(v)) },
            "shift_mode" => self.gen.shift_mode = parse::<ShiftMode>(key, v)?,
            "train_count" => self.gen.train_count = parse(key, v)?,
            "id_val_count" => self.gen.id_val_count = parse(key, v)?,
            "val_count" => self.gen.val_count = parse(key, v)?,
            "test_count" => self.gen.test_count = parse(key, v)?,
            "bias_train" => self.gen.bias_train = parse(key, v)?,
            "bias_val" => self.gen.bias_val = parse(key, v)?,
            "bias_test" => self.gen.bias_test = parse(key, v)?,
            "size_train" => self.gen.size_train = parse_range(key, v)?,
            "size_eval" => self.gen.size_eval = parse_range(key, v)?,
            "data_seed" => self.gen.seed = parse(key, v)?,
            "node_features" => self.gen.node_features = parse::<NodeFeatures>(key, v)?,
            "collection_size" => self.collection_size = parse(key, v)?,
            "lambda" => self.lambda = parse(key, v)?,
            "tau" => self.tau = parse(key, v)?,
            "hidden" => self.model.hidden = parse(key, v)?,
            "layers" => self.model.layers = parse(key, v)?,
            "mlp_hidden" => self.model.mlp_hidden = parse(key, v)?,
            "dropout" => {
                let d: f64 = parse(key, v)?;
                self.model.dropout_extractor = d;
                self.model.dropout_classifier = d;
            }
            "lr" => self.lr = parse(key, v)?,
            "weight_decay" => self.weight_decay = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "max_epochs" => self.max_epochs = parse(key, v)?,
            "patience" => self.patience = parse(key, v)?,
            "seed" => self.seed = Some(parse(key, v)?),
            "repeat" => self.repeat = parse(key, v)?,
            "validation" => self.validation = parse(key, v)?,
            "output" => self.output = PathBuf::from(v),
            "parallel" => self.parallel = parse(key, v)?,
            _ => return Err(HarnessError::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines. Blank lines and `#` comments are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<(), HarnessError> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    /// Applies `DIVE_<KEY>` variables from `vars` (typically `std::env::vars()`).
    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<(), HarnessError> {
        for (name, value) in vars {
            if let Some(rest) = name.strip_prefix("DIVE_") {
                let key = rest.to_ascii_lowercase();
                if KEYS.iter().any(|(k, _)| *k == key) {
                    self.set(&key, &value)?;
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if self.seed.is_none() {
            return bad("seed is required".into());
        }
        if self.dataset.is_none() {
            self.gen.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        if !(1..=32).contains(&self.collection_size) {
            return bad(format!("collection_size must be in 1-32, got {}", self.collection_size));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be finite and > 0, got {}", self.tau));
        }
        for (name, v) in [("hidden", self.model.hidden), ("mlp_hidden", self.model.mlp_hidden)] {
            if !(1..=4096).contains(&v) {
                return bad(format!("{name} must be in 1-4096, got {v}"));
            }
        }
        if !(1..=16).contains(&self.model.layers) {
            return bad(format!("layers must be in 1-16, got {}", self.model.layers));
        }
        if !(0.0..1.0).contains(&self.model.dropout_extractor) {
            return bad(format!("dropout must be in [0, 1), got {}", self.model.dropout_extractor));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be finite and > 0, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be finite and >= 0, got {}", self.weight_decay));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return bad("batch_size, max_epochs and patience must be >= 1".into());
        }
        if !(1..=100).contains(&self.repeat) {
            return bad(format!("repeat must be in 1-100, got {}", self.repeat));
        }
        if self.validation == ValidationMode::Id && self.dataset.is_none() && self.gen.id_val_count == 0 {
            return bad("validation = id needs id_val_count >= 1".into());
        }
        Ok(())
    }

    /// Resolved `key = value` snapshot; reading it back gives the same config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (key, _) in KEYS {
            let value = match *key {
                "dataset" => self.dataset.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
                "shift_mode" => self.gen.shift_mode.to_string(),
                "train_count" => self.gen.train_count.to_string(),
                "id_val_count" => self.gen.id_val_count.to_string(),
                "val_count" => self.gen.val_count.to_string(),
                "test_count" => self.gen.test_count.to_string(),
                "bias_train" => self.gen.bias_train.to_string(),
                "bias_val" => self.gen.bias_val.to_string(),
                "bias_test" => self.gen.bias_test.to_string(),
                "size_train" => format!("{}-{}", self.gen.size_train.0, self.gen.size_train.1),
                "size_eval" => format!("{}-{}", self.gen.size_eval.0, self.gen.size_eval.1),
                "data_seed" => self.gen.seed.to_string(),
                "node_features" => self.gen.node_features.to_string(),
                "collection_size" => self.collection_size.to_string(),
                "lambda" => self.lambda.to_string(),
                "tau" => self.tau.to_string(),
                "hidden" => self.model.hidden.to_string(),
                "layers" => self.model.layers.to_string(),
                "mlp_hidden" => self.model.mlp_hidden.to_string(),
                "dropout" => self.model.dropout_extractor.to_string(),
                "lr" => self.lr.to_string(),
                "weight_decay" => self.weight_decay.to_string(),
                "batch_size" => self.batch_size.to_string(),
                "max_epochs" => self.max_epochs.to_string(),
                "patience" => self.patience.to_string(),
                "seed" => self.seed.map(|s| s.to_string()).unwrap_or_default(),
                "repeat" => self.repeat.to_string(),
                "validation" => self.validation.to_string(),
                "output" => self.output.display().to_string(),
                "parallel" => self.parallel.to_string(),
                _ => unreachable!("every key is listed"),
            };
            if key == &"dataset" && value.is_empty() || key == &"seed" && value.is_empty() {
                continue;
            }
            out.push_str(&format!("{key} = {value}\n"));
        }
        out
    }

    pub fn exec(&self) -> Execution {
        if self.parallel {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }

    /// Training settings for trial `trial`.
    pub fn train_config(&self, trial: usize) -> TrainConfig {
        TrainConfig {
            max_epochs: self.max_epochs,
            patience: self.patience,
            batch_size: self.batch_size,
            adam: AdamConfig { lr: self.lr, weight_decay: self.weight_decay, ..AdamConfig::default() },
            seed: self.trial_seed(trial),
            val_split: self.validation.split().to_string(),
            log_test: true,
            exec: self.exec(),
        }
    }

    pub fn trial_seed(&self, trial: usize) -> u64 {
        self.seed.unwrap_or(0).wrapping_add(trial as u64)
    }
}
