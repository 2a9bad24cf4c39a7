//! Collections of mask-extracting predictors trained with a Jaccard
//! diversity penalty on their edge masks.

mod loss;
mod mask;
mod model;
pub mod select;
mod train;

pub use loss::{graph_objective, jaccard_diversity, jaccard_pair, total_loss, GraphTerms, LossParts, UNION_GUARD};
pub use mask::{gumbel_sigmoid_mask, masked_adjacency, EdgeMaskResult};
pub use model::{forward_one, task_loss, Collection, ModelConfig, Predictor};
pub use select::{predict, select_best, GraphPrediction, SelectionReport};
pub use train::{train, EpochRecord, TrainConfig, TrainOutcome};

use crate::diffmath::DiffError;
use crate::graphdata::DataError;

/// Training-mode forward passes sample masks with Gumbel noise; eval-mode
/// passes threshold probabilities at 0.5.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, thiserror::Error)]
pub enum DiveError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("numeric abort at epoch {epoch}: {source}")]
    NumericAbort { epoch: usize, source: DiffError },
}
