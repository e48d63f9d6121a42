//! Task heads and training procedures: classification, retrieval against
//! external image embeddings, and diffusion-based generation.

mod classify;
mod diffusion;
mod generate;
mod metrics;
mod retrieval;
mod train;

pub use classify::{argmax as argmax_row, Classifier, HEAD_HIDDEN};
pub use diffusion::{ddpm_sample, sinusoidal_embed, DiffusionSchedule};
pub use generate::{fit_layout, layout_padded, GenLayout, Generator};
pub use metrics::{MetricRecord, MetricsLog};
pub use retrieval::{
    hard_negatives, ranked_metrics, read_embeddings, read_pairs, retrieval_eval, write_embeddings, write_pairs, EmbeddingTable, RetrievalMetrics,
    RetrievalModel, TRIPLET_MARGIN,
};
pub use train::{fit, FitReport, TrainConfig};

use thiserror::Error;

use crate::io::FormatError;
use crate::preprocess::PreprocessError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum TaskError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("diffusion step {t} outside 1..={n}")]
    StepOutOfRange { t: usize, n: usize },
    #[error("embedding dimension {got} does not match {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("empty gallery")]
    EmptyGallery,
    #[error("refusing to sample from an untrained generator")]
    Untrained,
    #[error("invalid: {0}")]
    Invalid(String),
}
