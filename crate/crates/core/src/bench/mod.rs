//! Splits, training, metrics and benchmark tables.

mod metrics;
mod report;
mod splits;
mod train;

use thiserror::Error;

use crate::dataset_store::{DatasetError, FeatureError};
use crate::mil_core::MilError;

pub use metrics::{accuracy, argmax, correlation, pearson, ranks, spearman, Correlation, Metric, MetricValue};
pub use report::{format_value, read_metrics, report_csv, report_grid, report_markdown, write_metrics};
pub use splits::{make_splits, patient_counts, subset_sizes, SplitAssignment, SplitOptions, SplitRatios};
pub use train::{
    evaluate, fit, load_bags, predict, resolve_tasks, selection_score, task_metrics, train_model, EpochLog, LabeledBag,
    MetricsReport, TrainConfig, TrainOutcome,
};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("need at least 3 patients to split, found {0}")]
    TooFewPatients(usize),
    #[error("no splits.csv; run the split stage first")]
    NoSplits,
    #[error("no labeled training slides for task {0:?}")]
    NoLabeledSlides(String),
    #[error("slide {0:?} has no feature file")]
    MissingFeatures(String),
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("{0}")]
    TaskMismatch(String),
    #[error("slide {slide_id:?} was embedded with {found:?}, expected {expected:?}")]
    EmbedderMismatch { slide_id: String, found: String, expected: String },
    #[error("slide {slide_id:?} has D={found}, expected {expected}")]
    DimMismatch { slide_id: String, found: usize, expected: usize },
    #[error("training diverged at epoch {0} (non-finite parameters)")]
    Diverged(usize),
    #[error("{slide_id}: {source}")]
    Features { slide_id: String, source: FeatureError },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Mil(#[from] MilError),
    #[error("json: {0}")]
    Json(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
