//! Standard dataset layout and per-slide feature files.

mod features;
mod layout;

pub use features::{read_features, write_features, FeatureBag, FeatureError, COORDS, FEATURES};
pub use layout::{
    features_path, load_dataset, read_splits, read_task_configs, scan_slides, write_splits, write_task_configs, Dataset,
    DatasetError, Label, LabelRow, LabelTable, SlideEntry, Subset, TaskConfig, TaskConfigFile, TaskKind, LABELS_FILE,
    SPLITS_FILE, TASK_CONFIGS_FILE, TASK_SETTINGS,
};
