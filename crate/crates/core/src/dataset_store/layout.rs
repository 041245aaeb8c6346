//! Dataset folder layout, task configurations, labels and splits.
//!
//! ```text
//! ROOT/
//!   <slide_id>/tiles/<x>_<y>.png
//!   <slide_id>/tile_manifest.jsonl
//!   <slide_id>/<slide_id>.h5
//!   <slide_id>/qc_mask.png            (optional)
//!   task-settings/task_configs.json
//!   task-settings/labels.csv          slide_id,patient_id,<task columns...>
//!   task-settings/splits.csv          slide_id,split (optional)
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tiler::{MANIFEST_FILE, TILES_DIR};

pub const TASK_SETTINGS: &str = "task-settings";
pub const TASK_CONFIGS_FILE: &str = "task_configs.json";
pub const LABELS_FILE: &str = "labels.csv";
pub const SPLITS_FILE: &str = "splits.csv";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("no task-settings folder at {0}")]
    MissingTaskSettings(PathBuf),
    #[error("malformed config: {0}")]
    MalformedConfig(String),
    #[error("duplicate slide id {0:?}")]
    DuplicateSlideId(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Classification,
    Regression,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub name: String,
    pub kind: TaskKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub classes: Vec<String>,
    pub label_column: String,
}

impl TaskConfig {
    pub fn classification(name: &str, classes: &[&str]) -> Self {
        Self {
            name: name.into(),
            kind: TaskKind::Classification,
            classes: classes.iter().map(|c| c.to_string()).collect(),
            label_column: name.into(),
        }
    }

    pub fn regression(name: &str) -> Self {
        Self { name: name.into(), kind: TaskKind::Regression, classes: vec![], label_column: name.into() }
    }

    /// Head output width: class count or 1.
    pub fn output_width(&self) -> usize {
        match self.kind {
            TaskKind::Classification => self.classes.len(),
            TaskKind::Regression => 1,
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: String| Err(DatasetError::MalformedConfig(m));
        if self.name.is_empty() || self.label_column.is_empty() {
            return bad("task name and label_column must be non-empty".into());
        }
        match self.kind {
            TaskKind::Classification => {
                if self.classes.len() < 2 {
                    return bad(format!("classification task {:?} needs at least 2 classes", self.name));
                }
                let unique: BTreeSet<&String> = self.classes.iter().collect();
                if unique.len() != self.classes.len() {
                    return bad(format!("task {:?} has duplicate class names", self.name));
                }
            }
            TaskKind::Regression => {
                if !self.classes.is_empty() {
                    return bad(format!("regression task {:?} must not list classes", self.name));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskConfigFile {
    pub tasks: Vec<TaskConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Train,
    Val,
    Test,
}

impl Subset {
    pub const ALL: [Subset; 3] = [Subset::Train, Subset::Val, Subset::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Subset::Train => "train",
            Subset::Val => "val",
            Subset::Test => "test",
        }
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Subset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Subset::Train),
            "val" => Ok(Subset::Val),
            "test" => Ok(Subset::Test),
            other => Err(format!("unknown split {other:?} (expected train, val or test)")),
        }
    }
}

/// A parsed label for one slide and task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Label {
    Class(usize),
    Value(f64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelRow {
    pub slide_id: String,
    pub patient_id: String,
    /// One cell per entry of [`LabelTable::columns`]; `None` is missing.
    pub cells: Vec<Option<String>>,
}

/// `labels.csv` contents: slide id, patient id, and task columns.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelTable {
    pub columns: Vec<String>,
    pub rows: Vec<LabelRow>,
}

impl LabelTable {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn row(&self, slide_id: &str) -> Option<&LabelRow> {
        self.rows.iter().find(|r| r.slide_id == slide_id)
    }

    pub fn patient_of(&self) -> BTreeMap<String, String> {
        self.rows.iter().map(|r| (r.slide_id.clone(), r.patient_id.clone())).collect()
    }

    pub fn read(path: &Path) -> Result<Self, DatasetError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
        let headers = rdr.headers()?.clone();
        if headers.len() < 2 || &headers[0] != "slide_id" || &headers[1] != "patient_id" {
            return Err(DatasetError::MalformedConfig(format!(
                "{}: header must start with slide_id,patient_id",
                path.display()
            )));
        }
        let columns: Vec<String> = headers.iter().skip(2).map(str::to_owned).collect();
        let mut rows = Vec::new();
        let mut seen = BTreeSet::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let slide_id = rec[0].trim().to_owned();
            let patient_id = rec[1].trim().to_owned();
            if slide_id.is_empty() || patient_id.is_empty() {
                return Err(DatasetError::MalformedConfig(format!(
                    "{} row {}: slide_id and patient_id are required",
                    path.display(),
                    i + 2
                )));
            }
            if !seen.insert(slide_id.clone()) {
                return Err(DatasetError::DuplicateSlideId(slide_id));
            }
            let cells = (0..columns.len())
                .map(|c| rec.get(c + 2).map(str::trim).filter(|s| !s.is_empty()).map(str::to_owned))
                .collect();
            rows.push(LabelRow { slide_id, patient_id, cells });
        }
        Ok(Self { columns, rows })
    }

    pub fn write(&self, path: &Path) -> Result<(), DatasetError> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["slide_id".to_string(), "patient_id".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.slide_id.clone(), r.patient_id.clone()];
            rec.extend(r.cells.iter().map(|c| c.clone().unwrap_or_default()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Parsed labels for `task`, keyed by slide id; missing cells are skipped.
    pub fn labels_for(&self, task: &TaskConfig) -> Result<BTreeMap<String, Label>, DatasetError> {
        let col = self.column_index(&task.label_column).ok_or_else(|| {
            DatasetError::MalformedConfig(format!(
                "task {:?}: label column {:?} not in labels.csv",
                task.name, task.label_column
            ))
        })?;
        let mut out = BTreeMap::new();
        for (i, row) in self.rows.iter().enumerate() {
            let Some(cell) = &row.cells[col] else { continue };
            let where_ = || format!("labels.csv row {} (slide {}), column {:?}", i + 2, row.slide_id, task.label_column);
            let label = match task.kind {
                TaskKind::Classification => {
                    let idx = task.classes.iter().position(|c| c == cell).ok_or_else(|| {
                        DatasetError::MalformedConfig(format!(
                            "{}: unknown class {cell:?} for task {:?}",
                            where_(),
                            task.name
                        ))
                    })?;
                    Label::Class(idx)
                }
                TaskKind::Regression => {
                    let v: f64 = cell.parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| {
                        DatasetError::MalformedConfig(format!("{}: {cell:?} is not a finite number", where_()))
                    })?;
                    Label::Value(v)
                }
            };
            out.insert(row.slide_id.clone(), label);
        }
        Ok(out)
    }
}

pub fn read_splits(path: &Path) -> Result<BTreeMap<String, Subset>, DatasetError> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.len() != 2 || &headers[0] != "slide_id" || &headers[1] != "split" {
        return Err(DatasetError::MalformedConfig(format!("{}: header must be slide_id,split", path.display())));
    }
    let mut out = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let subset: Subset = rec[1]
            .trim()
            .parse()
            .map_err(|e| DatasetError::MalformedConfig(format!("splits.csv row {}, column \"split\": {e}", i + 2)))?;
        let id = rec[0].trim().to_owned();
        if out.insert(id.clone(), subset).is_some() {
            return Err(DatasetError::DuplicateSlideId(id));
        }
    }
    Ok(out)
}

pub fn write_splits(path: &Path, splits: &BTreeMap<String, Subset>) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["slide_id", "split"])?;
    for (id, s) in splits {
        w.write_record([id.as_str(), s.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_task_configs(path: &Path, tasks: &[TaskConfig]) -> Result<(), DatasetError> {
    let text = serde_json::to_string_pretty(&TaskConfigFile { tasks: tasks.to_vec() })
        .map_err(|e| DatasetError::MalformedConfig(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

pub fn read_task_configs(path: &Path) -> Result<Vec<TaskConfig>, DatasetError> {
    let text = fs::read_to_string(path)?;
    let file: TaskConfigFile = serde_json::from_str(&text)
        .map_err(|e| DatasetError::MalformedConfig(format!("{}: {e}", path.display())))?;
    let mut names = BTreeSet::new();
    for t in &file.tasks {
        t.validate()?;
        if !names.insert(t.name.clone()) {
            return Err(DatasetError::MalformedConfig(format!("duplicate task name {:?}", t.name)));
        }
    }
    Ok(file.tasks)
}

/// One slide folder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlideEntry {
    pub slide_id: String,
    pub dir: PathBuf,
    pub has_manifest: bool,
    pub has_tiles: bool,
    pub has_features: bool,
    /// No row in labels.csv.
    pub unlabeled: bool,
}

impl SlideEntry {
    pub fn manifest_path(&self) -> PathBuf {
        self.dir.join(MANIFEST_FILE)
    }

    pub fn features_path(&self) -> PathBuf {
        features_path(&self.dir, &self.slide_id)
    }
}

pub fn features_path(slide_dir: &Path, slide_id: &str) -> PathBuf {
    slide_dir.join(format!("{slide_id}.h5"))
}

/// Read-only view of a dataset root.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub slides: Vec<SlideEntry>,
    pub tasks: Vec<TaskConfig>,
    pub labels: LabelTable,
    pub splits: Option<BTreeMap<String, Subset>>,
}

impl Dataset {
    pub fn task(&self, name: &str) -> Option<&TaskConfig> {
        self.tasks.iter().find(|t| t.name == name)
    }

    pub fn slide(&self, slide_id: &str) -> Option<&SlideEntry> {
        self.slides.iter().find(|s| s.slide_id == slide_id)
    }

    pub fn labels_for(&self, task: &TaskConfig) -> Result<BTreeMap<String, Label>, DatasetError> {
        self.labels.labels_for(task)
    }

    pub fn task_settings(&self) -> PathBuf {
        self.root.join(TASK_SETTINGS)
    }
}

/// Slide folders under `root` (anything holding a manifest, `tiles/`, or
/// `<id>.h5`), sorted by id. Works without task settings.
pub fn scan_slides(root: &Path) -> Result<Vec<SlideEntry>, DatasetError> {
    let mut slides = Vec::new();
    let mut entries: Vec<_> = fs::read_dir(root)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let name = e.file_name().to_string_lossy().into_owned();
        if name == TASK_SETTINGS || name.starts_with('.') || !e.file_type()?.is_dir() {
            continue;
        }
        let dir = e.path();
        let has_manifest = dir.join(MANIFEST_FILE).is_file();
        let has_tiles = dir.join(TILES_DIR).is_dir();
        let has_features = features_path(&dir, &name).is_file();
        if has_manifest || has_tiles || has_features {
            slides.push(SlideEntry { slide_id: name, dir, has_manifest, has_tiles, has_features, unlabeled: true });
        }
    }
    Ok(slides)
}

/// Enumerates slide folders and parses `task-settings/`. Every task's
/// labels are parsed eagerly so malformed cells fail here.
pub fn load_dataset(root: &Path) -> Result<Dataset, DatasetError> {
    let settings = root.join(TASK_SETTINGS);
    if !settings.is_dir() {
        return Err(DatasetError::MissingTaskSettings(settings));
    }
    let tasks = read_task_configs(&settings.join(TASK_CONFIGS_FILE))?;
    let labels = LabelTable::read(&settings.join(LABELS_FILE))?;
    for t in &tasks {
        labels.labels_for(t)?;
    }
    let splits_path = settings.join(SPLITS_FILE);
    let splits = if splits_path.is_file() { Some(read_splits(&splits_path)?) } else { None };

    let mut slides = scan_slides(root)?;
    for s in &mut slides {
        s.unlabeled = labels.row(&s.slide_id).is_none();
    }
    Ok(Dataset { root: root.to_path_buf(), slides, tasks, labels, splits })
}
