//! Stage drivers shared by the command line and the integration tests:
//! per-slide cropping and a small synthetic benchmark dataset.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset_store::{write_task_configs, DatasetError, LabelRow, LabelTable, TaskConfig, LABELS_FILE, TASK_CONFIGS_FILE, TASK_SETTINGS};
use crate::raster::RasterError;
use crate::rng::{derive_seed, SplitMix64};
use crate::slide_io::{open_slide, synth_slide, BlobSpec, SlideError, SynthSpec};
use crate::tiler::{crop_slide, TilePlan, TilerError, MANIFEST_FILE};
use crate::tissue_mask::{TissueMask, DEFAULT_MASK_MPP, DEFAULT_MIN_REGION_AREA};

pub const QC_MASK_FILE: &str = "qc_mask.png";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Slide(#[from] SlideError),
    #[error(transparent)]
    Tiler(#[from] TilerError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskParams {
    /// Thumbnail resolution for tissue detection.
    pub mask_mpp: f64,
    /// Components smaller than this (thumbnail pixels) are dropped.
    pub min_region_area: u64,
}

impl Default for MaskParams {
    fn default() -> Self {
        Self { mask_mpp: DEFAULT_MASK_MPP, min_region_area: DEFAULT_MIN_REGION_AREA }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CropStatus {
    Cropped { slide_id: String, tiles: usize, candidates: usize },
    /// Manifest already present and `force` not set.
    Skipped { slide_id: String },
}

/// Mask, tile and write one slide file into `<dataset>/<slide_id>/`.
pub fn crop_slide_file(
    slide_path: &Path,
    dataset: &Path,
    plan: &TilePlan,
    mask: &MaskParams,
    workers: usize,
    emit_qc: bool,
    force: bool,
) -> Result<CropStatus, PipelineError> {
    let slide = open_slide(slide_path)?;
    let slide_id = slide.slide_id().to_owned();
    let out_dir = dataset.join(&slide_id);
    if out_dir.join(MANIFEST_FILE).is_file() && !force {
        log::info!("{slide_id}: manifest exists; skipping (use --force to redo)");
        return Ok(CropStatus::Skipped { slide_id });
    }
    fs::create_dir_all(&out_dir)?;
    let mask_mpp = mask.mask_mpp.max(slide.level0_mpp());
    let (thumb, scale) = slide.thumbnail(mask_mpp)?;
    let tissue = TissueMask::from_thumbnail(&thumb, scale, mask.min_region_area);
    if emit_qc {
        tissue.write_qc_png(&thumb, &out_dir.join(QC_MASK_FILE))?;
    }
    let out = crop_slide(&slide, &tissue, plan, &out_dir, workers)?;
    log::info!("{slide_id}: {} of {} candidate tiles kept", out.records.len(), out.candidates);
    Ok(CropStatus::Cropped { slide_id, tiles: out.records.len(), candidates: out.candidates })
}

/// Synthetic benchmark dataset: slides whose tissue color encodes a score,
/// a classification task (`tumor`) and a regression task (`score`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub slides: usize,
    /// Level-0 edge in pixels.
    pub size: u32,
    pub mpp: f64,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self { slides: 12, size: 1024, mpp: 0.5, seed: 0 }
    }
}

pub const FIXTURE_SLIDES_DIR: &str = "slides";
pub const FIXTURE_DATASET_DIR: &str = "dataset";

const NORMAL_RGB: [f64; 3] = [228.0, 150.0, 188.0];
const TUMOR_RGB: [f64; 3] = [112.0, 40.0, 132.0];

pub fn fixture_tasks() -> Vec<TaskConfig> {
    vec![TaskConfig::classification("tumor", &["normal", "tumor"]), TaskConfig::regression("score")]
}

/// Writes `<out>/slides/*.tiff` and `<out>/dataset/task-settings/`. The
/// first four slides pair up into two patients. Returns the slide paths.
pub fn write_fixture(out: &Path, spec: &FixtureSpec) -> Result<Vec<PathBuf>, PipelineError> {
    let slides_dir = out.join(FIXTURE_SLIDES_DIR);
    let settings = out.join(FIXTURE_DATASET_DIR).join(TASK_SETTINGS);
    fs::create_dir_all(&slides_dir)?;
    fs::create_dir_all(&settings)?;
    let n = spec.slides;
    let mut rng = SplitMix64::new(derive_seed(spec.seed, 0xF1C7_0001));
    let mut paths = Vec::with_capacity(n);
    let mut rows = Vec::with_capacity(n);
    let s = spec.size as f64;
    for i in 0..n {
        let score = ((i * 7) % n) as f64 / n as f64 + 0.5 / n as f64;
        let color: [u8; 3] = std::array::from_fn(|c| (NORMAL_RGB[c] + (TUMOR_RGB[c] - NORMAL_RGB[c]) * score).round() as u8);
        let jitter = |rng: &mut SplitMix64| rng.uniform(-0.04, 0.04) * s;
        let mut rect = BlobSpec::rect(0.1 * s + jitter(&mut rng).abs(), 0.1 * s + jitter(&mut rng).abs(), 0.45 * s, 0.4 * s);
        rect.color = Some(color);
        let mut ell = BlobSpec::ellipse(0.7 * s + jitter(&mut rng), 0.68 * s + jitter(&mut rng), 0.2 * s, 0.22 * s);
        ell.color = Some(color);
        let id = format!("slide_{i:03}");
        let path = slides_dir.join(format!("{id}.tiff"));
        let synth = SynthSpec {
            width: spec.size,
            height: spec.size,
            mpp: spec.mpp,
            seed: derive_seed(spec.seed, i as u64),
            blobs: vec![rect, ell],
            levels: None,
            tile: None,
        };
        synth_slide(&synth, &path)?;
        paths.push(path);
        let patient = if i < 4 { format!("patient_{:03}", i / 2) } else { format!("patient_{:03}", i - 2) };
        let tumor = if score >= 0.5 { "tumor" } else { "normal" };
        rows.push(LabelRow { slide_id: id, patient_id: patient, cells: vec![Some(tumor.into()), Some(format!("{score:.4}"))] });
    }
    let tasks = fixture_tasks();
    write_task_configs(&settings.join(TASK_CONFIGS_FILE), &tasks)?;
    LabelTable { columns: tasks.iter().map(|t| t.label_column.clone()).collect(), rows }.write(&settings.join(LABELS_FILE))?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset_store::load_dataset;

    #[test]
    fn fixture_layout_and_labels() {
        let dir = tempfile::tempdir().unwrap();
        let spec = FixtureSpec { slides: 6, size: 512, ..Default::default() };
        let paths = write_fixture(dir.path(), &spec).unwrap();
        assert_eq!(paths.len(), 6);
        assert!(paths.iter().all(|p| p.is_file()));
        let ds = load_dataset(&dir.path().join(FIXTURE_DATASET_DIR)).unwrap();
        assert_eq!(ds.labels.rows.len(), 6);
        assert_eq!(ds.labels.patient_of()["slide_001"], "patient_000");
        assert_eq!(ds.labels.patient_of()["slide_005"], "patient_003");
        let tumor = ds.labels_for(ds.task("tumor").unwrap()).unwrap();
        assert!(tumor.values().any(|l| *l == crate::dataset_store::Label::Class(0)));
        assert!(tumor.values().any(|l| *l == crate::dataset_store::Label::Class(1)));
    }

    #[test]
    fn crop_is_idempotent_without_force() {
        let dir = tempfile::tempdir().unwrap();
        let paths = write_fixture(dir.path(), &FixtureSpec { slides: 1, size: 768, ..Default::default() }).unwrap();
        let ds = dir.path().join(FIXTURE_DATASET_DIR);
        let plan = TilePlan::default();
        let first = crop_slide_file(&paths[0], &ds, &plan, &MaskParams::default(), 1, true, false).unwrap();
        let CropStatus::Cropped { tiles, .. } = first else { panic!("expected crop") };
        assert!(tiles > 0);
        assert!(ds.join("slide_000").join(QC_MASK_FILE).is_file());
        let again = crop_slide_file(&paths[0], &ds, &plan, &MaskParams::default(), 1, false, false).unwrap();
        assert!(matches!(again, CropStatus::Skipped { .. }));
    }
}
