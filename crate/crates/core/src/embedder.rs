//! Tile embedding: the native reference embedder, the dataset embedding
//! stage, the external-adapter handoff, and feature-file validation.
//!
//! The native embedder maps an RGB tile to `D` floats:
//!
//! 1. area-average the tile onto an 8x8 grid (unrounded means);
//! 2. flatten row-major, channel-interleaved, to 192 values in `[0, 1]`;
//! 3. multiply by a `D x 192` matrix with entry `(r, c)` equal to
//!    `2 * unit_f64(draw(seed, r * 192 + c)) - 1` (SplitMix64 in counter mode,
//!    see [`crate::rng`]), summing columns in ascending order in f64;
//! 4. L2-normalize (a zero vector stays zero) and cast to f32.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset_store::{features_path, read_features, scan_slides, write_features, FeatureBag, SlideEntry};
use crate::raster::{area_resize_means, Raster, RasterError};
use crate::rng::{draw, unit_f64};
use crate::tiler::{read_manifest, worker_pool, TileMeta, TileRecord, TilerError, MANIFEST_FILE, TILES_DIR, TILE_META_FILE};

pub const GRID: u32 = 8;
pub const INPUT_LEN: usize = (GRID * GRID * 3) as usize;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("{slide_id}: missing tiles: {reason}")]
    MissingTiles { slide_id: String, reason: String },
    #[error("invalid embedder spec: {0}")]
    InvalidSpec(String),
    #[error("{slide_id}: adapter failed: {reason}")]
    Adapter { slide_id: String, reason: String },
    #[error("{slide_id}: {source}")]
    Features { slide_id: String, source: crate::dataset_store::FeatureError },
    #[error(transparent)]
    Tiler(#[from] TilerError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Dataset(#[from] crate::dataset_store::DatasetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    Native,
    External,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedderSpec {
    pub embedder_id: String,
    pub dim: usize,
    pub kind: EmbedderKind,
    /// Projection seed; native only.
    pub seed: u64,
}

impl EmbedderSpec {
    pub fn native(seed: u64, dim: usize) -> Self {
        Self { embedder_id: native_id(seed, dim), dim, kind: EmbedderKind::Native, seed }
    }

    pub fn external(embedder_id: &str, dim: usize) -> Self {
        Self { embedder_id: embedder_id.into(), dim, kind: EmbedderKind::External, seed: 0 }
    }

    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.dim == 0 {
            return Err(EmbedError::InvalidSpec("dim must be at least 1".into()));
        }
        if self.embedder_id.trim().is_empty() {
            return Err(EmbedError::InvalidSpec("embedder_id must be non-empty".into()));
        }
        if self.kind == EmbedderKind::Native && self.embedder_id != native_id(self.seed, self.dim) {
            return Err(EmbedError::InvalidSpec(format!(
                "native embedder id must be {:?}, got {:?}",
                native_id(self.seed, self.dim),
                self.embedder_id
            )));
        }
        Ok(())
    }
}

pub fn native_id(seed: u64, dim: usize) -> String {
    format!("native8x8-splitmix64-seed{seed}-d{dim}")
}

/// `D x 192` projection, row-major, built once per spec.
#[derive(Debug, Clone, PartialEq)]
pub struct NativeEmbedder {
    dim: usize,
    weights: Vec<f64>,
}

impl NativeEmbedder {
    pub fn new(seed: u64, dim: usize) -> Self {
        let weights = (0..(dim * INPUT_LEN) as u64).map(|i| 2.0 * unit_f64(draw(seed, i)) - 1.0).collect();
        Self { dim, weights }
    }

    pub fn from_spec(spec: &EmbedderSpec) -> Self {
        Self::new(spec.seed, spec.dim)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Grayscale tiles are treated as RGB with equal channels.
    pub fn embed(&self, tile: &Raster) -> Vec<f32> {
        let means = area_resize_means(tile, GRID, GRID);
        let input: Vec<f64> = if tile.channels() == 3 {
            means.iter().map(|m| m / 255.0).collect()
        } else {
            means.iter().flat_map(|&m| [m / 255.0; 3]).collect()
        };
        let mut out: Vec<f64> = self
            .weights
            .chunks_exact(INPUT_LEN)
            .map(|row| row.iter().zip(&input).fold(0.0, |acc, (w, x)| acc + w * x))
            .collect();
        let norm = out.iter().fold(0.0, |acc, v| acc + v * v).sqrt();
        if norm > 0.0 {
            out.iter_mut().for_each(|v| *v /= norm);
        }
        out.into_iter().map(|v| v as f32).collect()
    }
}

/// One-shot convenience; prefer [`NativeEmbedder`] for many tiles.
pub fn native_embed(tile: &Raster, spec: &EmbedderSpec) -> Vec<f32> {
    NativeEmbedder::from_spec(spec).embed(tile)
}

#[derive(Debug, Clone)]
pub struct EmbedOptions {
    /// Tiles decoded and embedded together per slide.
    pub batch: usize,
    pub workers: usize,
    pub force: bool,
    /// Used when a slide has no tile metadata sidecar.
    pub fallback_mpp: f64,
    /// Whitespace-separated command; required for external specs.
    pub adapter_cmd: Option<String>,
}

impl Default for EmbedOptions {
    fn default() -> Self {
        Self { batch: 64, workers: 0, force: false, fallback_mpp: 0.5, adapter_cmd: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SlideOutcome {
    Written { tiles: usize },
    /// Feature file already present and `force` not set.
    Skipped,
    /// Empty manifest; no file written.
    NoTiles,
    /// External output failed validation and was deleted.
    Rejected(Vec<String>),
}

#[derive(Debug, Clone, Default)]
pub struct EmbedSummary {
    pub slides: BTreeMap<String, SlideOutcome>,
}

impl EmbedSummary {
    pub fn rejected(&self) -> usize {
        self.slides.values().filter(|o| matches!(o, SlideOutcome::Rejected(_))).count()
    }
}

/// Embeds every slide folder under `root` that has a tile manifest.
/// Slides run in parallel; each bag is assembled in manifest order.
pub fn embed_dataset(root: &Path, spec: &EmbedderSpec, opts: &EmbedOptions) -> Result<EmbedSummary, EmbedError> {
    spec.validate()?;
    let slides: Vec<SlideEntry> = scan_slides(root)?.into_iter().filter(|s| s.has_manifest || s.has_tiles).collect();
    let native = (spec.kind == EmbedderKind::Native).then(|| NativeEmbedder::from_spec(spec));
    if spec.kind == EmbedderKind::External && opts.adapter_cmd.as_deref().map_or(true, |c| c.trim().is_empty()) {
        return Err(EmbedError::InvalidSpec("external embedder requires an adapter command".into()));
    }
    let pool = worker_pool(opts.workers)?;
    let outcomes: Vec<(String, SlideOutcome)> = pool.install(|| {
        slides
            .par_iter()
            .map(|s| {
                let outcome = match &native {
                    Some(emb) => embed_slide_native(s, spec, emb, opts)?,
                    None => embed_slide_external(s, spec, opts)?,
                };
                Ok((s.slide_id.clone(), outcome))
            })
            .collect::<Result<_, EmbedError>>()
    })?;
    Ok(EmbedSummary { slides: outcomes.into_iter().collect() })
}

fn load_manifest(slide: &SlideEntry) -> Result<Vec<TileRecord>, EmbedError> {
    let path = slide.dir.join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(EmbedError::MissingTiles { slide_id: slide.slide_id.clone(), reason: format!("no {MANIFEST_FILE}") });
    }
    Ok(read_manifest(&path)?)
}

fn tile_mpp(slide: &SlideEntry, opts: &EmbedOptions) -> Result<f64, EmbedError> {
    let meta = slide.dir.join(TILE_META_FILE);
    if meta.is_file() {
        Ok(TileMeta::read(&meta)?.tile_mpp)
    } else {
        log::warn!("{}: no {TILE_META_FILE}; recording mpp {}", slide.slide_id, opts.fallback_mpp);
        Ok(opts.fallback_mpp)
    }
}

fn should_skip(slide: &SlideEntry, opts: &EmbedOptions) -> bool {
    let exists = slide.features_path().is_file();
    if exists && !opts.force {
        log::info!("{}: feature file exists; skipping", slide.slide_id);
    }
    exists && !opts.force
}

fn embed_slide_native(
    slide: &SlideEntry,
    spec: &EmbedderSpec,
    emb: &NativeEmbedder,
    opts: &EmbedOptions,
) -> Result<SlideOutcome, EmbedError> {
    if should_skip(slide, opts) {
        return Ok(SlideOutcome::Skipped);
    }
    let records = load_manifest(slide)?;
    if records.is_empty() {
        log::warn!("{}: manifest lists no tiles; no feature file written", slide.slide_id);
        return Ok(SlideOutcome::NoTiles);
    }
    let mpp = tile_mpp(slide, opts)?;
    let mut features = Vec::with_capacity(records.len() * spec.dim);
    for batch in records.chunks(opts.batch.max(1)) {
        let vecs: Vec<Vec<f32>> = batch
            .par_iter()
            .map(|r| {
                let path = slide.dir.join(&r.path);
                if !path.is_file() {
                    return Err(EmbedError::MissingTiles {
                        slide_id: slide.slide_id.clone(),
                        reason: format!("{} not found", r.path),
                    });
                }
                Ok(emb.embed(&Raster::read_png(&path)?))
            })
            .collect::<Result<_, EmbedError>>()?;
        features.extend(vecs.into_iter().flatten());
    }
    let bag = FeatureBag {
        slide_id: slide.slide_id.clone(),
        embedder_id: spec.embedder_id.clone(),
        mpp,
        tile_size: records[0].w as i64,
        dim: spec.dim,
        features,
        coords: manifest_coords(&records).map_err(|reason| EmbedError::MissingTiles {
            slide_id: slide.slide_id.clone(),
            reason,
        })?,
    };
    write_features(&slide.features_path(), &bag)
        .map_err(|source| EmbedError::Features { slide_id: slide.slide_id.clone(), source })?;
    Ok(SlideOutcome::Written { tiles: records.len() })
}

fn manifest_coords(records: &[TileRecord]) -> Result<Vec<[i32; 2]>, String> {
    records
        .iter()
        .map(|r| match (i32::try_from(r.x), i32::try_from(r.y)) {
            (Ok(x), Ok(y)) => Ok([x, y]),
            _ => Err(format!("tile origin ({}, {}) exceeds int32", r.x, r.y)),
        })
        .collect()
}

/// Runs `<cmd> --tiles-dir <dir> --manifest <file> --out <h5> --dim <D>
/// --embedder-id <id>` for one slide.
pub fn run_adapter(cmd: &str, slide_dir: &Path, slide_id: &str, spec: &EmbedderSpec) -> Result<PathBuf, EmbedError> {
    let mut parts = cmd.split_whitespace();
    let program = parts.next().ok_or_else(|| EmbedError::InvalidSpec("empty adapter command".into()))?;
    let out = features_path(slide_dir, slide_id);
    let status = Command::new(program)
        .args(parts)
        .arg("--tiles-dir")
        .arg(slide_dir.join(TILES_DIR))
        .arg("--manifest")
        .arg(slide_dir.join(MANIFEST_FILE))
        .arg("--out")
        .arg(&out)
        .arg("--dim")
        .arg(spec.dim.to_string())
        .arg("--embedder-id")
        .arg(&spec.embedder_id)
        .status()
        .map_err(|e| EmbedError::Adapter { slide_id: slide_id.into(), reason: format!("cannot start {program:?}: {e}") })?;
    if !status.success() {
        return Err(EmbedError::Adapter { slide_id: slide_id.into(), reason: format!("exited with {status}") });
    }
    Ok(out)
}

fn embed_slide_external(slide: &SlideEntry, spec: &EmbedderSpec, opts: &EmbedOptions) -> Result<SlideOutcome, EmbedError> {
    if should_skip(slide, opts) {
        return Ok(SlideOutcome::Skipped);
    }
    let records = load_manifest(slide)?;
    if records.is_empty() {
        log::warn!("{}: manifest lists no tiles; adapter not invoked", slide.slide_id);
        return Ok(SlideOutcome::NoTiles);
    }
    let cmd = opts.adapter_cmd.as_deref().unwrap_or_default();
    let out = match run_adapter(cmd, &slide.dir, &slide.slide_id, spec) {
        Ok(out) => out,
        Err(e) => {
            let _ = fs::remove_file(slide.features_path());
            return Err(e);
        }
    };
    let mut reasons = check_slide(slide, &records);
    if reasons.is_empty() {
        match read_features(&out) {
            Ok(bag) if bag.dim != spec.dim => reasons.push(format!("dim {} but adapter was asked for {}", bag.dim, spec.dim)),
            Ok(bag) if bag.embedder_id != spec.embedder_id => {
                reasons.push(format!("embedder_id {:?} but expected {:?}", bag.embedder_id, spec.embedder_id))
            }
            _ => {}
        }
    }
    if reasons.is_empty() {
        Ok(SlideOutcome::Written { tiles: records.len() })
    } else {
        log::error!("{}: adapter output rejected: {}", slide.slide_id, reasons.join("; "));
        fs::remove_file(&out)?;
        Ok(SlideOutcome::Rejected(reasons))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail(Vec<String>),
    /// Nothing to check (empty manifest and no feature file).
    Skipped(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ValidationReport {
    pub slides: BTreeMap<String, CheckStatus>,
}

impl ValidationReport {
    pub fn failures(&self) -> usize {
        self.slides.values().filter(|s| matches!(s, CheckStatus::Fail(_))).count()
    }

    pub fn passed(&self) -> bool {
        self.failures() == 0
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (id, status) in &self.slides {
            match status {
                CheckStatus::Pass => writeln!(f, "PASS {id}")?,
                CheckStatus::Skipped(why) => writeln!(f, "SKIP {id}: {why}")?,
                CheckStatus::Fail(reasons) => writeln!(f, "FAIL {id}: {}", reasons.join("; "))?,
            }
        }
        let n = self.slides.len();
        write!(f, "{} slide(s), {} failure(s)", n, self.failures())
    }
}

/// Conformance reasons for one slide's feature file against its manifest;
/// empty means the file conforms.
pub fn check_slide(slide: &SlideEntry, records: &[TileRecord]) -> Vec<String> {
    let path = slide.features_path();
    if !path.is_file() {
        return vec![format!("missing feature file {}.h5", slide.slide_id)];
    }
    let bag = match read_features(&path) {
        Ok(bag) => bag,
        Err(e) => return vec![e.to_string()],
    };
    let mut reasons = Vec::new();
    if bag.slide_id != slide.slide_id {
        reasons.push(format!("slide_id attribute {:?} does not match folder {:?}", bag.slide_id, slide.slide_id));
    }
    match manifest_coords(records) {
        Ok(expected) if expected == bag.coords => {}
        Ok(expected) => {
            let first = expected.iter().zip(&bag.coords).position(|(a, b)| a != b);
            reasons.push(match first {
                Some(i) => format!("coords_xy row {i} is {:?}, manifest has {:?}", bag.coords[i], expected[i]),
                None => format!("coords_xy has {} rows, manifest has {}", bag.coords.len(), expected.len()),
            });
        }
        Err(e) => reasons.push(e),
    }
    reasons
}

/// Checks every slide folder under `root` that has a manifest.
pub fn validate_features(root: &Path) -> Result<ValidationReport, EmbedError> {
    let mut report = ValidationReport::default();
    for slide in scan_slides(root)? {
        let status = if !slide.has_manifest {
            CheckStatus::Fail(vec![format!("no {MANIFEST_FILE}")])
        } else {
            match read_manifest(&slide.manifest_path()) {
                Err(e) => CheckStatus::Fail(vec![e.to_string()]),
                Ok(records) if records.is_empty() && !slide.features_path().exists() => {
                    CheckStatus::Skipped("manifest lists no tiles".into())
                }
                Ok(records) => {
                    let reasons = check_slide(&slide, &records);
                    if reasons.is_empty() {
                        CheckStatus::Pass
                    } else {
                        CheckStatus::Fail(reasons)
                    }
                }
            }
        };
        report.slides.insert(slide.slide_id, status);
    }
    Ok(report)
}
