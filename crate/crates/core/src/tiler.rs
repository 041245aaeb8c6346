//! Tile grid planning, chunk-parallel extraction, quality filtering, and
//! tile/manifest persistence.
//!
//! Filters run coverage first (mask only, no pixel reads) and then
//! luminance variance on the resampled tile pixels. The manifest is always
//! sorted by `(y, x)` so output is independent of chunking and worker count.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{resample_area, Raster, RasterError};
use crate::slide_io::{SlideError, SlideSource};
use crate::tissue_mask::{Region, TissueMask};

pub const MANIFEST_FILE: &str = "tile_manifest.jsonl";
pub const TILES_DIR: &str = "tiles";
pub const TILE_META_FILE: &str = "tile_meta.json";

#[derive(Debug, Error)]
pub enum TilerError {
    #[error("invalid tile plan: {0}")]
    InvalidPlan(String),
    #[error(transparent)]
    Slide(#[from] SlideError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("manifest {path}: {msg}")]
    Manifest { path: PathBuf, msg: String },
    #[error("worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TilePlan {
    /// Tile edge in pixels at the target mpp.
    pub tile_size: u32,
    /// Grid step in pixels at the target mpp; may exceed `tile_size`.
    pub stride: u32,
    pub target_mpp: f64,
    /// Chunk edge in level-0 pixels.
    pub chunk_size: u32,
    pub min_coverage: f64,
    /// Minimum luminance variance (8-bit gray levels squared).
    pub min_variance: f64,
}

impl Default for TilePlan {
    fn default() -> Self {
        Self { tile_size: 224, stride: 224, target_mpp: 0.5, chunk_size: 4096, min_coverage: 0.25, min_variance: 15.0 }
    }
}

impl TilePlan {
    pub fn validate(&self) -> Result<(), TilerError> {
        let bad = |m: &str| Err(TilerError::InvalidPlan(m.to_string()));
        if self.tile_size == 0 || self.stride == 0 {
            return bad("tile_size and stride must be positive");
        }
        if self.chunk_size == 0 {
            return bad("chunk_size must be positive");
        }
        if !(self.target_mpp.is_finite() && self.target_mpp > 0.0) {
            return bad("target_mpp must be positive");
        }
        if !(0.0..=1.0).contains(&self.min_coverage) {
            return bad("min_coverage must lie in [0, 1]");
        }
        if !(self.min_variance >= 0.0) {
            return bad("min_variance must be >= 0");
        }
        Ok(())
    }
}

/// Tile extent and stride converted to level-0 pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileGeometry {
    pub extent_l0: u64,
    pub stride_l0: u64,
}

impl TileGeometry {
    /// `effective_mpp` is the target mpp, or level-0 mpp when the target is
    /// finer than anything stored (no upsampling).
    pub fn new(plan: &TilePlan, effective_mpp: f64, level0_mpp: f64) -> Self {
        let factor = effective_mpp / level0_mpp;
        Self {
            extent_l0: ((plan.tile_size as f64 * factor).round() as u64).max(1),
            stride_l0: ((plan.stride as f64 * factor).round() as u64).max(1),
        }
    }
}

/// Candidate tile origins (level-0, top-left), sorted by `(y, x)`.
///
/// Each region bbox is mapped to level 0, clamped to the slide, and tiled
/// from its top-left corner; tiles that would overhang the clamped bbox
/// are dropped and duplicates across regions are merged.
pub fn plan_tiles(regions: &[Region], mask_scale: f64, geometry: TileGeometry, dims: (u32, u32)) -> Vec<(u64, u64)> {
    let mut origins = BTreeSet::new();
    let (t, s) = (geometry.extent_l0, geometry.stride_l0);
    for r in regions {
        let x0 = (r.bbox.x0 as f64 * mask_scale).floor() as u64;
        let y0 = (r.bbox.y0 as f64 * mask_scale).floor() as u64;
        let x1 = ((r.bbox.x1 as f64 * mask_scale).ceil() as u64).min(dims.0 as u64);
        let y1 = ((r.bbox.y1 as f64 * mask_scale).ceil() as u64).min(dims.1 as u64);
        let mut y = y0;
        while y + t <= y1 {
            let mut x = x0;
            while x + t <= x1 {
                origins.insert((y, x));
                x += s;
            }
            y += s;
        }
    }
    origins.into_iter().map(|(y, x)| (x, y)).collect()
}

/// Fraction of mask-positive pixels under the tile footprint in thumbnail
/// space (floor of the start, ceil of the end, clamped to the mask).
pub fn coverage(origin: (u64, u64), extent_l0: u64, mask: &TissueMask) -> f64 {
    let s = mask.scale_to_level0;
    let span = |start: u64, limit: u32| {
        let a = ((start as f64 / s).floor() as u64).min(limit as u64);
        let b = (((start + extent_l0) as f64 / s).ceil() as u64).min(limit as u64);
        (a as u32, b as u32)
    };
    let (tx0, tx1) = span(origin.0, mask.width());
    let (ty0, ty1) = span(origin.1, mask.height());
    let area = (tx1 - tx0) as u64 * (ty1 - ty0) as u64;
    if area == 0 {
        return 0.0;
    }
    let w = mask.width() as usize;
    let ones: u64 = (ty0..ty1)
        .map(|y| {
            let row = &mask.mask.data[y as usize * w..(y as usize + 1) * w];
            row[tx0 as usize..tx1 as usize].iter().map(|&v| v as u64).sum::<u64>()
        })
        .sum();
    ones as f64 / area as f64
}

/// `round(0.299 R + 0.587 G + 0.114 B)`, exact in integers.
#[inline]
pub fn luminance(px: &[u8]) -> u32 {
    (299 * px[0] as u32 + 587 * px[1] as u32 + 114 * px[2] as u32 + 500) / 1000
}

/// Population variance of tile luminance.
pub fn pixel_variance(tile: &Raster) -> f64 {
    assert!(tile.is_rgb() && !tile.data().is_empty(), "variance needs a non-empty RGB tile");
    let (mut sum, mut sum_sq, mut n) = (0u128, 0u128, 0u128);
    for px in tile.data().chunks_exact(3) {
        let l = luminance(px) as u128;
        sum += l;
        sum_sq += l * l;
        n += 1;
    }
    // (n Σl² − (Σl)²) / n² is exact up to the final division.
    (n * sum_sq - sum * sum) as f64 / (n * n) as f64
}

/// One accepted tile; also one manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileRecord {
    pub x: u64,
    pub y: u64,
    pub w: u32,
    pub h: u32,
    pub coverage: f64,
    pub variance: f64,
    pub path: String,
}

/// Sidecar written next to the manifest so later stages know the tile scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileMeta {
    pub slide_id: String,
    pub tile_size: u32,
    /// Physical resolution of the saved tiles.
    pub tile_mpp: f64,
    pub level0_mpp: f64,
    pub level: usize,
}

impl TileMeta {
    pub fn write(&self, path: &Path) -> Result<(), TilerError> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| TilerError::Manifest { path: path.to_path_buf(), msg: e.to_string() })?;
        fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, TilerError> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| TilerError::Manifest { path: path.to_path_buf(), msg: e.to_string() })
    }
}

pub fn tile_rel_path(x: u64, y: u64) -> String {
    format!("{TILES_DIR}/{x}_{y}.png")
}

/// Reads each candidate's pixels at the target mpp.
struct TileReader<'a> {
    slide: &'a SlideSource,
    level: usize,
    scale: f64,
    read_px: u32,
    tile_size: u32,
}

impl<'a> TileReader<'a> {
    fn new(slide: &'a SlideSource, plan: &TilePlan) -> Self {
        let choice = slide.level_for_mpp(plan.target_mpp);
        let read_px = if choice.scale == 1.0 {
            plan.tile_size
        } else {
            (plan.tile_size as f64 / choice.scale - 1e-9).ceil() as u32
        };
        Self { slide, level: choice.level, scale: choice.scale, read_px, tile_size: plan.tile_size }
    }

    /// Level-pixel origin of a tile, shifted inward if rounding pushes it past the edge.
    fn level_origin(&self, origin: (u64, u64)) -> (u64, u64) {
        let lvl = self.slide.levels()[self.level];
        let fit = |v: u64, limit: u32| v.min((limit as u64).saturating_sub(self.read_px as u64));
        (fit(lvl.from_level0(origin.0), lvl.width), fit(lvl.from_level0(origin.1), lvl.height))
    }

    fn finish(&self, raw: &Raster) -> Result<Raster, TilerError> {
        let tile = resample_area(raw, self.scale);
        if tile.width() < self.tile_size || tile.height() < self.tile_size {
            return Err(TilerError::InvalidPlan(format!(
                "resampled tile {}x{} smaller than {}",
                tile.width(),
                tile.height(),
                self.tile_size
            )));
        }
        if tile.width() == self.tile_size && tile.height() == self.tile_size {
            Ok(tile)
        } else {
            Ok(tile.crop(0, 0, self.tile_size, self.tile_size)?)
        }
    }

    fn read_one(&self, origin: (u64, u64)) -> Result<Raster, TilerError> {
        let lo = self.level_origin(origin);
        let raw = self.slide.read_level_region(self.level, lo, (self.read_px, self.read_px))?;
        self.finish(&raw)
    }

    /// Reads the window covering all `origins` once and cuts tiles from it.
    fn read_chunk(&self, origins: &[(u64, u64)]) -> Result<Vec<Raster>, TilerError> {
        let los: Vec<(u64, u64)> = origins.iter().map(|&o| self.level_origin(o)).collect();
        let wx0 = los.iter().map(|o| o.0).min().unwrap();
        let wy0 = los.iter().map(|o| o.1).min().unwrap();
        let wx1 = los.iter().map(|o| o.0).max().unwrap() + self.read_px as u64;
        let wy1 = los.iter().map(|o| o.1).max().unwrap() + self.read_px as u64;
        let window = self.slide.read_level_region(self.level, (wx0, wy0), ((wx1 - wx0) as u32, (wy1 - wy0) as u32))?;
        los.iter()
            .map(|&(lx, ly)| {
                let raw = window.crop((lx - wx0) as u32, (ly - wy0) as u32, self.read_px, self.read_px)?;
                self.finish(&raw)
            })
            .collect()
    }
}

/// Coverage and variance for one candidate, evaluated independently of any
/// chunking. Used to audit filter decisions.
pub fn score_candidate(
    slide: &SlideSource,
    mask: &TissueMask,
    plan: &TilePlan,
    origin: (u64, u64),
) -> Result<(f64, f64), TilerError> {
    let choice = slide.level_for_mpp(plan.target_mpp);
    let geometry = TileGeometry::new(plan, choice.effective_mpp, slide.level0_mpp());
    let cov = coverage(origin, geometry.extent_l0, mask);
    let tile = TileReader::new(slide, plan).read_one(origin)?;
    Ok((cov, pixel_variance(&tile)))
}

/// All grid candidates for a slide, before filtering.
pub fn candidates(slide: &SlideSource, mask: &TissueMask, plan: &TilePlan) -> Vec<(u64, u64)> {
    let choice = slide.level_for_mpp(plan.target_mpp);
    let geometry = TileGeometry::new(plan, choice.effective_mpp, slide.level0_mpp());
    plan_tiles(&mask.regions, mask.scale_to_level0, geometry, slide.dimensions())
}

pub fn worker_pool(workers: usize) -> Result<rayon::ThreadPool, TilerError> {
    rayon::ThreadPoolBuilder::new().num_threads(workers).build().map_err(|e| TilerError::Pool(e.to_string()))
}

pub struct CropOutput {
    pub records: Vec<TileRecord>,
    pub manifest: PathBuf,
    pub candidates: usize,
}

/// Cuts, filters and saves tiles for one slide into `out_dir`
/// (`tiles/<x>_<y>.png` plus `tile_manifest.jsonl`). Existing tiles in
/// `out_dir` are replaced. `workers == 0` uses all cores.
pub fn crop_slide(
    slide: &SlideSource,
    mask: &TissueMask,
    plan: &TilePlan,
    out_dir: &Path,
    workers: usize,
) -> Result<CropOutput, TilerError> {
    plan.validate()?;
    let choice = slide.level_for_mpp(plan.target_mpp);
    if choice.degraded {
        log::warn!(
            "{}: target {} mpp finer than level 0 ({} mpp); tiling at level 0 without upsampling",
            slide.slide_id(),
            plan.target_mpp,
            slide.level0_mpp()
        );
    }
    let geometry = TileGeometry::new(plan, choice.effective_mpp, slide.level0_mpp());
    let all = plan_tiles(&mask.regions, mask.scale_to_level0, geometry, slide.dimensions());
    let n_candidates = all.len();

    let covered: Vec<((u64, u64), f64)> = all
        .into_iter()
        .map(|o| (o, coverage(o, geometry.extent_l0, mask)))
        .filter(|&(_, c)| c >= plan.min_coverage)
        .collect();

    let mut chunks: BTreeMap<(u64, u64), Vec<((u64, u64), f64)>> = BTreeMap::new();
    let cs = plan.chunk_size as u64;
    for item in covered {
        let (x, y) = item.0;
        chunks.entry((y / cs, x / cs)).or_default().push(item);
    }
    let chunks: Vec<Vec<((u64, u64), f64)>> = chunks.into_values().collect();

    let tiles_dir = out_dir.join(TILES_DIR);
    if tiles_dir.exists() {
        fs::remove_dir_all(&tiles_dir)?;
    }
    fs::create_dir_all(&tiles_dir)?;

    let reader = TileReader::new(slide, plan);
    let pool = worker_pool(workers)?;
    let per_chunk: Vec<Vec<TileRecord>> = pool.install(|| {
        chunks
            .par_iter()
            .map(|chunk| {
                let origins: Vec<(u64, u64)> = chunk.iter().map(|c| c.0).collect();
                let tiles = reader.read_chunk(&origins)?;
                let mut records = Vec::new();
                for (&((x, y), cov), tile) in chunk.iter().zip(&tiles) {
                    let variance = pixel_variance(tile);
                    if variance < plan.min_variance {
                        continue;
                    }
                    let path = tile_rel_path(x, y);
                    tile.write_png(&out_dir.join(&path))?;
                    records.push(TileRecord { x, y, w: plan.tile_size, h: plan.tile_size, coverage: cov, variance, path });
                }
                Ok(records)
            })
            .collect::<Result<_, TilerError>>()
    })?;

    let mut records: Vec<TileRecord> = per_chunk.into_iter().flatten().collect();
    records.sort_by_key(|r| (r.y, r.x));
    let manifest = out_dir.join(MANIFEST_FILE);
    write_manifest(&manifest, &records)?;
    TileMeta {
        slide_id: slide.slide_id().to_owned(),
        tile_size: plan.tile_size,
        tile_mpp: choice.effective_mpp,
        level0_mpp: slide.level0_mpp(),
        level: choice.level,
    }
    .write(&out_dir.join(TILE_META_FILE))?;
    if records.is_empty() {
        log::warn!("{}: no tiles passed quality control; wrote empty manifest", slide.slide_id());
    }
    Ok(CropOutput { records, manifest, candidates: n_candidates })
}

pub fn write_manifest(path: &Path, records: &[TileRecord]) -> Result<(), TilerError> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| TilerError::Manifest { path: path.to_path_buf(), msg: e.to_string() })?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<TileRecord>, TilerError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TileRecord = serde_json::from_str(&line).map_err(|e| TilerError::Manifest {
            path: path.to_path_buf(),
            msg: format!("line {}: {e}", i + 1),
        })?;
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use crate::tissue_mask::{BBox, BinaryMask};

    fn region(x0: u32, y0: u32, x1: u32, y1: u32) -> Region {
        Region { label: 1, bbox: BBox { x0, y0, x1, y1 }, area: 1 }
    }

    fn geom(t: u64, s: u64) -> TileGeometry {
        TileGeometry { extent_l0: t, stride_l0: s }
    }

    #[test]
    fn grid_over_single_region() {
        let origins = plan_tiles(&[region(0, 0, 448, 448)], 1.0, geom(224, 224), (1000, 1000));
        assert_eq!(origins, vec![(0, 0), (224, 0), (0, 224), (224, 224)]);
    }

    #[test]
    fn region_smaller_than_tile_yields_nothing() {
        assert!(plan_tiles(&[region(10, 10, 200, 400)], 1.0, geom(224, 224), (1000, 1000)).is_empty());
    }

    #[test]
    fn overhang_and_clamp() {
        // bbox maps to [0, 1600) but slide is only 1000 wide.
        let origins = plan_tiles(&[region(0, 0, 100, 14)], 16.0, geom(224, 224), (1000, 1000));
        let xs: BTreeSet<u64> = origins.iter().map(|o| o.0).collect();
        assert_eq!(xs.into_iter().collect::<Vec<_>>(), vec![0, 224, 448, 672]);
        assert!(origins.iter().all(|&(x, y)| x + 224 <= 1000 && y + 224 <= 224));
    }

    #[test]
    fn random_bbox_sets_match_enumeration() {
        let mut rng = SplitMix64::new(17);
        for _ in 0..100 {
            let dims = (2000u32, 1500u32);
            let t = 16 + rng.below(200);
            let s = 8 + rng.below(250);
            let n = 1 + rng.below(4) as usize;
            let regions: Vec<Region> = (0..n)
                .map(|_| {
                    let x0 = rng.below(1800) as u32;
                    let y0 = rng.below(1300) as u32;
                    region(x0, y0, x0 + 1 + rng.below(600) as u32, y0 + 1 + rng.below(600) as u32)
                })
                .collect();
            let got = plan_tiles(&regions, 1.0, geom(t, s), dims);

            // Oracle: enumerate every level-0 pixel as a potential origin.
            let mut expected = BTreeSet::new();
            let mut formula_total = 0u64;
            for r in &regions {
                let x1 = (r.bbox.x1 as u64).min(dims.0 as u64);
                let y1 = (r.bbox.y1 as u64).min(dims.1 as u64);
                let (bw, bh) = (x1 - r.bbox.x0 as u64, y1 - r.bbox.y0 as u64);
                let per_axis = |len: u64| if len >= t { (len - t) / s + 1 } else { 0 };
                formula_total += per_axis(bw) * per_axis(bh);
                for y in r.bbox.y0 as u64..y1 {
                    for x in r.bbox.x0 as u64..x1 {
                        let on_grid = (x - r.bbox.x0 as u64) % s == 0 && (y - r.bbox.y0 as u64) % s == 0;
                        if on_grid && x + t <= x1 && y + t <= y1 {
                            expected.insert((y, x));
                        }
                    }
                }
            }
            let expected: Vec<(u64, u64)> = expected.into_iter().map(|(y, x)| (x, y)).collect();
            assert_eq!(got, expected);
            assert!(got.len() as u64 <= formula_total);
            if n == 1 {
                assert_eq!(got.len() as u64, formula_total);
            }
        }
    }

    fn mask_from(bin: BinaryMask, scale: f64) -> TissueMask {
        TissueMask { mask: bin, threshold: 0, degenerate: false, scale_to_level0: scale, regions: vec![] }
    }

    #[test]
    fn coverage_extremes() {
        let ones = mask_from(BinaryMask { width: 10, height: 10, data: vec![1; 100] }, 16.0);
        let zeros = mask_from(BinaryMask::zeros(10, 10), 16.0);
        assert_eq!(coverage((16, 32), 48, &ones), 1.0);
        assert_eq!(coverage((16, 32), 48, &zeros), 0.0);
    }

    #[test]
    fn coverage_matches_count_oracle() {
        let mut rng = SplitMix64::new(3);
        for _ in 0..500 {
            let (w, h) = (1 + rng.below(40) as u32, 1 + rng.below(40) as u32);
            let data = (0..w * h).map(|_| (rng.below(2)) as u8).collect();
            let scale = [1.0, 2.0, 4.0, 16.0, 3.5][rng.below(5) as usize];
            let mask = mask_from(BinaryMask { width: w, height: h, data }, scale);
            let ext = 1 + rng.below(100);
            let origin = (rng.below((w as f64 * scale) as u64), rng.below((h as f64 * scale) as u64));

            let mut ones = 0u64;
            let mut total = 0u64;
            for ty in 0..h {
                for tx in 0..w {
                    // pixel [tx, tx+1) overlaps footprint [o/s, (o+e)/s) after floor/ceil
                    let fx0 = (origin.0 as f64 / scale).floor();
                    let fx1 = ((origin.0 + ext) as f64 / scale).ceil();
                    let fy0 = (origin.1 as f64 / scale).floor();
                    let fy1 = ((origin.1 + ext) as f64 / scale).ceil();
                    if (tx as f64) >= fx0 && (tx as f64) < fx1 && (ty as f64) >= fy0 && (ty as f64) < fy1 {
                        total += 1;
                        ones += mask.mask.get(tx, ty) as u64;
                    }
                }
            }
            let expected = if total == 0 { 0.0 } else { ones as f64 / total as f64 };
            assert_eq!(coverage(origin, ext, &mask), expected);
        }
    }

    #[test]
    fn variance_examples() {
        assert_eq!(pixel_variance(&Raster::filled(8, 8, &[90, 30, 200])), 0.0);
        let mut data = vec![0u8; 4 * 3];
        data[6..].fill(255);
        assert_eq!(pixel_variance(&Raster::new(2, 2, 3, data).unwrap()), 16256.25);
    }

    #[test]
    fn variance_matches_two_pass_oracle() {
        let mut rng = SplitMix64::new(8);
        for _ in 0..50 {
            let (w, h) = (1 + rng.below(64) as u32, 1 + rng.below(64) as u32);
            let data: Vec<u8> = (0..w * h * 3).map(|_| rng.below(256) as u8).collect();
            let tile = Raster::new(w, h, 3, data).unwrap();
            let lum: Vec<f64> = tile
                .data()
                .chunks_exact(3)
                .map(|p| (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64 + 0.5 + 1e-9).floor())
                .collect();
            let mean = lum.iter().sum::<f64>() / lum.len() as f64;
            let var = lum.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / lum.len() as f64;
            let got = pixel_variance(&tile);
            assert!(var == got || ((got - var) / var).abs() < 1e-12, "{got} vs {var}");
        }
    }

    #[test]
    fn plan_validation() {
        assert!(TilePlan::default().validate().is_ok());
        for f in [
            |p: &mut TilePlan| p.tile_size = 0,
            |p: &mut TilePlan| p.stride = 0,
            |p: &mut TilePlan| p.min_coverage = 1.5,
            |p: &mut TilePlan| p.min_variance = -1.0,
            |p: &mut TilePlan| p.target_mpp = 0.0,
        ] {
            let mut p = TilePlan::default();
            f(&mut p);
            assert!(p.validate().is_err());
        }
        let sparse = TilePlan { stride: 500, ..TilePlan::default() };
        assert!(sparse.validate().is_ok());
    }

    #[test]
    fn manifest_line_format() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(MANIFEST_FILE);
        let rec = TileRecord {
            x: 224,
            y: 0,
            w: 224,
            h: 224,
            coverage: 1.0,
            variance: 61.5,
            path: tile_rel_path(224, 0),
        };
        write_manifest(&p, &[rec.clone()]).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(
            text,
            "{\"x\":224,\"y\":0,\"w\":224,\"h\":224,\"coverage\":1.0,\"variance\":61.5,\"path\":\"tiles/224_0.png\"}\n"
        );
        assert_eq!(read_manifest(&p).unwrap(), vec![rec]);
    }
}
