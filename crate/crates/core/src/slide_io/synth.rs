//! Deterministic synthetic slides: noisy near-white background with
//! saturated pink "tissue" blobs, written as a tiled pyramidal TIFF.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tiff_writer::{write_pyramid_tiff, LevelImage};
use super::SlideError;
use crate::raster::{resample_area, Raster};
use crate::rng;

pub const BACKGROUND_RGB: [u8; 3] = [245, 245, 245];
pub const TISSUE_RGB: [u8; 3] = [200, 120, 150];
/// Per-channel uniform noise half-widths.
const BACKGROUND_NOISE: i32 = 6;
const TISSUE_NOISE: i32 = 20;
const DEFAULT_TIFF_TILE: u32 = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlobShape {
    #[default]
    Ellipse,
    /// Axis-aligned rectangle `[cx-rx, cx+rx) x [cy-ry, cy+ry)`.
    Rect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
    #[serde(default)]
    pub shape: BlobShape,
    /// Base tissue color; defaults to [`TISSUE_RGB`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<[u8; 3]>,
}

impl BlobSpec {
    pub fn ellipse(cx: f64, cy: f64, rx: f64, ry: f64) -> Self {
        Self { cx, cy, rx, ry, shape: BlobShape::Ellipse, color: None }
    }

    pub fn rect(x0: f64, y0: f64, w: f64, h: f64) -> Self {
        Self { cx: x0 + w / 2.0, cy: y0 + h / 2.0, rx: w / 2.0, ry: h / 2.0, shape: BlobShape::Rect, color: None }
    }

    fn contains(&self, px: f64, py: f64) -> bool {
        match self.shape {
            BlobShape::Ellipse => {
                let dx = (px - self.cx) / self.rx;
                let dy = (py - self.cy) / self.ry;
                dx * dx + dy * dy <= 1.0
            }
            BlobShape::Rect => {
                px >= self.cx - self.rx && px < self.cx + self.rx && py >= self.cy - self.ry && py < self.cy + self.ry
            }
        }
    }

    /// Analytic area in level-0 pixels.
    pub fn area(&self) -> f64 {
        match self.shape {
            BlobShape::Ellipse => std::f64::consts::PI * self.rx * self.ry,
            BlobShape::Rect => 4.0 * self.rx * self.ry,
        }
    }
}

/// Fixture description, also the JSON format accepted by `synth --spec`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub width: u32,
    pub height: u32,
    pub mpp: f64,
    pub seed: u64,
    #[serde(default)]
    pub blobs: Vec<BlobSpec>,
    /// Pyramid depth; by default levels halve while the larger side stays >= 1024.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<usize>,
    /// TIFF tile edge (multiple of 16), default 256.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tile: Option<u32>,
}

impl SynthSpec {
    pub fn tiff_tile(&self) -> u32 {
        self.tile.unwrap_or(DEFAULT_TIFF_TILE)
    }

    pub fn level_count(&self) -> usize {
        match self.levels {
            Some(n) => n,
            None => {
                let mut n = 1;
                let mut side = self.width.max(self.height);
                while side / 2 >= 1024 {
                    side /= 2;
                    n += 1;
                }
                n
            }
        }
    }

    pub fn validate(&self) -> Result<(), SlideError> {
        let bad = |m: String| Err(SlideError::InvalidSpec(m));
        let tile = self.tiff_tile();
        if tile == 0 || tile % 16 != 0 {
            return bad(format!("tile {tile} must be a positive multiple of 16"));
        }
        if self.width < tile || self.height < tile {
            return bad(format!("dims {}x{} smaller than tile {tile}", self.width, self.height));
        }
        if !(self.mpp.is_finite() && self.mpp > 0.0) {
            return bad(format!("mpp {} must be positive", self.mpp));
        }
        let n = self.level_count();
        if n == 0 || (self.width >> (n - 1)) == 0 || (self.height >> (n - 1)) == 0 {
            return bad(format!("{n} levels do not fit {}x{}", self.width, self.height));
        }
        for (i, b) in self.blobs.iter().enumerate() {
            let finite = [b.cx, b.cy, b.rx, b.ry].iter().all(|v| v.is_finite());
            if !finite || b.rx <= 0.0 || b.ry <= 0.0 {
                return bad(format!("blob {i}: radii must be positive"));
            }
            if b.cx - b.rx < 0.0 || b.cy - b.ry < 0.0 || b.cx + b.rx > self.width as f64 || b.cy + b.ry > self.height as f64
            {
                return bad(format!("blob {i} extends outside the slide"));
            }
        }
        Ok(())
    }
}

fn noise(seed: u64, index: u64, half_width: i32) -> i32 {
    let span = (2 * half_width + 1) as u128;
    ((rng::draw(seed, index) as u128 * span) >> 64) as i32 - half_width
}

/// Level-0 raster, then each coarser level by 2x area averaging.
pub fn render_levels(spec: &SynthSpec) -> Vec<Raster> {
    let (w, h) = (spec.width as usize, spec.height as usize);
    let seed = rng::derive_seed(spec.seed, 0x5EED_511D);
    let mut data = vec![0u8; w * h * 3];
    data.par_chunks_mut(w * 3).enumerate().for_each(|(y, row)| {
        let py = y as f64 + 0.5;
        for x in 0..w {
            let px = x as f64 + 0.5;
            let (base, amp) = match spec.blobs.iter().rev().find(|b| b.contains(px, py)) {
                Some(b) => (b.color.unwrap_or(TISSUE_RGB), TISSUE_NOISE),
                None => (BACKGROUND_RGB, BACKGROUND_NOISE),
            };
            let idx = ((y * w + x) * 3) as u64;
            for c in 0..3 {
                let v = base[c] as i32 + noise(seed, idx + c as u64, amp);
                row[x * 3 + c] = v.clamp(0, 255) as u8;
            }
        }
    });
    let mut levels = vec![Raster::new(spec.width, spec.height, 3, data).expect("sized buffer")];
    for _ in 1..spec.level_count() {
        let next = resample_area(levels.last().unwrap(), 0.5);
        levels.push(next);
    }
    levels
}

/// Writes the synthetic slide described by `spec` to `path`. Identical specs
/// produce byte-identical files.
pub fn synth_slide(spec: &SynthSpec, path: &Path) -> Result<(), SlideError> {
    spec.validate()?;
    let rasters = render_levels(spec);
    let levels: Vec<LevelImage<'_>> = rasters
        .iter()
        .enumerate()
        .map(|(k, r)| LevelImage { raster: r, mpp: spec.mpp * (1u64 << k) as f64 })
        .collect();
    write_pyramid_tiff(path, &levels, spec.tiff_tile(), "slidebench synthetic slide")?;
    Ok(())
}
