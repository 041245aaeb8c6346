//! Global Otsu tissue mask on the whole-slide thumbnail and connected
//! tissue regions.
//!
//! Otsu runs on the HSV saturation channel: slide background is bright but
//! unsaturated while stained tissue is saturated.

use std::path::Path;

use num_bigint::BigUint;
use thiserror::Error;

use crate::raster::{Raster, RasterError};

pub const DEFAULT_MASK_MPP: f64 = 8.0;
pub const DEFAULT_MIN_REGION_AREA: u64 = 64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OtsuError {
    #[error("histogram is empty")]
    EmptyHistogram,
    /// All mass sits in a single bin; carries that bin.
    #[error("degenerate histogram: all mass in bin {0}")]
    DegenerateHistogram(u8),
}

/// Per-pixel HSV saturation scaled to 0..=255, rounded half-up.
pub fn saturation_channel(raster: &Raster) -> Raster {
    assert!(raster.is_rgb(), "saturation needs an RGB raster");
    let data = raster
        .data()
        .chunks_exact(3)
        .map(|px| {
            let max = px[0].max(px[1]).max(px[2]) as u32;
            let min = px[0].min(px[1]).min(px[2]) as u32;
            if max == 0 {
                0
            } else {
                // round(255 * (max - min) / max), exact in integers
                ((2 * 255 * (max - min) + max) / (2 * max)) as u8
            }
        })
        .collect();
    Raster::new(raster.width(), raster.height(), 1, data).expect("sized buffer")
}

pub fn histogram(gray: &Raster) -> [u64; 256] {
    let mut h = [0u64; 256];
    for &v in gray.data() {
        h[v as usize] += 1;
    }
    h
}

/// Otsu threshold `t` maximizing between-class variance with class 0 = bins
/// `<= t`; ties go to the smallest `t`. Pixels are tissue iff `value > t`.
///
/// With `n0, s0` the count and intensity sum of class 0 and `N, S` the
/// totals, `σ_b²(t) ∝ (N·s0 − n0·S)² / (n0·n1)`. Candidates are compared
/// by exact integer cross-multiplication, so the result is exactly
/// invariant under scaling every count by a positive constant.
pub fn otsu_threshold(hist: &[u64; 256]) -> Result<u8, OtsuError> {
    let total: u128 = hist.iter().map(|&c| c as u128).sum();
    if total == 0 {
        return Err(OtsuError::EmptyHistogram);
    }
    let nonzero: Vec<usize> = (0..256).filter(|&i| hist[i] > 0).collect();
    if nonzero.len() == 1 {
        return Err(OtsuError::DegenerateHistogram(nonzero[0] as u8));
    }
    let sum: u128 = hist.iter().enumerate().map(|(i, &c)| i as u128 * c as u128).sum();

    // best = (numerator d², denominator n0·n1) of the leading candidate
    let mut best: Option<(u8, BigUint, BigUint)> = None;
    let (mut n0, mut s0) = (0u128, 0u128);
    for (t, &count) in hist.iter().enumerate() {
        n0 += count as u128;
        s0 += t as u128 * count as u128;
        let n1 = total - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let (a, b) = (total * s0, n0 * sum);
        let d = BigUint::from(a.abs_diff(b));
        let num = &d * &d;
        let den = BigUint::from(n0) * BigUint::from(n1);
        let better = match &best {
            None => true,
            Some((_, bn, bd)) => &num * bd > bn * &den,
        };
        if better {
            best = Some((t as u8, num, den));
        }
    }
    Ok(best.expect("two nonempty bins give a candidate").0)
}

/// Binary raster, one byte per pixel holding 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl BinaryMask {
    pub fn zeros(width: u32, height: u32) -> Self {
        Self { width, height, data: vec![0; width as usize * height as usize] }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn count_ones(&self) -> u64 {
        self.data.iter().map(|&v| v as u64).sum()
    }
}

/// One pass of 3x3 majority smoothing: a pixel flips only when at least 5
/// of its (up to 8) neighbors disagree with it.
pub fn majority_smooth(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = (mask.width as i64, mask.height as i64);
    let mut out = mask.clone();
    for y in 0..h {
        for x in 0..w {
            let v = mask.data[(y * w + x) as usize];
            let mut disagree = 0;
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    let (nx, ny) = (x + dx, y + dy);
                    if (dx, dy) == (0, 0) || nx < 0 || ny < 0 || nx >= w || ny >= h {
                        continue;
                    }
                    disagree += (mask.data[(ny * w + nx) as usize] != v) as u32;
                }
            }
            if disagree >= 5 {
                out.data[(y * w + x) as usize] = 1 - v;
            }
        }
    }
    out
}

/// Half-open bounding box in thumbnail pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl BBox {
    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    pub label: u32,
    pub bbox: BBox,
    pub area: u64,
}

/// Label raster (0 = background or filtered out) with its regions.
#[derive(Debug, Clone)]
pub struct Labeling {
    pub labels: Vec<u32>,
    pub regions: Vec<Region>,
}

fn find(parent: &mut [u32], mut i: u32) -> u32 {
    while parent[i as usize] != i {
        parent[i as usize] = parent[parent[i as usize] as usize];
        i = parent[i as usize];
    }
    i
}

fn union(parent: &mut [u32], a: u32, b: u32) -> u32 {
    let (ra, rb) = (find(parent, a), find(parent, b));
    let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
    parent[hi as usize] = lo;
    lo
}

/// 8-connected component labeling. Components smaller than
/// `min_region_area` are dropped; surviving labels are 1.. in raster-scan
/// order of each component's first pixel.
pub fn label_image(mask: &BinaryMask, min_region_area: u64) -> Labeling {
    let (w, h) = (mask.width as usize, mask.height as usize);
    let mut provisional = vec![0u32; w * h];
    // parent[0] is the background sentinel.
    let mut parent: Vec<u32> = vec![0];
    for y in 0..h {
        for x in 0..w {
            if mask.data[y * w + x] == 0 {
                continue;
            }
            let mut label = 0u32;
            let neighbors = [
                (x > 0).then(|| y * w + x - 1),
                (x > 0 && y > 0).then(|| (y - 1) * w + x - 1),
                (y > 0).then(|| (y - 1) * w + x),
                (x + 1 < w && y > 0).then(|| (y - 1) * w + x + 1),
            ];
            for n in neighbors.into_iter().flatten() {
                let l = provisional[n];
                if l == 0 {
                    continue;
                }
                label = if label == 0 { find(&mut parent, l) } else { union(&mut parent, label, l) };
            }
            if label == 0 {
                label = parent.len() as u32;
                parent.push(label);
            }
            provisional[y * w + x] = label;
        }
    }

    // Roots in raster order of first appearance, with area and bbox.
    let mut root_slot = vec![u32::MAX; parent.len()];
    let mut stats: Vec<(u64, BBox)> = Vec::new();
    let mut labels = vec![0u32; w * h];
    for y in 0..h {
        for x in 0..w {
            let p = provisional[y * w + x];
            if p == 0 {
                continue;
            }
            let root = find(&mut parent, p) as usize;
            if root_slot[root] == u32::MAX {
                root_slot[root] = stats.len() as u32;
                stats.push((0, BBox { x0: x as u32, y0: y as u32, x1: x as u32 + 1, y1: y as u32 + 1 }));
            }
            let slot = root_slot[root] as usize;
            let (area, bb) = &mut stats[slot];
            *area += 1;
            bb.x0 = bb.x0.min(x as u32);
            bb.x1 = bb.x1.max(x as u32 + 1);
            bb.y1 = bb.y1.max(y as u32 + 1);
            labels[y * w + x] = slot as u32 + 1;
        }
    }

    let mut final_label = vec![0u32; stats.len() + 1];
    let mut regions = Vec::new();
    for (slot, &(area, bbox)) in stats.iter().enumerate() {
        if area >= min_region_area {
            let label = regions.len() as u32 + 1;
            final_label[slot + 1] = label;
            regions.push(Region { label, bbox, area });
        }
    }
    for l in labels.iter_mut() {
        *l = final_label[*l as usize];
    }
    Labeling { labels, regions }
}

pub fn label_components(mask: &BinaryMask, min_region_area: u64) -> Vec<Region> {
    label_image(mask, min_region_area).regions
}

/// Tissue mask at thumbnail scale with its threshold and regions.
#[derive(Debug, Clone)]
pub struct TissueMask {
    pub mask: BinaryMask,
    /// Otsu threshold on saturation; tissue iff saturation > threshold.
    pub threshold: u8,
    /// The saturation histogram was degenerate and the mask is all zero.
    pub degenerate: bool,
    /// Thumbnail pixel to level-0 pixel factor.
    pub scale_to_level0: f64,
    pub regions: Vec<Region>,
}

impl TissueMask {
    pub fn width(&self) -> u32 {
        self.mask.width
    }

    pub fn height(&self) -> u32 {
        self.mask.height
    }

    /// Mask + regions in one call.
    pub fn from_thumbnail(thumb: &Raster, scale_to_level0: f64, min_region_area: u64) -> Self {
        let mut m = binary_mask(thumb);
        m.scale_to_level0 = scale_to_level0;
        m.regions = label_components(&m.mask, min_region_area);
        m
    }

    /// Thumbnail with mask boundaries painted green.
    pub fn overlay(&self, thumb: &Raster) -> Raster {
        let mut out = thumb.clone();
        let (w, h) = (self.mask.width, self.mask.height);
        for y in 0..h {
            for x in 0..w {
                if self.mask.get(x, y) == 0 {
                    continue;
                }
                let edge = x == 0
                    || y == 0
                    || x + 1 == w
                    || y + 1 == h
                    || self.mask.get(x - 1, y) == 0
                    || self.mask.get(x + 1, y) == 0
                    || self.mask.get(x, y - 1) == 0
                    || self.mask.get(x, y + 1) == 0;
                if edge {
                    let i = (y as usize * w as usize + x as usize) * 3;
                    out.data_mut()[i..i + 3].copy_from_slice(&[0, 255, 0]);
                }
            }
        }
        out
    }

    pub fn write_qc_png(&self, thumb: &Raster, path: &Path) -> Result<(), RasterError> {
        self.overlay(thumb).write_png(path)
    }
}

/// Saturation > Otsu threshold, then one majority-smoothing pass. A
/// degenerate histogram yields an all-zero mask. Regions are left empty.
pub fn binary_mask(thumb: &Raster) -> TissueMask {
    let sat = saturation_channel(thumb);
    let (threshold, degenerate) = match otsu_threshold(&histogram(&sat)) {
        Ok(t) => (t, false),
        Err(OtsuError::DegenerateHistogram(b)) => (b, true),
        Err(OtsuError::EmptyHistogram) => (0, true),
    };
    let mask = if degenerate {
        BinaryMask::zeros(thumb.width(), thumb.height())
    } else {
        let raw = BinaryMask {
            width: thumb.width(),
            height: thumb.height(),
            data: sat.data().iter().map(|&s| (s > threshold) as u8).collect(),
        };
        majority_smooth(&raw)
    };
    TissueMask { mask, threshold, degenerate, scale_to_level0: 1.0, regions: Vec::new() }
}
