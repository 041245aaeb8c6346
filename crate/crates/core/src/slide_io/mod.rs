//! Pyramidal slide access at a requested microns-per-pixel resolution.
//!
//! Region origins are always level-0 pixel coordinates; region sizes are in
//! the pixel space of the level being read.

mod synth;
mod tiff_writer;

pub use synth::{synth_slide, BlobShape, BlobSpec, SynthSpec};
pub use tiff_writer::{write_pyramid_tiff, LevelImage};

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use thiserror::Error;
use tiff::decoder::{Decoder, DecodingResult, Limits};
use tiff::tags::Tag;
use tiff::ColorType;

use crate::raster::{resample_area, Raster};

#[derive(Debug, Error)]
pub enum SlideError {
    #[error("unsupported slide format: {0}")]
    UnsupportedFormat(String),
    #[error("no microns-per-pixel metadata in {0}")]
    MissingResolutionMetadata(PathBuf),
    #[error("corrupt pyramid: {0}")]
    CorruptPyramid(String),
    #[error("region {x},{y} {w}x{h} (level px) outside level {level} ({width}x{height})")]
    OutOfBounds { level: usize, x: u64, y: u64, w: u32, h: u32, width: u32, height: u32 },
    #[error("invalid synthetic slide spec: {0}")]
    InvalidSpec(String),
    #[error("tiff decode: {0}")]
    Decode(#[from] tiff::TiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PyramidLevel {
    pub index: usize,
    pub width: u32,
    pub height: u32,
    pub mpp: f64,
    /// Ratio of this level's mpp to level 0's.
    pub downsample: f64,
    ifd: usize,
}

impl PyramidLevel {
    /// Level-0 coordinate to this level's pixel grid.
    pub fn from_level0(&self, v: u64) -> u64 {
        if self.downsample == 1.0 {
            v
        } else {
            (v as f64 / self.downsample + 1e-9).floor() as u64
        }
    }

    pub fn to_level0(&self, v: u64) -> u64 {
        (v as f64 * self.downsample).round() as u64
    }
}

/// Result of [`SlideSource::level_for_mpp`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelChoice {
    pub level: usize,
    /// `level_mpp / effective_mpp`, always in `(0, 1]`.
    pub scale: f64,
    pub effective_mpp: f64,
    /// Target was finer than level 0; no upsampling was done.
    pub degraded: bool,
}

type TiffDecoder = Decoder<BufReader<File>>;

/// Immutable handle to a pyramidal slide. Reads are stateless and may be
/// issued concurrently; decoders are pooled internally.
pub struct SlideSource {
    path: PathBuf,
    slide_id: String,
    level0_mpp: f64,
    levels: Vec<PyramidLevel>,
    layout: Vec<PixelLayout>,
    pool: Mutex<Vec<TiffDecoder>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum PixelLayout {
    Rgb,
    Rgba,
    Gray,
}

impl PixelLayout {
    fn samples(self) -> usize {
        match self {
            PixelLayout::Rgb => 3,
            PixelLayout::Rgba => 4,
            PixelLayout::Gray => 1,
        }
    }
}

impl std::fmt::Debug for SlideSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SlideSource")
            .field("path", &self.path)
            .field("slide_id", &self.slide_id)
            .field("level0_mpp", &self.level0_mpp)
            .field("levels", &self.levels)
            .finish()
    }
}

/// Extracts `mpp=<v>` / `MPP = <v>` from an image description.
fn mpp_from_description(desc: &str) -> Option<f64> {
    let lower = desc.to_ascii_lowercase();
    let mut rest = lower.as_str();
    while let Some(pos) = rest.find("mpp") {
        let tail = rest[pos + 3..].trim_start();
        if let Some(tail) = tail.strip_prefix('=') {
            let tail = tail.trim_start();
            let end = tail
                .find(|c: char| !(c.is_ascii_digit() || matches!(c, '.' | 'e' | '-' | '+')))
                .unwrap_or(tail.len());
            if let Ok(v) = tail[..end].parse::<f64>() {
                if v.is_finite() && v > 0.0 {
                    return Some(v);
                }
            }
        }
        rest = &rest[pos + 3..];
    }
    None
}

/// Pixels-per-unit as an exact (numerator, denominator) pair.
fn resolution_ratio(v: tiff::decoder::ifd::Value) -> Option<(f64, f64)> {
    use tiff::decoder::ifd::Value;
    match v {
        Value::Rational(n, d) if n > 0 && d > 0 => Some((n as f64, d as f64)),
        Value::Float(f) if f > 0.0 => Some((f as f64, 1.0)),
        Value::Double(f) if f > 0.0 => Some((f, 1.0)),
        _ => None,
    }
}

/// mpp of the current IFD: explicit description token first, then the
/// resolution tags in centimeter or inch units.
fn page_mpp(dec: &mut TiffDecoder) -> Result<Option<f64>, SlideError> {
    if let Some(tiff::decoder::ifd::Value::Ascii(desc)) = dec.find_tag(Tag::ImageDescription)? {
        if let Some(mpp) = mpp_from_description(&desc) {
            return Ok(Some(mpp));
        }
    }
    let Some((num, den)) = dec.find_tag(Tag::XResolution)?.and_then(resolution_ratio) else {
        return Ok(None);
    };
    // TIFF's default resolution unit is the inch.
    let microns_per_unit = match dec.find_tag_unsigned::<u16>(Tag::ResolutionUnit)?.unwrap_or(2) {
        2 => 25_400.0,
        3 => 10_000.0,
        _ => return Ok(None),
    };
    let mpp = microns_per_unit * den / num;
    Ok((mpp.is_finite() && mpp > 0.0).then_some(mpp))
}

fn page_layout(dec: &mut TiffDecoder) -> Result<Option<PixelLayout>, SlideError> {
    let planar = dec.find_tag_unsigned::<u16>(Tag::PlanarConfiguration)?.unwrap_or(1);
    if planar != 1 {
        return Ok(None);
    }
    Ok(match dec.colortype()? {
        ColorType::RGB(8) => Some(PixelLayout::Rgb),
        ColorType::RGBA(8) => Some(PixelLayout::Rgba),
        ColorType::Gray(8) => Some(PixelLayout::Gray),
        _ => None,
    })
}

fn new_decoder(path: &Path) -> Result<TiffDecoder, SlideError> {
    let file = File::open(path)?;
    Ok(Decoder::new(BufReader::new(file))?.with_limits(Limits::unlimited()))
}

/// Opens a pyramidal TIFF (including synthetic slides written by
/// [`synth_slide`]) and enumerates its levels.
pub fn open_slide(path: &Path) -> Result<SlideSource, SlideError> {
    let mut magic = [0u8; 4];
    File::open(path)?
        .read_exact(&mut magic)
        .map_err(|_| SlideError::UnsupportedFormat(format!("{}: file too short", path.display())))?;
    if !matches!(&magic, b"II*\0" | b"MM\0*" | b"II+\0" | b"MM\0+") {
        return Err(SlideError::UnsupportedFormat(format!("{}: not a TIFF file", path.display())));
    }
    let mut dec = new_decoder(path).map_err(|e| match e {
        SlideError::Decode(e) => SlideError::UnsupportedFormat(e.to_string()),
        other => other,
    })?;

    let mut levels: Vec<PyramidLevel> = Vec::new();
    let mut layout = Vec::new();
    let mut ifd = 0usize;
    loop {
        if ifd > 0 {
            if !dec.more_images() {
                break;
            }
            dec.next_image()?;
        }
        let (width, height) = dec.dimensions()?;
        let subfile = dec.find_tag_unsigned::<u32>(Tag::NewSubfileType)?.unwrap_or(0);
        let page_layout = page_layout(&mut dec)?;

        if ifd == 0 {
            let px = page_layout.ok_or_else(|| {
                SlideError::UnsupportedFormat(format!("{}: level 0 is not 8-bit RGB/RGBA/gray chunky", path.display()))
            })?;
            let mpp = page_mpp(&mut dec)?.ok_or_else(|| SlideError::MissingResolutionMetadata(path.to_path_buf()))?;
            if width == 0 || height == 0 {
                return Err(SlideError::CorruptPyramid("level 0 has zero size".into()));
            }
            levels.push(PyramidLevel { index: 0, width, height, mpp, downsample: 1.0, ifd });
            layout.push(px);
        } else {
            let prev = *levels.last().unwrap();
            let reduced = subfile & 1 == 1 || subfile == 0;
            // Pages that are not smaller in both axes (label, macro images) are not levels.
            if reduced && width < prev.width && height < prev.height && width > 0 && height > 0 {
                if let Some(px) = page_layout {
                    let base = levels[0];
                    let mpp = match page_mpp(&mut dec)? {
                        Some(m) => m,
                        None => base.mpp * base.width as f64 / width as f64,
                    };
                    let downsample = mpp / base.mpp;
                    for (full, lvl, axis) in [(base.width, width, "width"), (base.height, height, "height")] {
                        let measured = full as f64 / lvl as f64;
                        // 1% plus one pixel of rounding slack.
                        if (measured / downsample - 1.0).abs() > 0.01 + 1.0 / lvl as f64 {
                            return Err(SlideError::CorruptPyramid(format!(
                                "level {} {axis} {lvl} implies downsample {measured:.4}, mpp implies {downsample:.4}",
                                levels.len()
                            )));
                        }
                    }
                    if mpp <= prev.mpp {
                        return Err(SlideError::CorruptPyramid(format!(
                            "level {} mpp {mpp} not coarser than previous {}",
                            levels.len(),
                            prev.mpp
                        )));
                    }
                    levels.push(PyramidLevel { index: levels.len(), width, height, mpp, downsample, ifd });
                    layout.push(px);
                }
            }
        }
        ifd += 1;
    }

    let slide_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "slide".to_string());
    Ok(SlideSource {
        path: path.to_path_buf(),
        slide_id,
        level0_mpp: levels[0].mpp,
        levels,
        layout,
        pool: Mutex::new(vec![dec]),
    })
}

impl SlideSource {
    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn slide_id(&self) -> &str {
        &self.slide_id
    }

    pub fn level0_mpp(&self) -> f64 {
        self.level0_mpp
    }

    pub fn levels(&self) -> &[PyramidLevel] {
        &self.levels
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.levels[0].width, self.levels[0].height)
    }

    /// Coarsest level that is at least as fine as `target_mpp`; never upsamples.
    pub fn level_for_mpp(&self, target_mpp: f64) -> LevelChoice {
        assert!(target_mpp > 0.0, "target mpp must be positive");
        let limit = target_mpp * (1.0 + 1e-3);
        match self.levels.iter().rev().find(|l| l.mpp <= limit) {
            Some(l) => LevelChoice {
                level: l.index,
                scale: (l.mpp / target_mpp).min(1.0),
                effective_mpp: target_mpp,
                degraded: false,
            },
            None => LevelChoice { level: 0, scale: 1.0, effective_mpp: self.level0_mpp, degraded: true },
        }
    }

    fn with_decoder<T>(&self, f: impl FnOnce(&mut TiffDecoder) -> Result<T, SlideError>) -> Result<T, SlideError> {
        let pooled = self.pool.lock().unwrap().pop();
        let mut dec = match pooled {
            Some(d) => d,
            None => new_decoder(&self.path)?,
        };
        let out = f(&mut dec);
        if out.is_ok() {
            self.pool.lock().unwrap().push(dec);
        }
        out
    }

    /// Exact stored pixels of `level` starting at level-0 `origin`, `size`
    /// measured in level pixels. Always returns RGB.
    pub fn read_region(&self, level: usize, origin: (u64, u64), size: (u32, u32)) -> Result<Raster, SlideError> {
        let lvl = *self
            .levels
            .get(level)
            .ok_or_else(|| SlideError::CorruptPyramid(format!("no level {level}")))?;
        self.read_level_region(level, (lvl.from_level0(origin.0), lvl.from_level0(origin.1)), size)
    }

    /// Like [`read_region`](Self::read_region) with the origin already in
    /// the level's own pixel grid.
    pub fn read_level_region(&self, level: usize, origin: (u64, u64), size: (u32, u32)) -> Result<Raster, SlideError> {
        let lvl = *self
            .levels
            .get(level)
            .ok_or_else(|| SlideError::CorruptPyramid(format!("no level {level}")))?;
        let (lx, ly) = origin;
        let (w, h) = size;
        if w == 0 || h == 0 || lx + w as u64 > lvl.width as u64 || ly + h as u64 > lvl.height as u64 {
            return Err(SlideError::OutOfBounds {
                level,
                x: lx,
                y: ly,
                w,
                h,
                width: lvl.width,
                height: lvl.height,
            });
        }
        let (lx, ly) = (lx as u32, ly as u32);
        let layout = self.layout[level];
        let samples = layout.samples();
        let mut out = vec![0u8; w as usize * h as usize * 3];

        self.with_decoder(|dec| {
            dec.seek_to_image(lvl.ifd)?;
            let (cw, ch) = dec.chunk_dimensions();
            let across = lvl.width.div_ceil(cw);
            for cy in ly / ch..=(ly + h - 1) / ch {
                for cx in lx / cw..=(lx + w - 1) / cw {
                    let index = cy * across + cx;
                    let (dw, _dh) = dec.chunk_data_dimensions(index);
                    let bytes = match dec.read_chunk(index)? {
                        DecodingResult::U8(b) => b,
                        _ => return Err(SlideError::UnsupportedFormat("non 8-bit chunk".into())),
                    };
                    let (x0, y0) = (cx * cw, cy * ch);
                    let ix0 = lx.max(x0);
                    let ix1 = (lx + w).min(x0 + dw);
                    let iy0 = ly.max(y0);
                    let iy1 = (ly + h).min(y0 + ch);
                    for y in iy0..iy1 {
                        let src_row = (y - y0) as usize * dw as usize;
                        let dst_row = (y - ly) as usize * w as usize;
                        for x in ix0..ix1 {
                            let s = (src_row + (x - x0) as usize) * samples;
                            let d = (dst_row + (x - lx) as usize) * 3;
                            match layout {
                                PixelLayout::Gray => out[d..d + 3].fill(bytes[s]),
                                _ => out[d..d + 3].copy_from_slice(&bytes[s..s + 3]),
                            }
                        }
                    }
                }
            }
            Ok(())
        })?;
        Ok(Raster::new(w, h, 3, out).expect("sized buffer"))
    }

    /// Whole-slide raster at `target_mpp` (>= level-0 mpp) plus the factor
    /// mapping thumbnail pixels to level-0 pixels.
    pub fn thumbnail(&self, target_mpp: f64) -> Result<(Raster, f64), SlideError> {
        assert!(target_mpp >= self.level0_mpp * (1.0 - 1e-9), "thumbnail mpp must be >= level-0 mpp");
        let choice = self.level_for_mpp(target_mpp);
        let lvl = self.levels[choice.level];
        let full = self.read_region(choice.level, (0, 0), (lvl.width, lvl.height))?;
        let thumb = resample_area(&full, choice.scale);
        Ok((thumb, choice.effective_mpp / self.level0_mpp))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(width: u32, height: u32, mpp: f64) -> SynthSpec {
        SynthSpec { width, height, mpp, seed: 3, blobs: vec![], levels: None, tile: None }
    }

    fn write(dir: &Path, name: &str, s: &SynthSpec) -> SlideSource {
        let p = dir.join(name);
        synth_slide(s, &p).unwrap();
        open_slide(&p).unwrap()
    }

    #[test]
    fn description_parser() {
        assert_eq!(mpp_from_description("Aperio Image|AppMag = 20|MPP = 0.4990"), Some(0.499));
        assert_eq!(mpp_from_description("x|mpp=0.25|level=0"), Some(0.25));
        assert_eq!(mpp_from_description("no resolution here"), None);
    }

    #[test]
    fn synthetic_pyramid_levels() {
        let dir = tempfile::tempdir().unwrap();
        let slide = write(dir.path(), "big.tiff", &spec(4096, 4096, 0.5));
        let mpps: Vec<f64> = slide.levels().iter().map(|l| l.mpp).collect();
        assert_eq!(mpps, vec![0.5, 1.0, 2.0]);
        assert_eq!(slide.slide_id(), "big");
        for l in slide.levels() {
            assert!((l.downsample - l.mpp / slide.level0_mpp()).abs() / l.downsample < 0.01);
        }
    }

    #[test]
    fn single_level_slide() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = spec(256, 256, 0.25);
        s.levels = Some(1);
        let slide = write(dir.path(), "one.tiff", &s);
        assert_eq!(slide.levels().len(), 1);
        assert_eq!(slide.level0_mpp(), 0.25);
    }

    #[test]
    fn missing_resolution_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nores.tiff");
        let raster = Raster::filled(32, 32, &[1, 2, 3]);
        let mut enc = tiff::encoder::TiffEncoder::new(File::create(&p).unwrap()).unwrap();
        enc.write_image::<tiff::encoder::colortype::RGB8>(32, 32, raster.data()).unwrap();
        drop(enc);
        // The encoder writes 1/1 with unit "none" by default.
        assert!(matches!(open_slide(&p), Err(SlideError::MissingResolutionMetadata(_))));
    }

    #[test]
    fn non_tiff_is_unsupported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.tiff");
        std::fs::write(&p, b"PNG not really").unwrap();
        assert!(matches!(open_slide(&p), Err(SlideError::UnsupportedFormat(_))));
    }

    #[test]
    fn inconsistent_levels_are_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.tiff");
        let l0 = Raster::filled(256, 256, &[9, 9, 9]);
        let l1 = Raster::filled(128, 64, &[9, 9, 9]);
        write_pyramid_tiff(
            &p,
            &[LevelImage { raster: &l0, mpp: 0.5 }, LevelImage { raster: &l1, mpp: 1.0 }],
            16,
            "t",
        )
        .unwrap();
        assert!(matches!(open_slide(&p), Err(SlideError::CorruptPyramid(_))));
    }

    #[test]
    fn level_selection_rule() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = spec(1024, 1024, 0.25);
        s.levels = Some(3);
        let slide = write(dir.path(), "l.tiff", &s);
        assert_eq!(slide.levels().iter().map(|l| l.mpp).collect::<Vec<_>>(), vec![0.25, 0.5, 1.0]);

        let c = slide.level_for_mpp(0.5);
        assert_eq!((c.level, c.scale, c.effective_mpp, c.degraded), (1, 1.0, 0.5, false));
        let c = slide.level_for_mpp(0.6);
        assert_eq!(c.level, 1);
        assert!((c.scale - 0.8333333333333334).abs() < 1e-12);
        assert_eq!(c.effective_mpp, 0.6);
        let c = slide.level_for_mpp(0.1);
        assert_eq!((c.level, c.scale, c.effective_mpp, c.degraded), (0, 1.0, 0.25, true));
    }

    #[test]
    fn reads_are_exact_and_bounded() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = spec(256, 256, 0.5);
        s.levels = Some(3);
        s.tile = Some(16);
        s.blobs = vec![BlobSpec::ellipse(128.0, 128.0, 60.0, 40.0)];
        let p = dir.path().join("r.tiff");
        synth_slide(&s, &p).unwrap();
        let slide = open_slide(&p).unwrap();
        let levels = synth::render_levels(&s);

        let lvl2 = slide.levels()[2];
        assert_eq!((lvl2.width, lvl2.height), (64, 64));
        let full = slide.read_region(2, (0, 0), (64, 64)).unwrap();
        assert_eq!(full, levels[2]);

        let px = slide.read_region(0, (0, 0), (1, 1)).unwrap();
        assert_eq!(px.data(), levels[0].pixel(0, 0));

        // Origins are level-0 coordinates: (40, 24) on level 1 is (20, 12).
        let sub = slide.read_region(1, (40, 24), (30, 17)).unwrap();
        assert_eq!(sub, levels[1].crop(20, 12, 30, 17).unwrap());
        // Reads are stateless.
        assert_eq!(slide.read_region(1, (40, 24), (30, 17)).unwrap(), sub);

        assert!(matches!(slide.read_region(2, (256, 0), (1, 1)), Err(SlideError::OutOfBounds { .. })));
        assert!(matches!(slide.read_region(0, (250, 0), (10, 1)), Err(SlideError::OutOfBounds { .. })));
    }

    #[test]
    fn thumbnail_dims_and_scale() {
        let dir = tempfile::tempdir().unwrap();
        let slide = write(dir.path(), "t.tiff", &spec(4096, 4096, 0.5));
        let (thumb, scale) = slide.thumbnail(8.0).unwrap();
        assert_eq!((thumb.width(), thumb.height(), scale), (256, 256, 16.0));

        let mut s = spec(256, 256, 0.5);
        s.levels = Some(2);
        let p = dir.path().join("small.tiff");
        synth_slide(&s, &p).unwrap();
        let small = open_slide(&p).unwrap();
        let (thumb, scale) = small.thumbnail(0.5).unwrap();
        assert_eq!(scale, 1.0);
        assert_eq!(thumb, synth::render_levels(&s)[0]);
    }

    #[test]
    fn coordinate_round_trip_within_one_pixel() {
        let dir = tempfile::tempdir().unwrap();
        let slide = write(dir.path(), "c.tiff", &spec(4096, 4096, 0.5));
        for l in slide.levels() {
            for v in [0u64, 1, 7, 333, 1024, 4095] {
                let back = l.to_level0(l.from_level0(v));
                assert!((back as f64 - v as f64).abs() < l.downsample.max(1.0));
                assert!(back <= v);
            }
        }
    }

    #[test]
    fn concurrent_reads_agree() {
        use rayon::prelude::*;
        let dir = tempfile::tempdir().unwrap();
        let mut s = spec(512, 512, 0.5);
        s.blobs = vec![BlobSpec::ellipse(256.0, 256.0, 100.0, 100.0)];
        let p = dir.path().join("p.tiff");
        synth_slide(&s, &p).unwrap();
        let slide = open_slide(&p).unwrap();
        let serial: Vec<Raster> = (0..16u64).map(|i| slide.read_region(0, (i * 20, i * 10), (64, 64)).unwrap()).collect();
        let parallel: Vec<Raster> =
            (0..16u64).into_par_iter().map(|i| slide.read_region(0, (i * 20, i * 10), (64, 64)).unwrap()).collect();
        assert_eq!(serial, parallel);
    }
}
