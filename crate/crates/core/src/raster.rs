//! In-memory 8-bit rasters, area resampling and PNG encoding.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("raster data length {len} does not match {width}x{height}x{channels}")]
    BadLength { width: u32, height: u32, channels: u8, len: usize },
    #[error("unsupported channel count {0} (expected 1 or 3)")]
    BadChannels(u8),
    #[error("crop {x},{y} {w}x{h} outside {width}x{height} raster")]
    CropOutOfBounds { x: u32, y: u32, w: u32, h: u32, width: u32, height: u32 },
    #[error("png encode: {0}")]
    Encode(#[from] png::EncodingError),
    #[error("png decode: {0}")]
    Decode(#[from] png::DecodingError),
    #[error("unsupported png color layout {0:?}")]
    PngLayout(png::ColorType),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Row-major 8-bit raster with 1 (gray) or 3 (RGB) interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    width: u32,
    height: u32,
    channels: u8,
    data: Vec<u8>,
}

impl Raster {
    pub fn new(width: u32, height: u32, channels: u8, data: Vec<u8>) -> Result<Self, RasterError> {
        if channels != 1 && channels != 3 {
            return Err(RasterError::BadChannels(channels));
        }
        let expected = width as usize * height as usize * channels as usize;
        if data.len() != expected {
            return Err(RasterError::BadLength { width, height, channels, len: data.len() });
        }
        Ok(Self { width, height, channels, data })
    }

    pub fn filled(width: u32, height: u32, pixel: &[u8]) -> Self {
        let channels = pixel.len() as u8;
        assert!(channels == 1 || channels == 3, "pixel must have 1 or 3 channels");
        let data = pixel.repeat(width as usize * height as usize);
        Self { width, height, channels, data }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn is_rgb(&self) -> bool {
        self.channels == 3
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> &[u8] {
        let c = self.channels as usize;
        let i = (y as usize * self.width as usize + x as usize) * c;
        &self.data[i..i + c]
    }

    /// Copies the sub-rectangle `[x, x+w) x [y, y+h)`.
    pub fn crop(&self, x: u32, y: u32, w: u32, h: u32) -> Result<Raster, RasterError> {
        if x as u64 + w as u64 > self.width as u64 || y as u64 + h as u64 > self.height as u64 {
            return Err(RasterError::CropOutOfBounds {
                x,
                y,
                w,
                h,
                width: self.width,
                height: self.height,
            });
        }
        let c = self.channels as usize;
        let row_len = w as usize * c;
        let mut data = Vec::with_capacity(row_len * h as usize);
        for row in y..y + h {
            let start = (row as usize * self.width as usize + x as usize) * c;
            data.extend_from_slice(&self.data[start..start + row_len]);
        }
        Ok(Raster { width: w, height: h, channels: self.channels, data })
    }

    pub fn write_png(&self, path: &Path) -> Result<(), RasterError> {
        let file = File::create(path)?;
        let mut w = BufWriter::new(file);
        self.encode_png(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn encode_png<W: Write>(&self, sink: W) -> Result<(), RasterError> {
        let mut enc = png::Encoder::new(sink, self.width, self.height);
        enc.set_color(if self.channels == 3 { png::ColorType::Rgb } else { png::ColorType::Grayscale });
        enc.set_depth(png::BitDepth::Eight);
        enc.set_compression(png::Compression::Fast);
        let mut writer = enc.write_header()?;
        writer.write_image_data(&self.data)?;
        writer.finish()?;
        Ok(())
    }

    /// Decodes an 8-bit PNG. Alpha is dropped; gray+alpha becomes gray.
    pub fn read_png(path: &Path) -> Result<Raster, RasterError> {
        let decoder = png::Decoder::new(BufReader::new(File::open(path)?));
        let mut reader = decoder.read_info()?;
        let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
        let info = reader.next_frame(&mut buf)?;
        buf.truncate(info.buffer_size());
        if info.bit_depth != png::BitDepth::Eight {
            return Err(RasterError::PngLayout(info.color_type));
        }
        let (channels, data) = match info.color_type {
            png::ColorType::Rgb => (3, buf),
            png::ColorType::Grayscale => (1, buf),
            png::ColorType::Rgba => (3, drop_alpha(&buf, 4)),
            png::ColorType::GrayscaleAlpha => (1, drop_alpha(&buf, 2)),
            other => return Err(RasterError::PngLayout(other)),
        };
        Raster::new(info.width, info.height, channels, data)
    }
}

fn drop_alpha(buf: &[u8], stride: usize) -> Vec<u8> {
    buf.chunks_exact(stride).flat_map(|px| px[..stride - 1].iter().copied()).collect()
}

/// Source pixels (index, overlap weight) covered by each output pixel when
/// output pixel `i` spans `[i * step, (i + 1) * step)` in source space.
fn axis_weights(src_len: u32, out_len: u32, step: f64) -> Vec<Vec<(usize, f64)>> {
    let src = src_len as f64;
    (0..out_len)
        .map(|i| {
            let start = i as f64 * step;
            let end = ((i + 1) as f64 * step).min(src);
            let first = start.floor() as usize;
            let last = (end.ceil() as usize).min(src_len as usize);
            (first..last)
                .filter_map(|j| {
                    let w = end.min(j as f64 + 1.0) - start.max(j as f64);
                    (w > 0.0).then_some((j, w))
                })
                .collect()
        })
        .collect()
}

/// Exact area averages (unrounded) on an explicit output grid.
fn area_means(src: &Raster, out_w: u32, out_h: u32, step_x: f64, step_y: f64) -> Vec<f64> {
    let wx = axis_weights(src.width, out_w, step_x);
    let wy = axis_weights(src.height, out_h, step_y);
    let c = src.channels as usize;
    let stride = src.width as usize * c;
    let mut out = Vec::with_capacity(out_w as usize * out_h as usize * c);
    let mut acc = vec![0.0f64; c];
    for ys in &wy {
        for xs in &wx {
            acc.iter_mut().for_each(|a| *a = 0.0);
            let mut total = 0.0;
            for &(sy, wyv) in ys {
                let row = &src.data[sy * stride..(sy + 1) * stride];
                for &(sx, wxv) in xs {
                    let w = wyv * wxv;
                    total += w;
                    let px = &row[sx * c..sx * c + c];
                    for (a, &v) in acc.iter_mut().zip(px) {
                        *a += w * v as f64;
                    }
                }
            }
            out.extend(acc.iter().map(|a| a / total));
        }
    }
    out
}

#[inline]
pub(crate) fn round_half_up(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Area-averaging downscale by `scale` in `(0, 1]`.
///
/// Output dims are `floor(dim * scale)` (at least 1); each output pixel is the
/// overlap-weighted mean of the source pixels under its footprint, rounded
/// half-up. `scale == 1.0` returns an identical copy.
pub fn resample_area(raster: &Raster, scale: f64) -> Raster {
    assert!(scale > 0.0 && scale <= 1.0, "resample scale must lie in (0, 1], got {scale}");
    if scale == 1.0 {
        return raster.clone();
    }
    let out_w = ((raster.width as f64 * scale).floor() as u32).max(1);
    let out_h = ((raster.height as f64 * scale).floor() as u32).max(1);
    let step = 1.0 / scale;
    let means = area_means(raster, out_w, out_h, step, step);
    Raster {
        width: out_w,
        height: out_h,
        channels: raster.channels,
        data: means.into_iter().map(round_half_up).collect(),
    }
}

/// Area-average onto an exact `out_w x out_h` grid that spans the whole
/// source, returning unrounded per-channel means (row-major, interleaved).
pub fn area_resize_means(raster: &Raster, out_w: u32, out_h: u32) -> Vec<f64> {
    let step_x = raster.width as f64 / out_w as f64;
    let step_y = raster.height as f64 / out_h as f64;
    area_means(raster, out_w, out_h, step_x, step_y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    fn random_raster(w: u32, h: u32, c: u8, seed: u64) -> Raster {
        let mut rng = SplitMix64::new(seed);
        let data = (0..w as usize * h as usize * c as usize).map(|_| rng.below(256) as u8).collect();
        Raster::new(w, h, c, data).unwrap()
    }

    #[test]
    fn identity_scale_is_byte_identical() {
        let r = random_raster(17, 9, 3, 1);
        assert_eq!(resample_area(&r, 1.0), r);
    }

    #[test]
    fn two_by_two_rounds_half_up() {
        let r = Raster::new(2, 2, 1, vec![0, 0, 255, 255]).unwrap();
        let out = resample_area(&r, 0.5);
        assert_eq!((out.width(), out.height()), (1, 1));
        assert_eq!(out.data(), &[128]);
    }

    #[test]
    fn quarter_scale_matches_block_mean_oracle() {
        for seed in 0..20 {
            let r = random_raster(32, 32, 3, seed);
            let out = resample_area(&r, 0.25);
            assert_eq!((out.width(), out.height()), (8, 8));
            for by in 0..8u32 {
                for bx in 0..8u32 {
                    for ch in 0..3usize {
                        let mut sum = 0u32;
                        for y in by * 4..by * 4 + 4 {
                            for x in bx * 4..bx * 4 + 4 {
                                sum += r.pixel(x, y)[ch] as u32;
                            }
                        }
                        // round-half-up of sum / 16 in integer arithmetic
                        let expected = ((2 * sum + 16) / 32) as u8;
                        assert_eq!(out.pixel(bx, by)[ch], expected);
                    }
                }
            }
        }
    }

    #[test]
    fn fractional_scale_output_dims() {
        let r = random_raster(269, 269, 3, 5);
        let out = resample_area(&r, 0.5 / 0.6);
        assert_eq!((out.width(), out.height()), (224, 224));
        let tiny = resample_area(&random_raster(3, 3, 1, 2), 0.1);
        assert_eq!((tiny.width(), tiny.height()), (1, 1));
    }

    #[test]
    fn crop_bounds() {
        let r = random_raster(10, 10, 3, 3);
        assert_eq!(r.crop(2, 3, 4, 5).unwrap().pixel(0, 0), r.pixel(2, 3));
        assert!(r.crop(8, 0, 3, 1).is_err());
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for c in [1u8, 3] {
            let r = random_raster(13, 7, c, c as u64);
            let p = dir.path().join(format!("t{c}.png"));
            r.write_png(&p).unwrap();
            assert_eq!(Raster::read_png(&p).unwrap(), r);
        }
    }

    proptest! {
        #[test]
        fn integer_factor_preserves_mean(factor in 1u32..5, bw in 1u32..8, bh in 1u32..8, seed in any::<u64>()) {
            let r = random_raster(bw * factor, bh * factor, 1, seed);
            let out = resample_area(&r, 1.0 / factor as f64);
            let mean = |x: &Raster| x.data().iter().map(|&v| v as f64).sum::<f64>() / x.data().len() as f64;
            prop_assert!((mean(&r) - mean(&out)).abs() <= 1.0);
        }
    }
}
