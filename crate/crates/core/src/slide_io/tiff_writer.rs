//! Minimal baseline TIFF writer for tiled, uncompressed, 8-bit RGB pyramids.
//!
//! One IFD per pyramid level, finest first. Levels after the first carry
//! `NewSubfileType = 1` (reduced resolution). Resolution is written twice:
//! as `XResolution`/`YResolution` in pixels per centimeter, and as an exact
//! `mpp=<value>` token in `ImageDescription`.

use std::fs::File;
use std::io::{self, BufWriter, Seek, SeekFrom, Write};
use std::path::Path;

use crate::raster::Raster;

const SHORT: u16 = 3;
const LONG: u16 = 4;
const RATIONAL: u16 = 5;
const ASCII: u16 = 2;

enum Value {
    Short(Vec<u16>),
    Long(Vec<u32>),
    Rational(u32, u32),
    Ascii(String),
}

impl Value {
    fn kind_count(&self) -> (u16, u32) {
        match self {
            Value::Short(v) => (SHORT, v.len() as u32),
            Value::Long(v) => (LONG, v.len() as u32),
            Value::Rational(..) => (RATIONAL, 1),
            Value::Ascii(s) => (ASCII, s.len() as u32 + 1),
        }
    }

    fn bytes(&self) -> Vec<u8> {
        match self {
            Value::Short(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            Value::Long(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            Value::Rational(n, d) => n.to_le_bytes().into_iter().chain(d.to_le_bytes()).collect(),
            Value::Ascii(s) => s.bytes().chain(std::iter::once(0)).collect(),
        }
    }
}

/// One pyramid level to write.
pub struct LevelImage<'a> {
    pub raster: &'a Raster,
    pub mpp: f64,
}

/// Pixels-per-centimeter as a TIFF rational that fits in u32.
fn resolution_rational(mpp: f64) -> (u32, u32) {
    // ppcm = 10_000 / mpp = (10_000 * 1e5) / (mpp * 1e5)
    let den = (mpp * 1e5).round().clamp(1.0, u32::MAX as f64) as u32;
    (1_000_000_000, den)
}

fn to_u32(v: u64) -> io::Result<u32> {
    u32::try_from(v).map_err(|_| io::Error::other("synthetic TIFF exceeds 4 GiB"))
}

pub fn write_pyramid_tiff(path: &Path, levels: &[LevelImage<'_>], tile: u32, description: &str) -> io::Result<()> {
    assert!(tile > 0 && tile % 16 == 0, "TIFF tile size must be a positive multiple of 16");
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(b"II")?;
    w.write_all(&42u16.to_le_bytes())?;
    // Offset of the first IFD, patched below.
    w.write_all(&0u32.to_le_bytes())?;
    let mut next_ptr_pos: u64 = 4;

    for (k, level) in levels.iter().enumerate() {
        let r = level.raster;
        assert!(r.is_rgb(), "pyramid levels must be RGB");
        let (width, height) = (r.width(), r.height());
        let across = width.div_ceil(tile);
        let down = height.div_ceil(tile);
        let tile_bytes = tile as usize * tile as usize * 3;
        let mut offsets = Vec::with_capacity((across * down) as usize);
        let mut buf = vec![0u8; tile_bytes];
        for ty in 0..down {
            for tx in 0..across {
                buf.iter_mut().for_each(|b| *b = 0);
                let x0 = tx * tile;
                let y0 = ty * tile;
                let cw = tile.min(width - x0) as usize;
                let ch = tile.min(height - y0);
                for row in 0..ch {
                    let src = ((y0 + row) as usize * width as usize + x0 as usize) * 3;
                    let dst = row as usize * tile as usize * 3;
                    buf[dst..dst + cw * 3].copy_from_slice(&r.data()[src..src + cw * 3]);
                }
                offsets.push(to_u32(w.stream_position()?)?);
                w.write_all(&buf)?;
            }
        }

        let (rn, rd) = resolution_rational(level.mpp);
        let entries: Vec<(u16, Value)> = vec![
            (254, Value::Long(vec![u32::from(k > 0)])),
            (256, Value::Long(vec![width])),
            (257, Value::Long(vec![height])),
            (258, Value::Short(vec![8, 8, 8])),
            (259, Value::Short(vec![1])),
            (262, Value::Short(vec![2])),
            (270, Value::Ascii(format!("{description}|mpp={}|level={k}", level.mpp))),
            (277, Value::Short(vec![3])),
            (282, Value::Rational(rn, rd)),
            (283, Value::Rational(rn, rd)),
            (284, Value::Short(vec![1])),
            (296, Value::Short(vec![3])),
            (322, Value::Long(vec![tile])),
            (323, Value::Long(vec![tile])),
            (324, Value::Long(offsets)),
            (325, Value::Long(vec![tile_bytes as u32; (across * down) as usize])),
        ];

        // IFDs start on a word boundary.
        if w.stream_position()? % 2 == 1 {
            w.write_all(&[0])?;
        }
        let ifd_pos = w.stream_position()?;
        let ifd_len = 2 + 12 * entries.len() as u64 + 4;
        let mut overflow_pos = ifd_pos + ifd_len;
        let mut ifd = Vec::with_capacity(ifd_len as usize);
        let mut overflow = Vec::new();
        ifd.extend_from_slice(&(entries.len() as u16).to_le_bytes());
        for (tag, value) in &entries {
            let (kind, count) = value.kind_count();
            ifd.extend_from_slice(&tag.to_le_bytes());
            ifd.extend_from_slice(&kind.to_le_bytes());
            ifd.extend_from_slice(&count.to_le_bytes());
            let mut bytes = value.bytes();
            if bytes.len() <= 4 {
                bytes.resize(4, 0);
                ifd.extend_from_slice(&bytes);
            } else {
                ifd.extend_from_slice(&to_u32(overflow_pos)?.to_le_bytes());
                if bytes.len() % 2 == 1 {
                    bytes.push(0);
                }
                overflow_pos += bytes.len() as u64;
                overflow.extend_from_slice(&bytes);
            }
        }
        let this_next_ptr = ifd_pos + ifd_len - 4;
        ifd.extend_from_slice(&0u32.to_le_bytes());
        w.write_all(&ifd)?;
        w.write_all(&overflow)?;
        let end = w.stream_position()?;

        w.seek(SeekFrom::Start(next_ptr_pos))?;
        w.write_all(&to_u32(ifd_pos)?.to_le_bytes())?;
        w.seek(SeekFrom::Start(end))?;
        next_ptr_pos = this_next_ptr;
    }
    w.flush()
}
