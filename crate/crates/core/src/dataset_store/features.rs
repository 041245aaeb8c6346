//! Per-slide HDF5 feature files.
//!
//! Layout: dataset `features` (float32 LE, N x D), dataset `coords_xy`
//! (int32 LE, N x 2, level-0 top-left pixel of each tile), and root
//! attributes `slide_id`, `embedder_id` (UTF-8 strings), `mpp` (float64),
//! `tile_size` (int64).

use std::path::Path;

use hdf5::types::{FloatSize, IntSize, TypeDescriptor, VarLenAscii, VarLenUnicode};
use hdf5::datatype::ByteOrder;
use hdf5::{Dataset, File};
use thiserror::Error;

pub const FEATURES: &str = "features";
pub const COORDS: &str = "coords_xy";

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("missing dataset \"{0}\"")]
    MissingDataset(&'static str),
    #[error("missing attribute \"{0}\"")]
    MissingAttribute(&'static str),
    #[error("dataset \"{dataset}\" has dtype {found}, expected {expected}")]
    Dtype { dataset: &'static str, found: String, expected: &'static str },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite feature value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
    #[error("hdf5: {0}")]
    Hdf5(#[from] hdf5::Error),
}

/// N x D tile embeddings for one slide with matching tile coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBag {
    pub slide_id: String,
    pub embedder_id: String,
    pub mpp: f64,
    pub tile_size: i64,
    pub dim: usize,
    /// Row-major N x D.
    pub features: Vec<f32>,
    /// (x, y) per row, strictly increasing in (y, x).
    pub coords: Vec<[i32; 2]>,
}

impl FeatureBag {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        let n = self.coords.len();
        if n == 0 {
            return Err(FeatureError::InvariantViolation("bag has no rows".into()));
        }
        if self.dim == 0 {
            return Err(FeatureError::InvariantViolation("feature dimension is zero".into()));
        }
        if self.features.len() != n * self.dim {
            return Err(FeatureError::ShapeMismatch(format!(
                "{} feature values for {n} coords x D={}",
                self.features.len(),
                self.dim
            )));
        }
        if let Some(i) = self.features.iter().position(|v| !v.is_finite()) {
            return Err(FeatureError::NonFinite { row: i / self.dim, col: i % self.dim });
        }
        for (i, pair) in self.coords.windows(2).enumerate() {
            if (pair[0][1], pair[0][0]) >= (pair[1][1], pair[1][0]) {
                return Err(FeatureError::InvariantViolation(format!(
                    "coords rows {i} and {} not strictly increasing in (y, x)",
                    i + 1
                )));
            }
        }
        Ok(())
    }
}

fn describe(ds: &Dataset) -> Result<(TypeDescriptor, ByteOrder), FeatureError> {
    let dt = ds.dtype()?;
    Ok((dt.to_descriptor()?, dt.byte_order()))
}

fn string_attr(file: &File, name: &'static str) -> Result<String, FeatureError> {
    let attr = file.attr(name).map_err(|_| FeatureError::MissingAttribute(name))?;
    match attr.dtype()?.to_descriptor()? {
        TypeDescriptor::VarLenAscii => Ok(attr.read_scalar::<VarLenAscii>()?.as_str().to_owned()),
        _ => Ok(attr.read_scalar::<VarLenUnicode>()?.as_str().to_owned()),
    }
}

/// Writes `bag` to `path`, replacing any existing file. Object timestamps
/// are disabled so identical bags give identical bytes.
pub fn write_features(path: &Path, bag: &FeatureBag) -> Result<(), FeatureError> {
    bag.validate()?;
    let n = bag.len();
    let file = File::with_options().with_fcpl(|p| p.obj_track_times(false)).create(path)?;
    file.new_dataset::<f32>().shape((n, bag.dim)).create(FEATURES)?.write_raw(&bag.features)?;
    let flat: Vec<i32> = bag.coords.iter().flat_map(|c| c.iter().copied()).collect();
    file.new_dataset::<i32>().shape((n, 2)).create(COORDS)?.write_raw(&flat)?;

    let text = |s: &str| -> Result<VarLenUnicode, FeatureError> {
        s.parse().map_err(|_| FeatureError::InvariantViolation(format!("attribute value {s:?} is not valid text")))
    };
    file.new_attr::<VarLenUnicode>().create("slide_id")?.write_scalar(&text(&bag.slide_id)?)?;
    file.new_attr::<VarLenUnicode>().create("embedder_id")?.write_scalar(&text(&bag.embedder_id)?)?;
    file.new_attr::<f64>().create("mpp")?.write_scalar(&bag.mpp)?;
    file.new_attr::<i64>().create("tile_size")?.write_scalar(&bag.tile_size)?;
    file.close()?;
    Ok(())
}

/// Reads and revalidates a feature file. No dtype conversion is performed:
/// `features` must be float32 LE and `coords_xy` int32 LE.
pub fn read_features(path: &Path) -> Result<FeatureBag, FeatureError> {
    let file = File::open(path)?;
    let feats = file.dataset(FEATURES).map_err(|_| FeatureError::MissingDataset(FEATURES))?;
    let coords = file.dataset(COORDS).map_err(|_| FeatureError::MissingDataset(COORDS))?;

    match describe(&feats)? {
        (TypeDescriptor::Float(FloatSize::U4), ByteOrder::LittleEndian) => {}
        (d, o) => {
            return Err(FeatureError::Dtype { dataset: FEATURES, found: format!("{d:?} {o:?}"), expected: "float32 LE" })
        }
    }
    match describe(&coords)? {
        (TypeDescriptor::Integer(IntSize::U4), ByteOrder::LittleEndian) => {}
        (d, o) => {
            return Err(FeatureError::Dtype { dataset: COORDS, found: format!("{d:?} {o:?}"), expected: "int32 LE" })
        }
    }

    let fshape = feats.shape();
    let cshape = coords.shape();
    if fshape.len() != 2 {
        return Err(FeatureError::ShapeMismatch(format!("features has rank {}, expected 2", fshape.len())));
    }
    if cshape.len() != 2 || cshape[1] != 2 {
        return Err(FeatureError::ShapeMismatch(format!("coords_xy has shape {cshape:?}, expected [N, 2]")));
    }
    if fshape[0] != cshape[0] {
        return Err(FeatureError::ShapeMismatch(format!(
            "features has {} rows but coords_xy has {}",
            fshape[0], cshape[0]
        )));
    }

    let features: Vec<f32> = feats.read_raw()?;
    let flat: Vec<i32> = coords.read_raw()?;
    let bag = FeatureBag {
        slide_id: string_attr(&file, "slide_id")?,
        embedder_id: string_attr(&file, "embedder_id")?,
        mpp: file.attr("mpp").map_err(|_| FeatureError::MissingAttribute("mpp"))?.read_scalar::<f64>()?,
        tile_size: file
            .attr("tile_size")
            .map_err(|_| FeatureError::MissingAttribute("tile_size"))?
            .read_scalar::<i64>()?,
        dim: fshape[1],
        features,
        coords: flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect(),
    };
    bag.validate()?;
    Ok(bag)
}
