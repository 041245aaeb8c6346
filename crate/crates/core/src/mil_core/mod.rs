//! Slide-level MIL models over feature bags.
//!
//! Three backbones share one head layout: `SlideAve` (column mean),
//! `SlideMax` (column max) and gated-attention `Abmil`:
//!
//! ```text
//! score_k = w . (tanh(V h_k) * sigmoid(U h_k))
//! a       = softmax(score)
//! z       = sum_k a_k h_k
//! out_t   = W_t z + b_t        (one head per task)
//! ```
//!
//! Everything is generic over [`Real`] so the same code trains in f32 and is
//! gradient-checked in f64.

mod adam;
mod checkpoint;
mod loss;
mod model;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset_store::{TaskConfig, TaskKind};
use crate::rng::{derive_seed, SplitMix64};

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CheckpointHeader, TensorInfo, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use loss::{loss_ce, loss_mse, multi_task_loss, softmax};
pub use model::{backward, forward, pool_ave, pool_max, Forward};

pub const DEFAULT_HIDDEN: usize = 128;

/// Sum in ascending value order; independent of input order. Non-finite
/// inputs are summed as given.
pub(crate) fn sorted_sum<T: Real>(mut v: Vec<T>) -> T {
    if v.iter().all(|x| x.is_finite()) {
        v.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    }
    v.into_iter().fold(T::zero(), |acc, x| acc + x)
}
const INIT_STREAM: u64 = 0x1A17_0001;

pub trait Real:
    Float + FromPrimitive + AddAssign + SubAssign + MulAssign + DivAssign + Sum + Debug + Send + Sync + 'static
{
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 converts to every Real")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Debug, Error)]
pub enum MilError {
    #[error("bag has no instances")]
    EmptyBag,
    #[error("non-finite input at row {row}, column {col}")]
    NonFiniteInput { row: usize, col: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    SlideAve,
    SlideMax,
    #[serde(rename = "ABMIL")]
    Abmil,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::SlideAve, ModelKind::SlideMax, ModelKind::Abmil];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::SlideAve => "SlideAve",
            ModelKind::SlideMax => "SlideMax",
            ModelKind::Abmil => "ABMIL",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "slideave" | "ave" => Ok(ModelKind::SlideAve),
            "slidemax" | "max" => Ok(ModelKind::SlideMax),
            "abmil" => Ok(ModelKind::Abmil),
            _ => Err(format!("unknown model {s:?} (expected SlideAve, SlideMax or ABMIL)")),
        }
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, MilError> {
        if data.len() != rows * cols {
            return Err(MilError::ShapeMismatch(format!("{} values for {rows}x{cols}", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }
}

/// Borrowed `N x D` bag of instance features.
#[derive(Debug, Clone, Copy)]
pub struct Bag<'a, T> {
    pub n: usize,
    pub dim: usize,
    pub data: &'a [T],
}

impl<'a, T: Real> Bag<'a, T> {
    pub fn new(data: &'a [T], dim: usize) -> Result<Self, MilError> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(MilError::ShapeMismatch(format!("{} values do not form rows of width {dim}", data.len())));
        }
        Ok(Self { n: data.len() / dim, dim, data })
    }

    #[inline]
    pub fn row(&self, k: usize) -> &'a [T] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }
}

/// Gated attention parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention<T> {
    /// `L x D`, tanh branch.
    pub v: Matrix<T>,
    /// `L x D`, sigmoid gate.
    pub u: Matrix<T>,
    /// Length `L`.
    pub w: Vec<T>,
}

/// `W` is `C x D`; `b` has length `C` (1 for regression).
#[derive(Debug, Clone, PartialEq)]
pub struct Head<T> {
    pub w: Matrix<T>,
    pub b: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MilParams<T> {
    pub kind: ModelKind,
    pub dim: usize,
    pub hidden: usize,
    pub tasks: Vec<TaskConfig>,
    /// Present only for [`ModelKind::Abmil`].
    pub attention: Option<Attention<T>>,
    /// One per task, same order as `tasks`.
    pub heads: Vec<Head<T>>,
}

impl<T: Real> MilParams<T> {
    /// Same shapes, all zeros; used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_tensor_mut(|_, t| t.iter_mut().for_each(|v| *v = T::zero()));
        z
    }

    /// Tensors in canonical order: attention `V`, `U`, `w`, then each head's
    /// `W` and `b`.
    pub fn tensors(&self) -> Vec<(String, [usize; 2], &[T])> {
        let mut out: Vec<(String, [usize; 2], &[T])> = Vec::new();
        if let Some(a) = &self.attention {
            out.push(("attention.V".into(), [a.v.rows, a.v.cols], &a.v.data));
            out.push(("attention.U".into(), [a.u.rows, a.u.cols], &a.u.data));
            out.push(("attention.w".into(), [a.w.len(), 1], &a.w));
        }
        for (i, h) in self.heads.iter().enumerate() {
            out.push((format!("heads.{i}.W"), [h.w.rows, h.w.cols], &h.w.data));
            out.push((format!("heads.{i}.b"), [h.b.len(), 1], &h.b));
        }
        out
    }

    pub fn for_each_tensor_mut(&mut self, mut f: impl FnMut(usize, &mut [T])) {
        let mut i = 0;
        if let Some(a) = &mut self.attention {
            for t in [&mut a.v.data, &mut a.u.data, &mut a.w] {
                f(i, t);
                i += 1;
            }
        }
        for h in &mut self.heads {
            f(i, &mut h.w.data);
            f(i + 1, &mut h.b);
            i += 2;
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.2.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.2.iter().all(|v| v.is_finite()))
    }

    pub fn cast<U: Real>(&self) -> MilParams<U> {
        let m = |x: &Matrix<T>| Matrix { rows: x.rows, cols: x.cols, data: x.data.iter().map(|v| U::of(v.f64())).collect() };
        let v = |x: &[T]| x.iter().map(|v| U::of(v.f64())).collect();
        MilParams {
            kind: self.kind,
            dim: self.dim,
            hidden: self.hidden,
            tasks: self.tasks.clone(),
            attention: self.attention.as_ref().map(|a| Attention { v: m(&a.v), u: m(&a.u), w: v(&a.w) }),
            heads: self.heads.iter().map(|h| Head { w: m(&h.w), b: v(&h.b) }).collect(),
        }
    }
}

/// One head per task on a shared backbone. Entries are
/// `uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))`, drawn in tensor order.
pub fn build_model<T: Real>(
    tasks: &[TaskConfig],
    dim: usize,
    hidden: usize,
    kind: ModelKind,
    seed: u64,
) -> Result<MilParams<T>, MilError> {
    if tasks.is_empty() {
        return Err(MilError::InvalidModel("at least one task is required".into()));
    }
    if dim == 0 || (kind == ModelKind::Abmil && hidden == 0) {
        return Err(MilError::InvalidModel(format!("dimensions must be positive (D={dim}, L={hidden})")));
    }
    for t in tasks {
        t.validate().map_err(|e| MilError::InvalidModel(e.to_string()))?;
    }
    let mut rng = SplitMix64::new(derive_seed(seed, INIT_STREAM));
    let mut fill = |n: usize, fan_in: usize| -> Vec<T> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        (0..n).map(|_| T::of(rng.uniform(-bound, bound))).collect()
    };
    let attention = (kind == ModelKind::Abmil).then(|| Attention {
        v: Matrix { rows: hidden, cols: dim, data: fill(hidden * dim, dim) },
        u: Matrix { rows: hidden, cols: dim, data: fill(hidden * dim, dim) },
        w: fill(hidden, hidden),
    });
    let heads = tasks
        .iter()
        .map(|t| {
            let c = t.output_width();
            Head { w: Matrix { rows: c, cols: dim, data: fill(c * dim, dim) }, b: fill(c, dim) }
        })
        .collect();
    Ok(MilParams {
        kind,
        dim,
        hidden: if kind == ModelKind::Abmil { hidden } else { 0 },
        tasks: tasks.to_vec(),
        attention,
        heads,
    })
}

/// Whether head `i` predicts classes.
pub(crate) fn is_classification(task: &TaskConfig) -> bool {
    task.kind == TaskKind::Classification
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tasks() -> Vec<TaskConfig> {
        vec![TaskConfig::classification("grade", &["a", "b", "c"]), TaskConfig::regression("months")]
    }

    #[test]
    fn head_widths_follow_tasks() {
        let p: MilParams<f32> = build_model(&tasks(), 16, 8, ModelKind::Abmil, 1).unwrap();
        assert_eq!(p.heads.len(), 2);
        assert_eq!(p.heads[0].w.rows, 3);
        assert_eq!(p.heads[1].w.rows, 1);
        assert_eq!(p.heads[1].b.len(), 1);
        let a = p.attention.as_ref().unwrap();
        assert_eq!((a.v.rows, a.v.cols, a.w.len()), (8, 16, 8));

        let single: MilParams<f32> =
            build_model(&[TaskConfig::classification("t", &["n", "p"])], 4, 8, ModelKind::SlideMax, 1).unwrap();
        assert!(single.attention.is_none());
        assert_eq!(single.heads[0].w.rows, 2);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a: MilParams<f32> = build_model(&tasks(), 16, 8, ModelKind::Abmil, 9).unwrap();
        let b: MilParams<f32> = build_model(&tasks(), 16, 8, ModelKind::Abmil, 9).unwrap();
        let c: MilParams<f32> = build_model(&tasks(), 16, 8, ModelKind::Abmil, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let att = a.attention.as_ref().unwrap();
        assert!(att.v.data.iter().all(|v| v.abs() <= 0.25));
        assert!(att.w.iter().all(|v| v.abs() <= 1.0 / 8f32.sqrt()));
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(build_model::<f32>(&[], 4, 4, ModelKind::Abmil, 0).is_err());
        assert!(build_model::<f32>(&tasks(), 0, 4, ModelKind::Abmil, 0).is_err());
        assert!(build_model::<f32>(&tasks(), 4, 0, ModelKind::Abmil, 0).is_err());
        assert!(build_model::<f32>(&tasks(), 4, 0, ModelKind::SlideAve, 0).is_ok());
    }

    #[test]
    fn tensor_order_and_zeros() {
        let p: MilParams<f64> = build_model(&tasks(), 5, 3, ModelKind::Abmil, 2).unwrap();
        let names: Vec<String> = p.tensors().into_iter().map(|t| t.0).collect();
        assert_eq!(names, ["attention.V", "attention.U", "attention.w", "heads.0.W", "heads.0.b", "heads.1.W", "heads.1.b"]);
        assert_eq!(p.num_parameters(), 15 + 15 + 3 + 15 + 3 + 5 + 1);
        assert!(p.zeros_like().tensors().iter().all(|t| t.2.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn model_kind_names() {
        for k in ModelKind::ALL {
            assert_eq!(k.name().parse::<ModelKind>().unwrap(), k);
        }
        assert_eq!(serde_json::to_string(&ModelKind::Abmil).unwrap(), "\"ABMIL\"");
    }
}
