//! Pooling, forward pass and exact backward pass.

use super::loss::softmax;
use super::{sorted_sum, Bag, MilError, MilParams, ModelKind, Real};

/// Column means. Each column is summed in ascending value order so the
/// result does not depend on row order.
pub fn pool_ave<T: Real>(bag: Bag<'_, T>) -> Result<Vec<T>, MilError> {
    if bag.n == 0 {
        return Err(MilError::EmptyBag);
    }
    let n = T::of(bag.n as f64);
    Ok((0..bag.dim).map(|c| sorted_sum((0..bag.n).map(|k| bag.data[k * bag.dim + c]).collect()) / n).collect())
}

/// Column maxima.
pub fn pool_max<T: Real>(bag: Bag<'_, T>) -> Result<Vec<T>, MilError> {
    if bag.n == 0 {
        return Err(MilError::EmptyBag);
    }
    let mut z = bag.row(0).to_vec();
    for k in 1..bag.n {
        for (acc, &h) in z.iter_mut().zip(bag.row(k)) {
            if h > *acc {
                *acc = h;
            }
        }
    }
    Ok(z)
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

#[inline]
fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Forward results plus the activations the backward pass needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward<T> {
    /// Pooled representation `z`, length `D`.
    pub pooled: Vec<T>,
    /// Raw head outputs (logits or the regression value), one per task.
    pub outputs: Vec<Vec<T>>,
    /// Attention weights, ABMIL only.
    pub attention: Option<Vec<T>>,
    /// Pre-softmax scores, ABMIL only.
    pub scores: Option<Vec<T>>,
    tanh: Vec<T>,
    gate: Vec<T>,
}

pub fn forward<T: Real>(params: &MilParams<T>, bag: Bag<'_, T>) -> Result<Forward<T>, MilError> {
    if bag.n == 0 {
        return Err(MilError::EmptyBag);
    }
    if bag.dim != params.dim {
        return Err(MilError::ShapeMismatch(format!("bag has D={}, model expects D={}", bag.dim, params.dim)));
    }
    if let Some(i) = bag.data.iter().position(|v| !v.is_finite()) {
        return Err(MilError::NonFiniteInput { row: i / bag.dim, col: i % bag.dim });
    }

    let mut fwd = Forward { pooled: Vec::new(), outputs: Vec::new(), attention: None, scores: None, tanh: vec![], gate: vec![] };
    fwd.pooled = match params.kind {
        ModelKind::SlideAve => pool_ave(bag)?,
        ModelKind::SlideMax => pool_max(bag)?,
        ModelKind::Abmil => {
            let att = params.attention.as_ref().ok_or_else(|| MilError::InvalidModel("ABMIL without attention".into()))?;
            let l = att.w.len();
            let mut tanh = Vec::with_capacity(bag.n * l);
            let mut gate = Vec::with_capacity(bag.n * l);
            let mut scores = Vec::with_capacity(bag.n);
            for k in 0..bag.n {
                let h = bag.row(k);
                let mut score = T::zero();
                for j in 0..l {
                    let t = dot(att.v.row(j), h).tanh();
                    let s = sigmoid(dot(att.u.row(j), h));
                    tanh.push(t);
                    gate.push(s);
                    score += att.w[j] * (t * s);
                }
                scores.push(score);
            }
            let a = softmax(&scores);
            let z = (0..bag.dim).map(|c| sorted_sum(a.iter().enumerate().map(|(k, &ak)| ak * bag.row(k)[c]).collect())).collect();
            fwd.tanh = tanh;
            fwd.gate = gate;
            fwd.scores = Some(scores);
            fwd.attention = Some(a);
            z
        }
    };
    fwd.outputs = params
        .heads
        .iter()
        .map(|head| (0..head.w.rows).map(|c| dot(head.w.row(c), &fwd.pooled) + head.b[c]).collect())
        .collect();
    Ok(fwd)
}

/// Gradients of a scalar loss with respect to every parameter, given
/// `d_outputs[t] = dLoss/d(outputs[t])`.
pub fn backward<T: Real>(
    params: &MilParams<T>,
    bag: Bag<'_, T>,
    fwd: &Forward<T>,
    d_outputs: &[Vec<T>],
) -> Result<MilParams<T>, MilError> {
    if d_outputs.len() != params.heads.len() {
        return Err(MilError::ShapeMismatch(format!("{} upstream gradients for {} heads", d_outputs.len(), params.heads.len())));
    }
    let mut grads = params.zeros_like();
    let mut dz = vec![T::zero(); params.dim];
    for ((head, g), d_out) in params.heads.iter().zip(&mut grads.heads).zip(d_outputs) {
        if d_out.len() != head.b.len() {
            return Err(MilError::ShapeMismatch(format!("upstream width {} for head width {}", d_out.len(), head.b.len())));
        }
        for (c, &dc) in d_out.iter().enumerate() {
            g.b[c] = dc;
            for ((gw, &zc), (dzc, &wc)) in g.w.row_mut(c).iter_mut().zip(&fwd.pooled).zip(dz.iter_mut().zip(head.w.row(c))) {
                *gw = dc * zc;
                *dzc += dc * wc;
            }
        }
    }

    if params.kind != ModelKind::Abmil {
        return Ok(grads);
    }
    let att = params.attention.as_ref().ok_or_else(|| MilError::InvalidModel("ABMIL without attention".into()))?;
    let ga = grads.attention.as_mut().expect("zeros_like keeps attention");
    let a = fwd.attention.as_ref().ok_or_else(|| MilError::InvalidModel("forward was not ABMIL".into()))?;
    let l = att.w.len();

    let da: Vec<T> = (0..bag.n).map(|k| dot(bag.row(k), &dz)).collect();
    let mean_da = a.iter().zip(&da).fold(T::zero(), |acc, (&ak, &dak)| acc + ak * dak);
    let mut d_pre_v = vec![T::zero(); l];
    let mut d_pre_u = vec![T::zero(); l];
    for k in 0..bag.n {
        let d_score = a[k] * (da[k] - mean_da);
        let t = &fwd.tanh[k * l..(k + 1) * l];
        let s = &fwd.gate[k * l..(k + 1) * l];
        for j in 0..l {
            ga.w[j] += d_score * (t[j] * s[j]);
            let dg = d_score * att.w[j];
            d_pre_v[j] = dg * s[j] * (T::one() - t[j] * t[j]);
            d_pre_u[j] = dg * t[j] * s[j] * (T::one() - s[j]);
        }
        let h = bag.row(k);
        for j in 0..l {
            let (dv, du) = (d_pre_v[j], d_pre_u[j]);
            for ((gv, gu), &hd) in ga.v.row_mut(j).iter_mut().zip(ga.u.row_mut(j).iter_mut()).zip(h) {
                *gv += dv * hd;
                *gu += du * hd;
            }
        }
    }
    Ok(grads)
}
