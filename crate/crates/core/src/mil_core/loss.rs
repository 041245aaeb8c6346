//! Softmax and task losses.

use super::{is_classification, sorted_sum, MilParams, Real};
use crate::dataset_store::Label;

/// Max-subtracted softmax. The normalizer is summed in ascending order, so
/// permuting `scores` permutes the result exactly.
pub fn softmax<T: Real>(scores: &[T]) -> Vec<T> {
    let m = scores.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = scores.iter().map(|&s| (s - m).exp()).collect();
    let total = sorted_sum(e.clone());
    e.into_iter().map(|v| v / total).collect()
}

/// Cross-entropy of `logits` against class `label`, and its gradient
/// `softmax(logits) - one_hot(label)`.
pub fn loss_ce<T: Real>(logits: &[T], label: usize) -> (T, Vec<T>) {
    assert!(label < logits.len(), "label {label} out of range for {} classes", logits.len());
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let log_total = logits.iter().fold(T::zero(), |acc, &v| acc + (v - m).exp()).ln();
    let loss = log_total - (logits[label] - m);
    let mut grad = softmax(logits);
    grad[label] -= T::one();
    (loss, grad)
}

/// Squared error and its gradient `2 (pred - target)`.
pub fn loss_mse<T: Real>(pred: T, target: T) -> (T, T) {
    let diff = pred - target;
    (diff * diff, T::of(2.0) * diff)
}

/// Sum of per-task losses over tasks with a label; tasks without one get a
/// zero upstream gradient.
pub fn multi_task_loss<T: Real>(params: &MilParams<T>, outputs: &[Vec<T>], labels: &[Option<Label>]) -> (T, Vec<Vec<T>>) {
    let mut total = T::zero();
    let grads = outputs
        .iter()
        .zip(labels)
        .zip(&params.tasks)
        .map(|((out, label), task)| match (label, is_classification(task)) {
            (Some(Label::Class(c)), true) => {
                let (l, g) = loss_ce(out, *c);
                total += l;
                g
            }
            (Some(Label::Value(v)), false) => {
                let (l, g) = loss_mse(out[0], T::of(*v));
                total += l;
                vec![g]
            }
            (None, _) => vec![T::zero(); out.len()],
            (Some(other), _) => panic!("label {other:?} does not fit task {:?}", task.name),
        })
        .collect();
    (total, grads)
}
