use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Row-wise softmax of `(n, classes, ..)` logits, with max subtraction.
pub fn softmax<T: Element>(logits: &Tensor<T>) -> Tensor<T> {
    let k = logits.shape().item_len();
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(k) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v = *v / sum);
    }
    out
}

/// Mean softmax cross-entropy and its gradient `(softmax - onehot) / n`.
pub fn softmax_xent<T: Element>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let s = logits.shape();
    let k = s.item_len();
    if labels.len() != s.n {
        return Err(Error::Shape(format!("{} labels for batch of {}", labels.len(), s.n)));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Label(format!("label {bad} outside [0, {k})")));
    }
    let n = T::of(s.n as f64);
    let mut grad = logits.clone();
    let mut total = T::zero();
    for (row, &label) in grad.data_mut().chunks_mut(k).zip(labels) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v -= max;
            sum += v.exp();
        }
        let log_sum = sum.ln();
        total += log_sum - row[label];
        for v in row.iter_mut() {
            *v = (*v - log_sum).exp() / n;
        }
        row[label] -= T::one() / n;
    }
    Ok((total / n, grad))
}
