//! Loss and accuracy over a labeled dataset, plain or ten-crop.

use crate::data::{ten_crop, Dataset};
use crate::error::Result;
use crate::graph::{forward, NetworkSpec, ParamStore};
use crate::layers::softmax;
use crate::tensor::Tensor;

/// Images per forward pass during evaluation.
const EVAL_CHUNK: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub loss: f64,
    pub accuracy: f64,
    /// Forward passes per image times image count.
    pub crops_evaluated: usize,
}

/// Lowest index among the maxima.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn probabilities(spec: &NetworkSpec, params: &ParamStore, x: &Tensor) -> Result<Vec<f64>> {
    let (logits, _) = forward(spec, params, x, false)?;
    Ok(softmax(&logits.cast::<f64>()).into_vec())
}

/// Plain mode runs each image once. Ten-crop mode averages the softmax
/// probabilities of the ten crops of each image before taking the argmax.
pub fn evaluate(spec: &NetworkSpec, params: &ParamStore, data: &Dataset, ten_crop_mode: bool) -> Result<EvalResult> {
    let k = spec.num_classes();
    let mut loss = 0.0;
    let mut correct = 0usize;
    let mut passes = 0usize;
    for start in (0..data.len()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(data.len());
        let indices: Vec<usize> = (start..end).collect();
        let (x, labels) = data.gather(&indices)?;
        let probs = if ten_crop_mode {
            let crops: Vec<Vec<Tensor>> = (0..x.shape().n).map(|i| ten_crop(&x.item(i))).collect();
            let mut avg = vec![0.0f64; labels.len() * k];
            for c in 0..10 {
                let batch = Tensor::stack(&crops.iter().map(|cs| cs[c].clone()).collect::<Vec<_>>())?;
                let p = probabilities(spec, params, &batch)?;
                avg.iter_mut().zip(&p).for_each(|(a, v)| *a += v);
                passes += labels.len();
            }
            avg.iter_mut().for_each(|a| *a /= 10.0);
            avg
        } else {
            passes += labels.len();
            probabilities(spec, params, &x)?
        };
        for (row, &label) in probs.chunks(k).zip(&labels) {
            loss -= row[label].max(f64::MIN_POSITIVE).ln();
            if argmax(row) == label {
                correct += 1;
            }
        }
    }
    let n = data.len().max(1) as f64;
    Ok(EvalResult { loss: loss / n, accuracy: correct as f64 / n, crops_evaluated: passes })
}
