use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Shape, Tensor};

use super::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticKind {
    /// Each class is a spatially constant color with small per-pixel noise;
    /// class colors are evenly spaced hues.
    Separable,
    /// Uniform random pixels with random labels.
    Noise,
}

impl std::str::FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "separable" => Ok(Self::Separable),
            "noise" => Ok(Self::Noise),
            _ => Err(Error::Config(format!("unknown synthetic kind `{s}`"))),
        }
    }
}

/// `n` images of shape 3×32×32 with labels in `[0, classes)`.
pub fn synthetic_dataset(kind: SyntheticKind, n: usize, classes: usize, seed: u64) -> Result<Dataset> {
    if classes == 0 || n < classes {
        return Err(Error::Size(format!("need at least one sample per class ({n} < {classes})")));
    }
    let shape = Shape::new(n, 3, 32, 32)?;
    let mut rng = Rng::new(seed);
    let plane = shape.plane();
    let mut data = Vec::with_capacity(shape.len());
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        match kind {
            SyntheticKind::Separable => {
                let label = i % classes;
                let hue = std::f64::consts::TAU * label as f64 / classes as f64;
                for c in 0..3 {
                    let base = 0.5 + 0.4 * (hue + c as f64 * std::f64::consts::TAU / 3.0).cos();
                    data.extend((0..plane).map(|_| (base + 0.05 * (rng.uniform() - 0.5)) as f32));
                }
                labels.push(label);
            }
            SyntheticKind::Noise => {
                data.extend((0..shape.item_len()).map(|_| rng.uniform() as f32));
                labels.push(rng.below(classes));
            }
        }
    }
    Dataset::new(Tensor::from_vec(shape, data)?, labels, classes)
}
