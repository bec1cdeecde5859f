//! Labeled image datasets, normalization and augmentation.

mod augment;
mod cifar;
mod synthetic;

pub use augment::{augment, ten_crop, AUGMENT_PAD};
pub use cifar::{load_cifar10, load_records, parse_records, RECORD_BYTES};
pub use synthetic::{synthetic_dataset, SyntheticKind};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Per-channel mean and (population) standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    pub fn identity(channels: usize) -> Self {
        Self { mean: vec![0.0; channels], std: vec![1.0; channels] }
    }

    pub fn compute(images: &Tensor) -> Self {
        let s = images.shape();
        let plane = s.plane();
        let count = (s.n * plane) as f64;
        let mut mean = vec![0.0f64; s.c];
        for item in images.data().chunks(s.item_len()) {
            for (c, m) in mean.iter_mut().enumerate() {
                *m += item[c * plane..(c + 1) * plane].iter().map(|&v| v as f64).sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0f64; s.c];
        for item in images.data().chunks(s.item_len()) {
            for (c, v) in var.iter_mut().enumerate() {
                *v += item[c * plane..(c + 1) * plane].iter().map(|&x| (x as f64 - mean[c]).powi(2)).sum::<f64>();
            }
        }
        let std = var.into_iter().map(|v| (v / count).sqrt()).collect();
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `(n, c, h, w)`; pixel values in `[0, 1]` until normalized.
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub class_count: usize,
    /// Statistics of the training split this dataset belongs to.
    pub stats: ChannelStats,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if images.shape().n != labels.len() {
            return Err(Error::Shape(format!("{} images but {} labels", images.shape().n, labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Label(format!("label {bad} outside [0, {class_count})")));
        }
        let stats = ChannelStats::compute(&images);
        Ok(Self { images, labels, class_count, stats })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_shape(&self) -> Shape {
        Shape { n: 1, ..self.images.shape() }
    }

    pub fn image(&self, i: usize) -> Tensor {
        self.images.item(i)
    }

    /// Samples `[from, to)` as a new dataset sharing this one's statistics.
    pub fn subset(&self, from: usize, to: usize) -> Result<Self> {
        if from >= to || to > self.len() {
            return Err(Error::Range(format!("subset [{from},{to}) of {} samples", self.len())));
        }
        let len = self.images.shape().item_len();
        let images = Tensor::from_vec(
            Shape { n: to - from, ..self.images.shape() },
            self.images.data()[from * len..to * len].to_vec(),
        )?;
        Ok(Self {
            images,
            labels: self.labels[from..to].to_vec(),
            class_count: self.class_count,
            stats: self.stats.clone(),
        })
    }

    /// Holds out the last `count` samples as a validation split. Statistics
    /// are recomputed from what remains for training.
    pub fn split_validation(&self, count: usize) -> Result<(Self, Self)> {
        if count == 0 || count >= self.len() {
            return Err(Error::Range(format!("cannot hold out {count} of {} samples", self.len())));
        }
        let cut = self.len() - count;
        let mut train = self.subset(0, cut)?;
        train.stats = ChannelStats::compute(&train.images);
        let mut val = self.subset(cut, self.len())?;
        val.stats = train.stats.clone();
        Ok((train, val))
    }

    /// Stacks the images at `indices` into one batch.
    pub fn gather(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let len = self.images.shape().item_len();
        let mut data = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            data.extend_from_slice(self.images.item_slice(i));
        }
        let images = Tensor::from_vec(Shape { n: indices.len(), ..self.images.shape() }, data)?;
        Ok((images, indices.iter().map(|&i| self.labels[i]).collect()))
    }
}

/// Per-channel `(x - mean) / std`.
pub fn normalize(d: &Dataset, stats: &ChannelStats) -> Result<Dataset> {
    let s = d.images.shape();
    if stats.mean.len() != s.c || stats.std.len() != s.c {
        return Err(Error::Shape(format!("stats for {} channels, images have {}", stats.mean.len(), s.c)));
    }
    for (c, (&m, &sd)) in stats.mean.iter().zip(&stats.std).enumerate() {
        if !m.is_finite() || !sd.is_finite() {
            return Err(Error::NonFinite(format!("channel {c} statistics")));
        }
        if !(sd > 0.0) {
            return Err(Error::ZeroStd(c));
        }
    }
    let mut images = d.images.clone();
    let plane = s.plane();
    for item in images.data_mut().chunks_mut(s.item_len()) {
        for c in 0..s.c {
            let (m, sd) = (stats.mean[c], stats.std[c]);
            item[c * plane..(c + 1) * plane].iter_mut().for_each(|v| *v = ((*v as f64 - m) / sd) as f32);
        }
    }
    Ok(Dataset { images, labels: d.labels.clone(), class_count: d.class_count, stats: d.stats.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Fill;

    #[test]
    fn identity_normalization() {
        let d = synthetic_dataset(SyntheticKind::Noise, 8, 2, 1).unwrap();
        let n = normalize(&d, &ChannelStats::identity(3)).unwrap();
        assert_eq!(n.images, d.images);
    }

    #[test]
    fn constant_image_has_zero_std() {
        let img: Tensor = Tensor::new(Shape::new(1, 3, 4, 4).unwrap(), Fill::Constant(0.5)).unwrap();
        let d = Dataset::new(img, vec![0], 1).unwrap();
        assert!(matches!(normalize(&d, &d.stats), Err(Error::ZeroStd(0))));
    }

    #[test]
    fn normalized_statistics() {
        let d = synthetic_dataset(SyntheticKind::Noise, 64, 4, 3).unwrap();
        let n = normalize(&d, &d.stats).unwrap();
        let s = ChannelStats::compute(&n.images);
        for c in 0..3 {
            assert!(s.mean[c].abs() < 1e-6, "{:?}", s.mean);
            assert!((s.std[c] - 1.0).abs() < 1e-4, "{:?}", s.std);
        }
    }

    #[test]
    fn validation_split_uses_tail_and_train_stats() {
        let d = synthetic_dataset(SyntheticKind::Noise, 20, 2, 3).unwrap();
        let (train, val) = d.split_validation(5).unwrap();
        assert_eq!((train.len(), val.len()), (15, 5));
        assert_eq!(val.labels, d.labels[15..]);
        assert_eq!(train.stats, ChannelStats::compute(&train.images));
        assert_eq!(val.stats, train.stats);
    }

    #[test]
    fn rejects_bad_labels() {
        let img = Tensor::zeros(Shape::new(1, 3, 2, 2).unwrap());
        assert!(matches!(Dataset::new(img, vec![2], 2), Err(Error::Label(_))));
    }
}
