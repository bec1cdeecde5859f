//! CIFAR-10 binary batches: each record is one label byte followed by the
//! 1024 red, 1024 green and 1024 blue pixel bytes of a 32×32 image.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

use super::{ChannelStats, Dataset};

pub const RECORD_BYTES: usize = 1 + 3 * 32 * 32;

const TRAIN_FILES: [&str; 5] =
    ["data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin", "data_batch_5.bin"];
const TEST_FILE: &str = "test_batch.bin";

/// Parses concatenated records; pixels are scaled by 1/255.
pub fn parse_records(bytes: &[u8], classes: usize) -> Result<(Tensor, Vec<usize>)> {
    if bytes.is_empty() || bytes.len() % RECORD_BYTES != 0 {
        return Err(Error::Format(format!(
            "{} bytes is not a positive multiple of the {RECORD_BYTES}-byte record size",
            bytes.len()
        )));
    }
    let n = bytes.len() / RECORD_BYTES;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * (RECORD_BYTES - 1));
    for (i, rec) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        let label = rec[0] as usize;
        if label >= classes {
            return Err(Error::Label(format!("record {i}: label byte {label} outside [0, {classes})")));
        }
        labels.push(label);
        pixels.extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
    }
    Ok((Tensor::from_vec(Shape::new(n, 3, 32, 32)?, pixels)?, labels))
}

fn read(path: &Path, classes: usize) -> Result<(Tensor, Vec<usize>)> {
    let bytes = std::fs::read(path).map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    parse_records(&bytes, classes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        Error::Label(m) => Error::Label(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Any file of CIFAR-layout records with labels in `[0, classes)`.
pub fn load_records(path: &Path, classes: usize) -> Result<Dataset> {
    let (images, labels) = read(path, classes)?;
    Dataset::new(images, labels, classes)
}

/// The five training batches and the test batch from `dir`. Both splits
/// carry the training split's channel statistics.
pub fn load_cifar10(dir: &Path) -> Result<(Dataset, Dataset)> {
    let mut parts = Vec::new();
    let mut labels = Vec::new();
    for f in TRAIN_FILES {
        let (img, lab) = read(&dir.join(f), 10)?;
        parts.push(img);
        labels.extend(lab);
    }
    let train_images = Tensor::stack(&parts)?;
    let stats = ChannelStats::compute(&train_images);
    let train = Dataset { images: train_images, labels, class_count: 10, stats: stats.clone() };
    let (test_images, test_labels) = read(&dir.join(TEST_FILE), 10)?;
    let test = Dataset { images: test_images, labels: test_labels, class_count: 10, stats };
    Ok((train, test))
}

impl Dataset {
    /// Re-encodes 3×32×32 images in `[0, 1]` as CIFAR records.
    pub fn to_records(&self) -> Result<Vec<u8>> {
        let s = self.images.shape();
        if (s.c, s.h, s.w) != (3, 32, 32) || self.class_count > 256 {
            return Err(Error::Shape(format!("{s} cannot be written as CIFAR records")));
        }
        let mut out = Vec::with_capacity(self.len() * RECORD_BYTES);
        for (i, &label) in self.labels.iter().enumerate() {
            out.push(label as u8);
            out.extend(self.images.item_slice(i).iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(label: u8, fill: impl Fn(usize) -> u8) -> Vec<u8> {
        let mut r = vec![label];
        r.extend((0..RECORD_BYTES - 1).map(fill));
        r
    }

    #[test]
    fn channel_planes_in_order() {
        let r = record(3, |i| (i / 1024) as u8 * 100);
        let (img, labels) = parse_records(&r, 10).unwrap();
        assert_eq!(labels, vec![3]);
        assert_eq!(img.at(0, 0, 5, 5), 0.0);
        assert_eq!(img.at(0, 1, 0, 0), 100.0 / 255.0);
        assert_eq!(img.at(0, 2, 31, 31), 200.0 / 255.0);
    }

    #[test]
    fn truncated_is_format_error() {
        assert!(matches!(parse_records(&vec![0u8; 3072], 10), Err(Error::Format(_))));
    }

    #[test]
    fn bad_label() {
        assert!(matches!(parse_records(&record(11, |_| 0), 10), Err(Error::Label(_))));
        assert!(matches!(parse_records(&record(2, |_| 0), 2), Err(Error::Label(_))));
    }

    #[test]
    fn missing_files() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_cifar10(dir.path()), Err(Error::Io(_))));
    }

    #[test]
    fn loads_directory_layout() {
        let dir = tempfile::tempdir().unwrap();
        for (k, f) in TRAIN_FILES.iter().chain([&TEST_FILE]).enumerate() {
            let bytes: Vec<u8> = (0..3).flat_map(|j| record(((k + j) % 10) as u8, move |i| (i + j) as u8)).collect();
            std::fs::write(dir.path().join(f), bytes).unwrap();
        }
        let (train, test) = load_cifar10(dir.path()).unwrap();
        assert_eq!((train.len(), test.len(), train.class_count), (15, 3, 10));
        assert_eq!(test.stats, train.stats);
        assert_eq!(train.stats, ChannelStats::compute(&train.images));
    }

    proptest! {
        #[test]
        fn reserializing_is_byte_exact(seed in any::<u64>(), n in 1usize..4) {
            let mut rng = crate::rng::Rng::new(seed);
            let bytes: Vec<u8> = (0..n)
                .flat_map(|_| {
                    let label = rng.below(10) as u8;
                    let px: Vec<u8> = (0..RECORD_BYTES - 1).map(|_| rng.next_u64() as u8).collect();
                    std::iter::once(label).chain(px)
                })
                .collect();
            let (images, labels) = parse_records(&bytes, 10).unwrap();
            let d = Dataset::new(images, labels, 10).unwrap();
            prop_assert_eq!(d.to_records().unwrap(), bytes);
        }
    }
}
