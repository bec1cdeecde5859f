//! Pad-and-crop augmentation and the deterministic ten-crop set.

use crate::rng::Rng;
use crate::tensor::{crop, Tensor};

/// Zero padding added on every side before cropping back to the original size.
pub const AUGMENT_PAD: usize = 4;

/// Random crop of the padded image at the original size, mirrored with
/// probability one half.
pub fn augment(image: &Tensor, rng: &mut Rng) -> Tensor {
    let s = image.shape();
    let padded = image.pad(AUGMENT_PAD);
    let top = rng.below(2 * AUGMENT_PAD + 1);
    let left = rng.below(2 * AUGMENT_PAD + 1);
    let out = crop(&padded, top, left, s.h, s.w).expect("window lies inside the padded image");
    if rng.coin() {
        out.flip_horizontal()
    } else {
        out
    }
}

/// Four corner crops and the center crop of the padded image, followed by
/// their horizontal mirrors in the same order.
pub fn ten_crop(image: &Tensor) -> Vec<Tensor> {
    let s = image.shape();
    let padded = image.pad(AUGMENT_PAD);
    let far = 2 * AUGMENT_PAD;
    let origins = [(0, 0), (0, far), (far, 0), (far, far), (AUGMENT_PAD, AUGMENT_PAD)];
    let crops: Vec<Tensor> = origins
        .iter()
        .map(|&(t, l)| crop(&padded, t, l, s.h, s.w).expect("window lies inside the padded image"))
        .collect();
    let mirrors: Vec<Tensor> = crops.iter().map(Tensor::flip_horizontal).collect();
    crops.into_iter().chain(mirrors).collect()
}
