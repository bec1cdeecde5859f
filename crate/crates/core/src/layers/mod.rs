//! Forward and backward kernels for the layer kinds the network uses.

mod conv;
mod fc;
mod loss;
mod relu;

pub(crate) use conv::conv2d_backward_impl;
pub use conv::{conv2d_backward, conv2d_forward, ConvGrads, ConvSpec};
pub use fc::{fc_backward, fc_forward, FcGrads, FcSpec};
pub use loss::{softmax, softmax_xent};
pub use relu::{relu, relu_backward, relu_in_place};

use crate::rng::Rng;
use crate::tensor::{Element, Fill, Shape, Tensor};

/// Learned weights of one layer. Convolution weights are
/// `(out, in, k, k)`; fully-connected weights are `(out, in, 1, 1)`; biases
/// are `(1, out, 1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T = f32> {
    pub weights: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

impl<T: Element> LayerParams<T> {
    /// He initialization: `N(0, 2 / fan_in)` weights, zero bias.
    fn he(weight_shape: Shape, fan_in: usize, has_bias: bool, rng: &mut Rng) -> Self {
        let stddev = (2.0 / fan_in as f64).sqrt();
        let weights = Tensor::new(weight_shape, Fill::Normal { mean: 0.0, stddev, rng })
            .expect("layer shapes are validated by their spec");
        let bias = has_bias.then(|| Tensor::zeros(Shape { n: 1, c: weight_shape.n, h: 1, w: 1 }));
        Self { weights, bias }
    }

    pub fn init_conv(spec: &ConvSpec, rng: &mut Rng) -> Self {
        Self::he(spec.weight_shape(), spec.patch_len(), spec.has_bias, rng)
    }

    pub fn init_fc(spec: &FcSpec, rng: &mut Rng) -> Self {
        Self::he(spec.weight_shape(), spec.inputs, true, rng)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weights: Tensor::zeros(self.weights.shape()),
            bias: self.bias.as_ref().map(|b| Tensor::zeros(b.shape())),
        }
    }

    pub fn element_count(&self) -> usize {
        self.weights.len() + self.bias.as_ref().map_or(0, |b| b.len())
    }

    pub fn cast<U: Element>(&self) -> LayerParams<U> {
        LayerParams { weights: self.weights.cast(), bias: self.bias.as_ref().map(|b| b.cast()) }
    }
}
