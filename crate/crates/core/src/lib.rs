//! Input fast-forwarding convolutional networks on the CPU.
//!
//! Each stage runs a three-conv deep branch next to a single 5×5
//! fast-forward conv and concatenates the two. The crate provides the tensor
//! substrate, layer kernels, network construction and execution, an SGD
//! trainer with checkpoints, CIFAR-style data loading, and gradient
//! diagnostics.

pub mod config;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod graph;
pub mod layers;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use graph::{ArchConfig, InputShape, NetworkSpec, ParamStore};
pub use rng::Rng;
pub use tensor::{Element, Fill, Shape, Tensor};
