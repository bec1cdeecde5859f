use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub fn relu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn relu_in_place<T: Element>(x: &mut Tensor<T>) {
    x.data_mut().iter_mut().for_each(|v| {
        if !(*v > T::zero()) {
            *v = T::zero();
        }
    });
}

/// Passes `grad_out` where `x > 0`. `x` may be the pre- or post-activation
/// value since both are positive on the same set. The gradient at exactly
/// zero is zero.
pub fn relu_backward<T: Element>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape() != grad_out.shape() {
        return Err(Error::Shape(format!("relu grad_out {} does not match input {}", grad_out.shape(), x.shape())));
    }
    let mut g = grad_out.clone();
    g.data_mut().iter_mut().zip(x.data()).for_each(|(g, &v)| {
        if !(v > T::zero()) {
            *g = T::zero();
        }
    });
    Ok(g)
}
