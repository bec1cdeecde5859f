//! Fully-connected (affine) layer over flattened inputs.

use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

use super::LayerParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FcSpec {
    pub inputs: usize,
    pub outputs: usize,
}

impl FcSpec {
    pub fn new(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs }
    }

    pub fn weight_shape(&self) -> Shape {
        Shape { n: self.outputs, c: self.inputs, h: 1, w: 1 }
    }

    pub fn param_count(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }
}

#[derive(Debug, Clone)]
pub struct FcGrads<T> {
    pub grad_in: Tensor<T>,
    pub grad_w: Tensor<T>,
    pub grad_b: Tensor<T>,
}

fn check<T: Element>(x: &Tensor<T>, params: &LayerParams<T>) -> Result<(usize, usize)> {
    let ws = params.weights.shape();
    let d = x.shape().item_len();
    if ws.c * ws.h * ws.w != d {
        return Err(Error::Shape(format!("fc layer expects width {}, input {} flattens to {d}", ws.c, x.shape())));
    }
    Ok((d, ws.n))
}

/// `y = W x + b` per batch row; the input is flattened to `(n, c*h*w)`.
pub fn fc_forward<T: Element>(x: &Tensor<T>, params: &LayerParams<T>) -> Result<Tensor<T>> {
    let (d, out) = check(x, params)?;
    let n = x.shape().n;
    let w = params.weights.data();
    let mut y = Vec::with_capacity(n * out);
    for row in x.data().chunks(d) {
        for o in 0..out {
            let mut acc = T::zero();
            for (&wv, &xv) in w[o * d..(o + 1) * d].iter().zip(row) {
                acc += wv * xv;
            }
            if let Some(b) = &params.bias {
                acc += b.data()[o];
            }
            y.push(acc);
        }
    }
    Tensor::from_vec(Shape { n, c: out, h: 1, w: 1 }, y)
}

pub fn fc_backward<T: Element>(x: &Tensor<T>, params: &LayerParams<T>, grad_out: &Tensor<T>) -> Result<FcGrads<T>> {
    let (d, out) = check(x, params)?;
    let n = x.shape().n;
    if grad_out.shape() != (Shape { n, c: out, h: 1, w: 1 }) {
        return Err(Error::Shape(format!("fc grad_out {} does not match output ({n},{out},1,1)", grad_out.shape())));
    }
    let w = params.weights.data();
    let g = grad_out.data();
    let mut gw = vec![T::zero(); out * d];
    let mut gb = vec![T::zero(); out];
    let mut gx = vec![T::zero(); n * d];
    for (b, row) in x.data().chunks(d).enumerate() {
        let gx_row = &mut gx[b * d..(b + 1) * d];
        for o in 0..out {
            let go = g[b * out + o];
            gb[o] += go;
            if go == T::zero() {
                continue;
            }
            for (a, &xv) in gw[o * d..(o + 1) * d].iter_mut().zip(row) {
                *a += go * xv;
            }
            for (a, &wv) in gx_row.iter_mut().zip(&w[o * d..(o + 1) * d]) {
                *a += go * wv;
            }
        }
    }
    Ok(FcGrads {
        grad_in: Tensor::from_vec(x.shape(), gx)?,
        grad_w: Tensor::from_vec(params.weights.shape(), gw)?,
        grad_b: Tensor::from_vec(Shape { n: 1, c: out, h: 1, w: 1 }, gb)?,
    })
}
