//! 2-D convolution (cross-correlation, no kernel flip) via im2col.
//!
//! Per output element the products are accumulated in `(c_in, ky, kx)` order
//! starting from zero, and the bias is added last. Both the forward and the
//! backward kernels keep that order fixed regardless of blocking or threading,
//! so results are bit-reproducible.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

use super::LayerParams;

/// Column tile width for the forward product.
const TILE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub pad: usize,
    pub has_bias: bool,
}

impl ConvSpec {
    pub fn new(kernel: usize, in_channels: usize, out_channels: usize, pad: usize) -> Self {
        Self { kernel, in_channels, out_channels, stride: 1, pad, has_bias: true }
    }

    /// `floor((n + 2p - k) / s) + 1`, or `None` when that would be < 1.
    pub fn output_extent(&self, n: usize) -> Option<usize> {
        let padded = n + 2 * self.pad;
        if self.kernel == 0 || self.stride == 0 || padded < self.kernel {
            return None;
        }
        Some((padded - self.kernel) / self.stride + 1)
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        if input.c != self.in_channels {
            return Err(Error::Shape(format!("conv expects {} input channels, got {input}", self.in_channels)));
        }
        match (self.output_extent(input.h), self.output_extent(input.w)) {
            (Some(h), Some(w)) => Ok(Shape { n: input.n, c: self.out_channels, h, w }),
            _ => Err(Error::Size(format!(
                "{k}x{k} conv with pad {p} stride {s} has no output on {input}",
                k = self.kernel,
                p = self.pad,
                s = self.stride
            ))),
        }
    }

    /// Rows of the unrolled patch matrix.
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn weight_shape(&self) -> Shape {
        Shape { n: self.out_channels, c: self.in_channels, h: self.kernel, w: self.kernel }
    }

    pub fn param_count(&self) -> usize {
        self.weight_shape().len() + if self.has_bias { self.out_channels } else { 0 }
    }
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub grad_in: Option<Tensor<T>>,
    pub grad_w: Tensor<T>,
    pub grad_b: Option<Tensor<T>>,
}

fn check_params<T: Element>(spec: &ConvSpec, params: &LayerParams<T>) -> Result<()> {
    if params.weights.shape() != spec.weight_shape() {
        return Err(Error::Shape(format!(
            "conv weights {} do not match {}",
            params.weights.shape(),
            spec.weight_shape()
        )));
    }
    match (&params.bias, spec.has_bias) {
        (Some(b), true) if b.len() == spec.out_channels => Ok(()),
        (None, false) => Ok(()),
        _ => Err(Error::Shape("conv bias does not match spec".into())),
    }
}

/// Unroll one input item `(c, h, w)` into a `(patch_len, oh * ow)` matrix.
fn im2col<T: Element>(x: &[T], in_shape: Shape, spec: &ConvSpec, oh: usize, ow: usize, col: &mut [T]) {
    let (k, s, pad) = (spec.kernel, spec.stride, spec.pad as isize);
    let (h, w) = (in_shape.h as isize, in_shape.w as isize);
    let cols = oh * ow;
    for c in 0..spec.in_channels {
        let plane = &x[c * in_shape.plane()..(c + 1) * in_shape.plane()];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((c * k + ky) * k + kx) * cols;
                let dst = &mut col[row..row + cols];
                for oy in 0..oh {
                    let iy = (oy * s + ky) as isize - pad;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * in_shape.w..(iy as usize + 1) * in_shape.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * s + kx) as isize - pad;
                        *v = if ix < 0 || ix >= w { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Unroll into `(oh * ow, patch_len)`: one row per output position.
fn im2row<T: Element>(x: &[T], in_shape: Shape, spec: &ConvSpec, oh: usize, ow: usize, rows: &mut [T]) {
    let (k, s, pad) = (spec.kernel, spec.stride, spec.pad as isize);
    let (h, w) = (in_shape.h as isize, in_shape.w as isize);
    let plen = spec.patch_len();
    for oy in 0..oh {
        for ox in 0..ow {
            let row = &mut rows[(oy * ow + ox) * plen..(oy * ow + ox + 1) * plen];
            for c in 0..spec.in_channels {
                let plane = &x[c * in_shape.plane()..(c + 1) * in_shape.plane()];
                for ky in 0..k {
                    let iy = (oy * s + ky) as isize - pad;
                    for kx in 0..k {
                        let ix = (ox * s + kx) as isize - pad;
                        row[(c * k + ky) * k + kx] = if iy < 0 || iy >= h || ix < 0 || ix >= w {
                            T::zero()
                        } else {
                            plane[iy as usize * in_shape.w + ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-add a `(oh * ow, patch_len)` gradient back onto the input item.
fn row2im<T: Element>(rows: &[T], in_shape: Shape, spec: &ConvSpec, oh: usize, ow: usize, gx: &mut [T]) {
    let (k, s, pad) = (spec.kernel, spec.stride, spec.pad as isize);
    let (h, w) = (in_shape.h as isize, in_shape.w as isize);
    let plen = spec.patch_len();
    for oy in 0..oh {
        for ox in 0..ow {
            let row = &rows[(oy * ow + ox) * plen..(oy * ow + ox + 1) * plen];
            for c in 0..spec.in_channels {
                let plane = &mut gx[c * in_shape.plane()..(c + 1) * in_shape.plane()];
                for ky in 0..k {
                    let iy = (oy * s + ky) as isize - pad;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * s + kx) as isize - pad;
                        if ix >= 0 && ix < w {
                            plane[iy as usize * in_shape.w + ix as usize] += row[(c * k + ky) * k + kx];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Element>(x: &Tensor<T>, spec: &ConvSpec, params: &LayerParams<T>) -> Result<Tensor<T>> {
    check_params(spec, params)?;
    let in_shape = x.shape();
    let out_shape = spec.output_shape(in_shape)?;
    let (oh, ow) = (out_shape.h, out_shape.w);
    let cols = oh * ow;
    let plen = spec.patch_len();
    let weights = params.weights.data();
    let bias = params.bias.as_ref().map(|b| b.data());

    let mut out = Tensor::zeros(out_shape);
    out.data_mut().par_chunks_mut(out_shape.item_len()).zip(x.data().par_chunks(in_shape.item_len())).for_each(
        |(y, xi)| {
            let mut col = vec![T::zero(); plen * cols];
            im2col(xi, in_shape, spec, oh, ow, &mut col);
            for p0 in (0..cols).step_by(TILE) {
                let p1 = (p0 + TILE).min(cols);
                for o in 0..spec.out_channels {
                    let acc = &mut y[o * cols + p0..o * cols + p1];
                    let wrow = &weights[o * plen..(o + 1) * plen];
                    for (kk, &wv) in wrow.iter().enumerate() {
                        let src = &col[kk * cols + p0..kk * cols + p1];
                        for (a, &c) in acc.iter_mut().zip(src) {
                            *a += wv * c;
                        }
                    }
                    if let Some(b) = bias {
                        let bv = b[o];
                        acc.iter_mut().for_each(|a| *a += bv);
                    }
                }
            }
        },
    );
    Ok(out)
}

pub fn conv2d_backward<T: Element>(
    x: &Tensor<T>,
    spec: &ConvSpec,
    params: &LayerParams<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    conv2d_backward_impl(x, spec, params, grad_out, true)
}

/// Backward pass; `want_input_grad = false` skips the input gradient (used
/// for the network's first layer).
pub(crate) fn conv2d_backward_impl<T: Element>(
    x: &Tensor<T>,
    spec: &ConvSpec,
    params: &LayerParams<T>,
    grad_out: &Tensor<T>,
    want_input_grad: bool,
) -> Result<ConvGrads<T>> {
    check_params(spec, params)?;
    let in_shape = x.shape();
    let out_shape = spec.output_shape(in_shape)?;
    if grad_out.shape() != out_shape {
        return Err(Error::Shape(format!(
            "conv grad_out {} does not match forward output {out_shape}",
            grad_out.shape()
        )));
    }
    let (oh, ow) = (out_shape.h, out_shape.w);
    let cols = oh * ow;
    let plen = spec.patch_len();
    let weights = params.weights.data();
    let n_out = spec.out_channels;

    let per_item: Vec<(Vec<T>, Vec<T>, Option<Vec<T>>)> = x
        .data()
        .par_chunks(in_shape.item_len())
        .zip(grad_out.data().par_chunks(out_shape.item_len()))
        .map(|(xi, gi)| {
            let mut rows = vec![T::zero(); cols * plen];
            im2row(xi, in_shape, spec, oh, ow, &mut rows);

            let mut gw = vec![T::zero(); n_out * plen];
            for p0 in (0..cols).step_by(TILE) {
                let p1 = (p0 + TILE).min(cols);
                for o in 0..n_out {
                    let gw_row = &mut gw[o * plen..(o + 1) * plen];
                    for p in p0..p1 {
                        let g = gi[o * cols + p];
                        if g == T::zero() {
                            continue;
                        }
                        for (a, &r) in gw_row.iter_mut().zip(&rows[p * plen..(p + 1) * plen]) {
                            *a += g * r;
                        }
                    }
                }
            }

            let gb: Vec<T> =
                (0..n_out).map(|o| gi[o * cols..(o + 1) * cols].iter().fold(T::zero(), |a, &v| a + v)).collect();

            let gx = want_input_grad.then(|| {
                // Reuse the patch buffer for the patch-space gradient.
                rows.fill(T::zero());
                for p in 0..cols {
                    let grow = &mut rows[p * plen..(p + 1) * plen];
                    for o in 0..n_out {
                        let g = gi[o * cols + p];
                        if g == T::zero() {
                            continue;
                        }
                        for (a, &wv) in grow.iter_mut().zip(&weights[o * plen..(o + 1) * plen]) {
                            *a += g * wv;
                        }
                    }
                }
                let mut gx = vec![T::zero(); in_shape.item_len()];
                row2im(&rows, in_shape, spec, oh, ow, &mut gx);
                gx
            });
            (gw, gb, gx)
        })
        .collect();

    let mut grad_w = Tensor::zeros(spec.weight_shape());
    let mut grad_b = vec![T::zero(); n_out];
    let mut grad_in = want_input_grad.then(|| Vec::with_capacity(in_shape.len()));
    for (gw, gb, gx) in per_item {
        grad_w.data_mut().iter_mut().zip(&gw).for_each(|(a, &v)| *a += v);
        grad_b.iter_mut().zip(&gb).for_each(|(a, &v)| *a += v);
        if let (Some(acc), Some(gx)) = (grad_in.as_mut(), gx) {
            acc.extend_from_slice(&gx);
        }
    }
    Ok(ConvGrads {
        grad_in: grad_in.map(|d| Tensor::from_vec(in_shape, d)).transpose()?,
        grad_w,
        grad_b: spec.has_bias.then(|| Tensor::from_vec(Shape { n: 1, c: n_out, h: 1, w: 1 }, grad_b)).transpose()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::Fill;

    /// Direct nested-loop cross-correlation over an explicitly zero-padded
    /// input, accumulating in the same `(c, ky, kx)` order.
    fn naive<T: Element>(x: &Tensor<T>, spec: &ConvSpec, params: &LayerParams<T>) -> Tensor<T> {
        let xs = x.shape();
        let xp = x.pad(spec.pad);
        let (oh, ow) = (spec.output_extent(xs.h).unwrap(), spec.output_extent(xs.w).unwrap());
        let out_shape = Shape { n: xs.n, c: spec.out_channels, h: oh, w: ow };
        let mut out = Tensor::zeros(out_shape);
        for n in 0..xs.n {
            for o in 0..spec.out_channels {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = T::zero();
                        for c in 0..spec.in_channels {
                            for ky in 0..spec.kernel {
                                for kx in 0..spec.kernel {
                                    acc += params.weights.at(o, c, ky, kx)
                                        * xp.at(n, c, oy * spec.stride + ky, ox * spec.stride + kx);
                                }
                            }
                        }
                        if let Some(b) = &params.bias {
                            acc += b.data()[o];
                        }
                        let i = out_shape.index(n, o, oy, ox);
                        out.data_mut()[i] = acc;
                    }
                }
            }
        }
        out
    }

    fn random_case(seed: u64) -> (Tensor<f32>, ConvSpec, LayerParams<f32>) {
        let mut rng = Rng::new(seed);
        let k = 1 + rng.below(5);
        let spec = ConvSpec {
            kernel: k,
            in_channels: 1 + rng.below(4),
            out_channels: 1 + rng.below(5),
            stride: 1 + rng.below(2),
            pad: rng.below(3),
            has_bias: rng.coin(),
        };
        let h = k + rng.below(6);
        let w = k + rng.below(6);
        let x = Tensor::new(
            Shape::new(1 + rng.below(3), spec.in_channels, h, w).unwrap(),
            Fill::Normal { mean: 0.0, stddev: 1.0, rng: &mut rng },
        )
        .unwrap();
        let params = LayerParams::init_conv(&spec, &mut rng);
        (x, spec, params)
    }

    #[test]
    fn output_size_formula() {
        let s = ConvSpec::new(3, 1, 1, 0);
        assert_eq!(s.output_extent(32), Some(30));
        let s = ConvSpec::new(5, 1, 1, 0);
        assert_eq!(s.output_extent(32), Some(28));
        assert_eq!(s.output_extent(4), None);
        assert_eq!(ConvSpec::new(3, 1, 1, 1).output_extent(4), Some(4));
    }

    #[test]
    fn scalar_case() {
        let spec = ConvSpec::new(1, 1, 1, 0);
        let one = Shape::new(1, 1, 1, 1).unwrap();
        let params = LayerParams {
            weights: Tensor::from_vec(one, vec![2.0f32]).unwrap(),
            bias: Some(Tensor::from_vec(one, vec![1.0]).unwrap()),
        };
        let x = Tensor::from_vec(one, vec![3.0]).unwrap();
        let y = conv2d_forward(&x, &spec, &params).unwrap();
        assert_eq!(y.data(), &[7.0]);
        let g = conv2d_backward(&x, &spec, &params, &Tensor::from_vec(one, vec![1.0]).unwrap()).unwrap();
        assert_eq!(g.grad_in.unwrap().data(), &[2.0]);
        assert_eq!(g.grad_w.data(), &[3.0]);
        assert_eq!(g.grad_b.unwrap().data(), &[1.0]);
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let (x, spec, params) = random_case(5);
        let y = conv2d_forward(&x, &spec, &params).unwrap();
        let g = conv2d_backward(&x, &spec, &params, &Tensor::zeros(y.shape())).unwrap();
        assert!(g.grad_in.unwrap().data().iter().all(|&v| v == 0.0));
        assert!(g.grad_w.data().iter().all(|&v| v == 0.0));
        if let Some(b) = g.grad_b {
            assert!(b.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn matches_naive_bitwise() {
        for seed in 0..60 {
            let (x, spec, params) = random_case(seed);
            let fast = conv2d_forward(&x, &spec, &params).unwrap();
            let slow = naive(&x, &spec, &params);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert_eq!(a.to_bits(), b.to_bits(), "seed {seed}: {spec:?}");
            }
        }
    }

    #[test]
    fn channel_mismatch_and_degenerate_extent() {
        let spec = ConvSpec::new(3, 2, 1, 0);
        let mut rng = Rng::new(0);
        let params = LayerParams::<f32>::init_conv(&spec, &mut rng);
        let x = Tensor::zeros(Shape::new(1, 3, 5, 5).unwrap());
        assert!(matches!(conv2d_forward(&x, &spec, &params), Err(Error::Shape(_))));
        let x = Tensor::zeros(Shape::new(1, 2, 2, 2).unwrap());
        assert!(matches!(conv2d_forward(&x, &spec, &params), Err(Error::Size(_))));
    }

    #[test]
    fn grad_out_shape_checked() {
        let (x, spec, params) = random_case(9);
        let bad = Tensor::zeros(Shape::new(7, 1, 1, 1).unwrap());
        assert!(matches!(conv2d_backward(&x, &spec, &params, &bad), Err(Error::Shape(_))));
    }
}
