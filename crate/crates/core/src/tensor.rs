//! Dense rank-4 tensors in `(n, c, h, w)` row-major order.

use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Scalar types the engine computes in. Training runs in `f32`; gradient
/// checking re-runs the same code in `f64`.
pub trait Element:
    Float + Default + fmt::Debug + fmt::Display + Send + Sync + Sum + AddAssign + SubAssign + MulAssign + 'static
{
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Element for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    fn of(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    /// Validated constructor: every extent must be positive and the element
    /// count must fit in `usize`.
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Result<Self> {
        if n == 0 || c == 0 || h == 0 || w == 0 {
            return Err(Error::Size(format!("zero extent in ({n},{c},{h},{w})")));
        }
        n.checked_mul(c)
            .and_then(|v| v.checked_mul(h))
            .and_then(|v| v.checked_mul(w))
            .ok_or_else(|| Error::Size(format!("element count of ({n},{c},{h},{w}) overflows")))?;
        Ok(Self { n, c, h, w })
    }

    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements per batch item.
    pub fn item_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.c + c) * self.h + h) * self.w + w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.n, self.c, self.h, self.w)
    }
}

/// How to initialize a fresh tensor.
#[derive(Debug)]
pub enum Fill<'a> {
    Constant(f64),
    Normal { mean: f64, stddev: f64, rng: &'a mut Rng },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: Shape, fill: Fill<'_>) -> Result<Self> {
        let shape = Shape::new(shape.n, shape.c, shape.h, shape.w)?;
        let data = match fill {
            Fill::Constant(v) => vec![T::of(v); shape.len()],
            Fill::Normal { mean, stddev, rng } => (0..shape.len()).map(|_| T::of(rng.normal(mean, stddev))).collect(),
        };
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self { shape, data: vec![T::zero(); shape.len()] }
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::Shape(format!("buffer of {} elements cannot hold shape {shape}", data.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.shape.index(n, c, h, w)]
    }

    /// Same buffer viewed under another shape with the same element count.
    pub fn reshape(self, shape: Shape) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    /// Batch item `i` as a `(1, c, h, w)` tensor.
    pub fn item(&self, i: usize) -> Tensor<T> {
        let len = self.shape.item_len();
        Tensor { shape: Shape { n: 1, ..self.shape }, data: self.data[i * len..(i + 1) * len].to_vec() }
    }

    pub fn item_slice(&self, i: usize) -> &[T] {
        let len = self.shape.item_len();
        &self.data[i * len..(i + 1) * len]
    }

    /// Stack `(1, c, h, w)` items along the batch axis.
    pub fn stack(items: &[Tensor<T>]) -> Result<Self> {
        let first = items.first().ok_or_else(|| Error::Size("cannot stack zero tensors".into()))?.shape;
        let mut data = Vec::with_capacity(first.item_len() * items.len());
        let mut n = 0;
        for t in items {
            let s = t.shape;
            if (s.c, s.h, s.w) != (first.c, first.h, first.w) {
                return Err(Error::Shape(format!("cannot stack {s} with {first}")));
            }
            n += s.n;
            data.extend_from_slice(&t.data);
        }
        Ok(Self { shape: Shape { n, ..first }, data })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor { shape: self.shape, data: self.data.iter().map(|v| U::of(v.as_f64())).collect() }
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        expect_same_shape(self.shape, other.shape)?;
        self.data.iter_mut().zip(&other.data).for_each(|(a, &b)| *a += b);
        Ok(())
    }

    pub fn scale(&mut self, k: T) {
        self.data.iter_mut().for_each(|x| *x *= k);
    }

    /// Euclidean norm accumulated in `f64`.
    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Channels `[from, to)` as a new tensor.
    pub fn slice_channels(&self, from: usize, to: usize) -> Result<Self> {
        let s = self.shape;
        if from >= to || to > s.c {
            return Err(Error::Range(format!("channel range [{from},{to}) outside {s}")));
        }
        let plane = s.plane();
        let mut data = Vec::with_capacity(s.n * (to - from) * plane);
        for n in 0..s.n {
            let base = n * s.item_len();
            data.extend_from_slice(&self.data[base + from * plane..base + to * plane]);
        }
        Ok(Self { shape: Shape { c: to - from, ..s }, data })
    }

    /// Mirror every plane left to right.
    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        let w = self.shape.w;
        for row in out.data.chunks_mut(w) {
            row.reverse();
        }
        out
    }

    /// Zero-pad every plane by `pad` pixels on all four sides.
    pub fn pad(&self, pad: usize) -> Self {
        let s = self.shape;
        let (ph, pw) = (s.h + 2 * pad, s.w + 2 * pad);
        let mut data = vec![T::zero(); s.n * s.c * ph * pw];
        for (plane_in, plane_out) in self.data.chunks(s.plane()).zip(data.chunks_mut(ph * pw)) {
            for y in 0..s.h {
                let dst = (y + pad) * pw + pad;
                plane_out[dst..dst + s.w].copy_from_slice(&plane_in[y * s.w..(y + 1) * s.w]);
            }
        }
        Self { shape: Shape { h: ph, w: pw, ..s }, data }
    }
}

fn expect_same_shape(a: Shape, b: Shape) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("expected {a}, got {b}")));
    }
    Ok(())
}

/// Channel-wise concatenation: `a` occupies channels `[0, a.c)`, `b` follows.
pub fn concat_channels<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (sa, sb) = (a.shape, b.shape);
    if (sa.n, sa.h, sa.w) != (sb.n, sb.h, sb.w) {
        return Err(Error::Shape(format!("cannot concatenate {sa} with {sb}")));
    }
    let shape = Shape { c: sa.c + sb.c, ..sa };
    let mut data = Vec::with_capacity(shape.len());
    for n in 0..sa.n {
        data.extend_from_slice(a.item_slice(n));
        data.extend_from_slice(b.item_slice(n));
    }
    Ok(Tensor { shape, data })
}

/// Spatial window `[top, top + out_h) × [left, left + out_w)` of every plane.
pub fn crop<T: Element>(t: &Tensor<T>, top: usize, left: usize, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let s = t.shape;
    if out_h == 0 || out_w == 0 || top + out_h > s.h || left + out_w > s.w {
        return Err(Error::Range(format!("crop window {out_h}x{out_w} at ({top},{left}) outside {s}")));
    }
    let shape = Shape { h: out_h, w: out_w, ..s };
    let mut data = Vec::with_capacity(shape.len());
    for plane in t.data.chunks(s.plane()) {
        for y in top..top + out_h {
            data.extend_from_slice(&plane[y * s.w + left..y * s.w + left + out_w]);
        }
    }
    Ok(Tensor { shape, data })
}
