//! Minimal dense float64 tensor used throughout the crate.
//!
//! Row-major layout, no broadcasting beyond same-shape binary ops, no
//! strided or padded convolution. Everything runs in `f64` so the
//! finite-difference oracles have headroom.

use std::cell::Cell;

use crate::error::{Error, Result};

thread_local! {
    static FLOP_COUNTER: Cell<u64> = const { Cell::new(0) };
}

/// Reset the thread-local floating-point operation counter.
pub fn reset_flops() {
    FLOP_COUNTER.with(|c| c.set(0));
}

/// Read the thread-local floating-point operation counter.
pub fn flops() -> u64 {
    FLOP_COUNTER.with(|c| c.get())
}

fn count_flops(n: u64) {
    FLOP_COUNTER.with(|c| c.set(c.get().wrapping_add(n)));
}

/// Dense N-dimensional array: `shape` extents, flat row-major `data`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::Shape(format!("zero extent in shape {:?}", shape)));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// 2-D tensor from rows; all rows must have equal length.
    pub fn matrix(rows: Vec<Vec<f64>>) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Shape("ragged rows in matrix literal".into()));
        }
        Tensor::new(vec![r, c], rows.into_iter().flatten().collect())
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        Tensor::new(shape, self.data.clone())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn at2(&self, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[i * self.shape[1] + j]
    }

    pub fn set2(&mut self, i: usize, j: usize, v: f64) {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[i * self.shape[1] + j] = v;
    }

    fn check_same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, |a, b| a * b)
    }

    /// Element-wise division. Division by zero follows float64 semantics
    /// (±inf / NaN); callers that must avoid it guard the denominator.
    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, |a, b| a / b)
    }

    pub fn square(&self) -> Tensor {
        self.map(|a| a * a)
    }

    pub fn sqrt(&self) -> Tensor {
        self.map(f64::sqrt)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|a| a * c)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        count_flops(self.data.len() as u64);
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&a| f(a)).collect(),
        }
    }

    fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.check_same_shape(other)?;
        count_flops(self.data.len() as u64);
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn sum(&self) -> f64 {
        count_flops(self.data.len() as u64);
        self.data.iter().sum()
    }

    /// Sum of absolute values.
    pub fn l1_norm(&self) -> f64 {
        count_flops(self.data.len() as u64);
        self.data.iter().map(|v| v.abs()).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Standard matrix product of a 2-D `m×k` by `k×n` tensor.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ashape, bshape) = (a.shape(), b.shape());
    if ashape.len() != 2 || bshape.len() != 2 {
        return Err(Error::Shape(format!(
            "matmul needs 2-D operands, got {:?} and {:?}",
            ashape, bshape
        )));
    }
    let (m, k) = (ashape[0], ashape[1]);
    let (k2, n) = (bshape[0], bshape[1]);
    if k != k2 {
        return Err(Error::Shape(format!(
            "matmul inner extents differ: {} vs {}",
            k, k2
        )));
    }
    count_flops((2 * m * k * n) as u64);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a.data()[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b.data()[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// Matrix-vector product `a · x` with `a` of shape `m×k` and `x` of length `k`.
pub fn matvec(a: &Tensor, x: &Tensor) -> Result<Tensor> {
    let ashape = a.shape();
    if ashape.len() != 2 || x.shape().len() != 1 {
        return Err(Error::Shape(format!(
            "matvec needs 2-D by 1-D, got {:?} and {:?}",
            ashape,
            x.shape()
        )));
    }
    let (m, k) = (ashape[0], ashape[1]);
    if k != x.len() {
        return Err(Error::Shape(format!(
            "matvec inner extents differ: {} vs {}",
            k,
            x.len()
        )));
    }
    count_flops((2 * m * k) as u64);
    let xd = x.data();
    let mut out = vec![0.0; m];
    for (i, o) in out.iter_mut().enumerate() {
        let row = &a.data()[i * k..(i + 1) * k];
        *o = row.iter().zip(xd).map(|(&w, &v)| w * v).sum();
    }
    Ok(Tensor::vector(out))
}

/// `aᵀ · x` without materializing the transpose.
pub fn matvec_t(a: &Tensor, x: &Tensor) -> Result<Tensor> {
    let ashape = a.shape();
    if ashape.len() != 2 || x.shape().len() != 1 {
        return Err(Error::Shape(format!(
            "matvec_t needs 2-D by 1-D, got {:?} and {:?}",
            ashape,
            x.shape()
        )));
    }
    let (m, k) = (ashape[0], ashape[1]);
    if m != x.len() {
        return Err(Error::Shape(format!(
            "matvec_t outer extents differ: {} vs {}",
            m,
            x.len()
        )));
    }
    count_flops((2 * m * k) as u64);
    let mut out = vec![0.0; k];
    for (i, &xi) in x.data().iter().enumerate() {
        let row = &a.data()[i * k..(i + 1) * k];
        for (o, &w) in out.iter_mut().zip(row) {
            *o += w * xi;
        }
    }
    Ok(Tensor::vector(out))
}

/// Outer product `x · yᵀ` of two vectors.
pub fn outer(x: &Tensor, y: &Tensor) -> Result<Tensor> {
    if x.shape().len() != 1 || y.shape().len() != 1 {
        return Err(Error::Shape("outer needs 1-D operands".into()));
    }
    count_flops((x.len() * y.len()) as u64);
    let mut out = Vec::with_capacity(x.len() * y.len());
    for &xi in x.data() {
        out.extend(y.data().iter().map(|&yj| xi * yj));
    }
    Tensor::new(vec![x.len(), y.len()], out)
}

/// Valid cross-correlation of a 2-D input with a 2-D filter, stride 1:
/// `out[i][j] = Σ_m Σ_n filter[m][n] · input[i+m][j+n]`.
///
/// The filter is applied as written, without flipping.
pub fn conv2d_forward(input: &Tensor, filter: &Tensor) -> Result<Tensor> {
    let ishape = input.shape();
    let fshape = filter.shape();
    if ishape.len() != 2 || fshape.len() != 2 {
        return Err(Error::Shape(format!(
            "conv2d_forward needs 2-D operands, got {:?} and {:?}",
            ishape, fshape
        )));
    }
    let (h, w) = (ishape[0], ishape[1]);
    let (k1, k2) = (fshape[0], fshape[1]);
    if k1 > h || k2 > w {
        return Err(Error::Shape(format!(
            "filter {}x{} larger than input {}x{}",
            k1, k2, h, w
        )));
    }
    let (oh, ow) = (h - k1 + 1, w - k2 + 1);
    count_flops((2 * oh * ow * k1 * k2) as u64);
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            let mut acc = 0.0;
            for m in 0..k1 {
                let irow = &input.data()[(i + m) * w + j..(i + m) * w + j + k2];
                let frow = &filter.data()[m * k2..(m + 1) * k2];
                for (&iv, &fv) in irow.iter().zip(frow) {
                    acc += iv * fv;
                }
            }
            out[i * ow + j] = acc;
        }
    }
    Tensor::new(vec![oh, ow], out)
}

/// Full cross-correlation used on the backward pass: the filter slides over
/// every offset and out-of-range input indices contribute zero. Output is
/// `(h+k1−1)×(w+k2−1)` and `out[i][j] = Σ_m Σ_n filter[m][n] · input[i−m][j−n]`.
pub fn conv2d_full(input: &Tensor, filter: &Tensor) -> Result<Tensor> {
    let ishape = input.shape();
    let fshape = filter.shape();
    if ishape.len() != 2 || fshape.len() != 2 {
        return Err(Error::Shape(format!(
            "conv2d_full needs 2-D operands, got {:?} and {:?}",
            ishape, fshape
        )));
    }
    let (h, w) = (ishape[0], ishape[1]);
    let (k1, k2) = (fshape[0], fshape[1]);
    let (oh, ow) = (h + k1 - 1, w + k2 - 1);
    count_flops((2 * h * w * k1 * k2) as u64);
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            let mut acc = 0.0;
            for m in 0..k1 {
                if i < m || i - m >= h {
                    continue;
                }
                for n in 0..k2 {
                    if j < n || j - n >= w {
                        continue;
                    }
                    acc += filter.data()[m * k2 + n] * input.data()[(i - m) * w + (j - n)];
                }
            }
            out[i * ow + j] = acc;
        }
    }
    Tensor::new(vec![oh, ow], out)
}
