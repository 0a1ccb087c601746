//! Dense float64 tensors of rank 0 to 3 and a reverse-mode gradient tape.
//!
//! The tape is rebuilt for every tree: discourse trees vary in shape, so the
//! computation graph is recorded dynamically during the forward pass and
//! replayed backwards once.

mod check;
mod tape;

pub use check::{grad_check, relative_error, GradCheckReport, ParamCheck, GRAD_CHECK_FLOOR};
pub use tape::{Elementwise, Gradients, Tape, Var};

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("index {index} out of range for extent {extent} in {op}")]
    Index {
        op: &'static str,
        index: usize,
        extent: usize,
    },
    #[error("invalid tensor shape {shape:?} for {len} values")]
    InvalidShape { shape: Vec<usize>, len: usize },
    #[error("backward called on an empty tape")]
    EmptyTape,
    #[error("backward root must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
}

/// Extents of a tensor of rank at most 3, stored inline so that creating a
/// tensor allocates only its data.
#[derive(Clone, Copy, PartialEq, Eq)]
pub(crate) struct Dims {
    rank: u8,
    extents: [usize; 3],
}

impl Dims {
    pub(crate) fn of(shape: &[usize]) -> Dims {
        assert!(shape.len() <= 3, "tensors have rank at most 3, got {shape:?}");
        let mut extents = [0; 3];
        extents[..shape.len()].copy_from_slice(shape);
        Dims {
            rank: shape.len() as u8,
            extents,
        }
    }

    pub(crate) fn as_slice(&self) -> &[usize] {
        &self.extents[..self.rank as usize]
    }
}

impl fmt::Debug for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.as_slice().fmt(f)
    }
}

/// Row-major dense tensor. Scalars have an empty shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTensor", into = "RawTensor")]
pub struct Tensor {
    shape: Dims,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl TryFrom<RawTensor> for Tensor {
    type Error = TensorError;

    fn try_from(raw: RawTensor) -> Result<Self, Self::Error> {
        Tensor::new(raw.shape, raw.data)
    }
}

impl From<Tensor> for RawTensor {
    fn from(t: Tensor) -> Self {
        RawTensor {
            shape: t.shape.as_slice().to_vec(),
            data: t.data,
        }
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if shape.len() > 3 || shape.contains(&0) || expected != data.len() {
            return Err(TensorError::InvalidShape { len: data.len(), shape });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: "Tensor::new" });
        }
        Ok(Tensor {
            shape: Dims::of(&shape),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: Dims::of(shape),
            data: vec![0.0; len],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Dims::of(&[]),
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: Dims::of(&[data.len()]),
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, TensorError> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(parts: &[Tensor]) -> Result<Self, TensorError> {
        let first = parts
            .first()
            .ok_or(TensorError::InvalidShape { shape: vec![0], len: 0 })?;
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(first.shape());
        let mut data = Vec::with_capacity(first.len() * parts.len());
        for p in parts {
            if p.shape != first.shape {
                return Err(TensorError::Shape {
                    op: "stack",
                    left: first.shape().to_vec(),
                    right: p.shape().to_vec(),
                });
            }
            data.extend_from_slice(&p.data);
        }
        Tensor::new(shape, data)
    }

    pub fn shape(&self) -> &[usize] {
        self.shape.as_slice()
    }

    pub fn rank(&self) -> usize {
        self.shape().len()
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

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        self.data[0]
    }

    /// Number of entries in one slice along the leading axis.
    fn slice_len(&self) -> usize {
        self.shape()[1..].iter().product()
    }

    /// Copies out the sub-tensor at `index` along the leading axis.
    pub fn slice(&self, index: usize) -> Result<Tensor, TensorError> {
        let data = self.slice_data(index)?.to_vec();
        Ok(Tensor {
            shape: Dims::of(&self.shape()[1..]),
            data,
        })
    }

    pub fn slice_data(&self, index: usize) -> Result<&[f64], TensorError> {
        if self.rank() == 0 || index >= self.shape()[0] {
            return Err(TensorError::Index {
                op: "slice",
                index,
                extent: self.shape().first().copied().unwrap_or(0),
            });
        }
        let len = self.slice_len();
        Ok(&self.data[index * len..(index + 1) * len])
    }

    pub fn slice_data_mut(&mut self, index: usize) -> Result<&mut [f64], TensorError> {
        if self.rank() == 0 || index >= self.shape()[0] {
            return Err(TensorError::Index {
                op: "slice",
                index,
                extent: self.shape().first().copied().unwrap_or(0),
            });
        }
        let len = self.slice_len();
        Ok(&mut self.data[index * len..(index + 1) * len])
    }

    /// Sum of squares, accumulated in eight interleaved lanes.
    pub fn squared_norm(&self) -> f64 {
        let mut lanes = [0.0; 8];
        let chunks = self.data.chunks_exact(8);
        let tail: f64 = chunks.remainder().iter().map(|v| v * v).sum();
        for chunk in chunks {
            for (lane, v) in lanes.iter_mut().zip(chunk) {
                *lane += v * v;
            }
        }
        lanes.iter().sum::<f64>() + tail
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.squared_norm().sqrt()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<(), TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::Shape {
                op: "add_assign",
                left: self.shape().to_vec(),
                right: other.shape().to_vec(),
            });
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax with max subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Elementwise sum whose result does not depend on the order of `parts`:
/// each coordinate is accumulated in ascending value order.
pub fn order_free_sum(parts: &[&[f64]]) -> Vec<f64> {
    let len = parts.first().map_or(0, |p| p.len());
    match parts.len() {
        0 => Vec::new(),
        1 => parts[0].to_vec(),
        2 => parts[0].iter().zip(parts[1]).map(|(a, b)| a + b).collect(),
        _ => {
            let mut column = Vec::with_capacity(parts.len());
            (0..len)
                .map(|i| {
                    column.clear();
                    column.extend(parts.iter().map(|p| p[i]));
                    column.sort_unstable_by(f64::total_cmp);
                    column.iter().sum()
                })
                .collect()
        }
    }
}

/// Correctly rounded sum of `values` (Shewchuk's partials with a
/// round-half-even finish), independent of order and free of cancellation.
pub fn exact_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for mut x in values {
        let mut i = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials.truncate(i);
        partials.push(x);
    }
    let mut n = partials.len();
    if n == 0 {
        return 0.0;
    }
    n -= 1;
    let mut hi = partials[n];
    let mut lo = 0.0;
    while n > 0 {
        let x = hi;
        n -= 1;
        let y = partials[n];
        hi = x + y;
        lo = y - (hi - x);
        if lo != 0.0 {
            break;
        }
    }
    if n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0)) {
        let y = lo * 2.0;
        let x = hi + y;
        if y == x - hi {
            hi = x;
        }
    }
    hi
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_sum_survives_cancellation() {
        assert_eq!(exact_sum([1e100, 1.0, -1e100]), 1.0);
        assert_eq!(exact_sum([0.1; 10]), 1.0);
        assert_eq!(exact_sum([]), 0.0);
        let v = [0.3, -0.1, 1e-17, 2.5, -2.7];
        let mut r = v;
        r.reverse();
        assert_eq!(exact_sum(v), exact_sum(r));
    }

    #[test]
    fn new_rejects_bad_shapes() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(vec![1, 1, 1, 1], vec![1.0]).is_err());
        assert!(Tensor::new(vec![0], vec![]).is_err());
        assert!(Tensor::new(vec![1], vec![f64::NAN]).is_err());
        assert_eq!(Tensor::new(vec![], vec![3.0]).unwrap().item(), 3.0);
    }

    #[test]
    fn slice_of_rank3() {
        let t = Tensor::new(vec![2, 2, 2], (0..8).map(f64::from).collect()).unwrap();
        let s = t.slice(1).unwrap();
        assert_eq!(s.shape(), &[2, 2]);
        assert_eq!(s.data(), &[4.0, 5.0, 6.0, 7.0]);
        assert!(t.slice(2).is_err());
    }

    #[test]
    fn stable_sigmoid_and_softmax() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
        let p = softmax(&[1000.0, 0.0]);
        assert!(p.iter().all(|v| v.is_finite()));
        assert_eq!(p[0], 1.0);
    }

    #[test]
    fn order_free_sum_ignores_order() {
        let a = [0.1, 1e16, -3.0];
        let b = [0.2, 1.0, 7.5];
        let c = [0.3, -1e16, 1e-9];
        let x = order_free_sum(&[&a, &b, &c]);
        let y = order_free_sum(&[&c, &a, &b]);
        assert_eq!(x, y);
    }
}
