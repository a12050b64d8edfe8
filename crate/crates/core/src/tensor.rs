//! Dense 1-D/2-D tensors.
//!
//! A [`Tensor`] is a plain value: a shape plus row-major data. Differentiation
//! happens on the [`Graph`](crate::autodiff::Graph), which stores tensors as
//! node values.

use std::fmt;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

use crate::error::{Error, Result};

/// Floating-point element type. Implemented for `f32` (training) and `f64`
/// (gradient checking).
pub trait Real:
    Float
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + Default
    + fmt::Debug
    + fmt::Display
    + std::iter::Sum
    + Send
    + Sync
    + 'static
{
    const NAME: &'static str;

    fn from_f64c(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite f64 converts")
    }

    fn to_f64c(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Real for f32 {
    const NAME: &'static str = "f32";
}

impl Real for f64 {
    const NAME: &'static str = "f64";
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Shape {
    Vector(usize),
    Matrix(usize, usize),
}

impl Shape {
    pub fn numel(self) -> usize {
        match self {
            Shape::Vector(n) => n,
            Shape::Matrix(r, c) => r * c,
        }
    }

    pub fn is_vector(self) -> bool {
        matches!(self, Shape::Vector(_))
    }

    /// A single element, either `(1,)` or `(1, 1)`.
    pub fn is_scalar(self) -> bool {
        self.numel() == 1
    }

    /// `(rows, cols)`; vectors report as a column.
    pub fn dims(self) -> (usize, usize) {
        match self {
            Shape::Vector(n) => (n, 1),
            Shape::Matrix(r, c) => (r, c),
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Vector(n) => write!(f, "({n},)"),
            Shape::Matrix(r, c) => write!(f, "({r}, {c})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Shape, data: Vec<T>) -> Result<Self> {
        if shape.numel() != data.len() {
            return Err(Error::dim(format!(
                "shape {shape} needs {} values, got {}",
                shape.numel(),
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn vector(data: Vec<T>) -> Self {
        Self {
            shape: Shape::Vector(data.len()),
            data,
        }
    }

    pub fn from_f64(shape: Shape, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| T::from_f64c(v)).collect())
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Self::new(Shape::Matrix(rows, cols), data)
    }

    /// Builds a matrix from nested rows; all rows must share a length.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::dim("ragged rows"));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::matrix(rows.len(), cols, data)
    }

    pub fn scalar(v: T) -> Self {
        Self::vector(vec![v])
    }

    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![T::zero(); shape.numel()],
        }
    }

    pub fn ones(shape: Shape) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: Shape, v: T) -> Self {
        Self {
            shape,
            data: vec![v; shape.numel()],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(Shape::Matrix(n, n));
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn rows(&self) -> usize {
        self.shape.dims().0
    }

    pub fn cols(&self) -> usize {
        self.shape.dims().1
    }

    /// Element `(r, c)` of a matrix (vectors are treated as columns).
    pub fn at(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols() + c]
    }

    pub fn row(&self, r: usize) -> &[T] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn column(&self, c: usize) -> Vec<T> {
        (0..self.rows()).map(|r| self.at(r, c)).collect()
    }

    pub fn reshape(self, shape: Shape) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn norm_sq(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_f64c()).collect()
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::from_f64c(v.to_f64c())).collect(),
        }
    }

    /// Index of the largest entry; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.data)
    }

    /// Standard matrix product. Each output entry accumulates over the inner
    /// index in ascending order.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (m, k) = match self.shape {
            Shape::Matrix(r, c) => (r, c),
            s => return Err(Error::dim(format!("matmul lhs must be 2-D, got {s}"))),
        };
        let (k2, n) = match other.shape {
            Shape::Matrix(r, c) => (r, c),
            s => return Err(Error::dim(format!("matmul rhs must be 2-D, got {s}"))),
        };
        if k != k2 {
            return Err(Error::dim(format!(
                "matmul inner dimensions differ: {} x {}",
                self.shape, other.shape
            )));
        }
        let mut out = vec![T::zero(); m * n];
        matmul_into(&self.data, &other.data, &mut out, m, k, n);
        Tensor::matrix(m, n, out)
    }
}

pub(crate) fn argmax<T: Real>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// `out += a (m×k) · b (k×n)`, row-major, i-k-j order.
pub(crate) fn matmul_into<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

pub(crate) fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_wrong_length() {
        assert!(Tensor::<f64>::new(Shape::Matrix(2, 2), vec![1.0; 3]).is_err());
    }

    #[test]
    fn identity_matmul() {
        let i = Tensor::<f64>::identity(2);
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(i.matmul(&a).unwrap(), a);
    }

    #[test]
    fn projector_matmul() {
        let p = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let a = Tensor::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap();
        let want = Tensor::from_rows(&[vec![5.0, 6.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(p.matmul(&a).unwrap(), want);
    }

    #[test]
    fn matmul_shape_error_mentions_both_shapes() {
        let a = Tensor::<f64>::zeros(Shape::Matrix(2, 3));
        let b = Tensor::<f64>::zeros(Shape::Matrix(2, 3));
        let msg = a.matmul(&b).unwrap_err().to_string();
        assert!(msg.contains("(2, 3) x (2, 3)"), "{msg}");
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.5f64, 0.5]), 0);
        assert_eq!(argmax(&[0.1f64, 0.7, 0.2]), 1);
    }
}
