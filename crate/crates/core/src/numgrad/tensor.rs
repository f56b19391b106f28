use std::fmt;

use rand::Rng;

use super::{NumError, Result};

/// Extents of a rank-1 or rank-2 tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Shape {
    Vector(usize),
    Matrix(usize, usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Vector(n) => n,
            Shape::Matrix(r, c) => r * c,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> Vec<usize> {
        match *self {
            Shape::Vector(n) => vec![n],
            Shape::Matrix(r, c) => vec![r, c],
        }
    }

    pub fn rank(&self) -> usize {
        match self {
            Shape::Vector(_) => 1,
            Shape::Matrix(..) => 2,
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Vector(n) => write!(f, "[{n}]"),
            Shape::Matrix(r, c) => write!(f, "[{r}, {c}]"),
        }
    }
}

/// Dense row-major array of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        let extents_ok = match shape {
            Shape::Vector(n) => n > 0,
            Shape::Matrix(r, c) => r > 0 && c > 0,
        };
        if !extents_ok {
            return Err(NumError::Empty("tensor extents must be positive"));
        }
        if shape.len() != data.len() {
            return Err(NumError::ValueCount {
                shape,
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(NumError::NonFinite("tensor construction"));
        }
        Ok(Tensor { shape, data })
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(Shape::Vector(data.len()), data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(Shape::Matrix(rows, cols), data)
    }

    pub fn scalar(v: f64) -> Result<Self> {
        Self::vector(vec![v])
    }

    pub fn zeros(shape: Shape) -> Self {
        assert!(!shape.is_empty(), "zero-size tensor");
        Tensor {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn filled(shape: Shape, v: f64) -> Self {
        assert!(!shape.is_empty(), "zero-size tensor");
        assert!(v.is_finite());
        Tensor {
            shape,
            data: vec![v; shape.len()],
        }
    }

    /// Draws every component from uniform(-scale, scale).
    pub fn uniform<R: Rng + ?Sized>(shape: Shape, scale: f64, rng: &mut R) -> Self {
        assert!(!shape.is_empty(), "zero-size tensor");
        let data = (0..shape.len())
            .map(|_| rng.gen_range(-scale..=scale))
            .collect();
        Tensor { shape, data }
    }

    pub(crate) fn from_parts_unchecked(shape: Shape, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.len(), data.len());
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn dims(&self) -> Vec<usize> {
        self.shape.dims()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_values(self) -> Vec<f64> {
        self.data
    }

    pub fn rows(&self) -> usize {
        match self.shape {
            Shape::Vector(n) => n,
            Shape::Matrix(r, _) => r,
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape {
            Shape::Vector(_) => 1,
            Shape::Matrix(_, c) => c,
        }
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    /// The single value of a length-1 tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(NumError::NotScalar(self.shape));
        }
        Ok(self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.sq_norm().sqrt()
    }

    /// Index of the largest component; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        best
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub(crate) fn check_finite(self, what: &'static str) -> Result<Self> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(NumError::NonFinite(what))
        }
    }
}

/// Non-linearities applied componentwise.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }
}

/// `1 / (1 + e^-x)`; saturates to exactly 0 or 1 instead of overflowing.
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) fn matvec_raw(w: &Tensor, x: &[f64]) -> Vec<f64> {
    let cols = w.cols();
    w.data
        .chunks_exact(cols)
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

pub(crate) fn softmax_raw(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `y[i] = sum_j w[i, j] * x[j]`.
pub fn matvec(w: &Tensor, x: &Tensor) -> Result<Tensor> {
    match (w.shape, x.shape) {
        (Shape::Matrix(r, c), Shape::Vector(n)) if c == n => {
            Tensor::from_parts_unchecked(Shape::Vector(r), matvec_raw(w, &x.data))
                .check_finite("matvec")
        }
        _ => Err(NumError::Dim {
            op: "matvec",
            left: w.shape,
            right: x.shape,
        }),
    }
}

pub fn elementwise(kind: Activation, x: &Tensor) -> Result<Tensor> {
    if !x.is_finite() {
        return Err(NumError::NonFinite("elementwise input"));
    }
    let data = x.data.iter().map(|&v| kind.apply(v)).collect();
    Ok(Tensor::from_parts_unchecked(x.shape, data))
}

pub fn hadamard(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape != b.shape {
        return Err(NumError::Dim {
            op: "hadamard",
            left: a.shape,
            right: b.shape,
        });
    }
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect();
    Tensor::from_parts_unchecked(a.shape, data).check_finite("hadamard")
}

/// Max-shifted softmax over a vector.
pub fn softmax(x: &Tensor) -> Result<Tensor> {
    match x.shape {
        Shape::Vector(_) => {
            Tensor::from_parts_unchecked(x.shape, softmax_raw(&x.data)).check_finite("softmax")
        }
        Shape::Matrix(..) => Err(NumError::Rank {
            op: "softmax",
            shape: x.shape,
        }),
    }
}
