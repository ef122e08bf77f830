//! Dense vectors and row-major matrices. Nothing fancier: the model only
//! needs 1-D and 2-D shapes.

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
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
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            Shape::Vector(n) => write!(f, "({n})"),
            Shape::Matrix(r, c) => write!(f, "({r}x{c})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S: Scalar> {
    shape: Shape,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![S::zero(); shape.len()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<S>) -> Self {
        assert_eq!(
            shape.len(),
            data.len(),
            "tensor data length {} does not match shape {}",
            data.len(),
            shape
        );
        Tensor { shape, data }
    }

    pub fn vector(data: Vec<S>) -> Self {
        let n = data.len();
        Tensor {
            shape: Shape::Vector(n),
            data,
        }
    }

    pub fn scalar(x: S) -> Self {
        Tensor {
            shape: Shape::Vector(1),
            data: vec![x],
        }
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

    /// Rows of the matrix form; a vector counts as a single row.
    pub fn rows(&self) -> usize {
        match self.shape {
            Shape::Vector(_) => 1,
            Shape::Matrix(r, _) => r,
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape {
            Shape::Vector(n) => n,
            Shape::Matrix(_, c) => c,
        }
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[S] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    /// The single element of a length-1 tensor.
    pub fn item(&self) -> S {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {}", self.shape);
        self.data[0]
    }

    pub fn fill(&mut self, x: S) {
        self.data.iter_mut().for_each(|v| *v = x);
    }

    pub fn add_assign(&mut self, other: &Tensor<S>) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a = *a + *b;
        }
    }

    pub fn scale_assign(&mut self, c: S) {
        self.data.iter_mut().for_each(|v| *v = *v * c);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
