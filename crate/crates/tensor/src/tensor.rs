use crate::element::Element;
use crate::error::{Error, Result};

/// Dense n-dimensional array in row-major order.
///
/// A rank-0 tensor (empty shape, one element) is a scalar.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<E> {
    shape: Vec<usize>,
    data: Vec<E>,
}

impl<E: Element> Tensor<E> {
    pub fn new(shape: Vec<usize>, data: Vec<E>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::InvalidArgument {
                op: "tensor",
                msg: format!("shape {shape:?} implies {numel} elements, data has {}", data.len()),
            });
        }
        if shape.contains(&0) {
            return Err(Error::InvalidArgument {
                op: "tensor",
                msg: format!("shape {shape:?} has a zero extent"),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self { shape, data: vec![E::ZERO; numel] }
    }

    pub fn full(shape: Vec<usize>, value: E) -> Self {
        let numel = shape.iter().product();
        Self { shape, data: vec![value; numel] }
    }

    pub fn scalar(value: E) -> Self {
        Self { shape: vec![], data: vec![value] }
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(usize) -> E) -> Self {
        let numel: usize = shape.iter().product();
        Self { shape, data: (0..numel).map(&mut f).collect() }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a scalar (or single-element) tensor.
    pub fn item(&self) -> E {
        debug_assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    /// Extent along `axis`.
    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    /// Rows and columns of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        if self.shape.len() != 2 {
            return Err(Error::InvalidArgument {
                op: "dims2",
                msg: format!("expected rank 2, got shape {:?}", self.shape),
            });
        }
        Ok((self.shape[0], self.shape[1]))
    }

    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::ShapeMismatch { op: "reshape", lhs: self.shape, rhs: shape });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(E) -> E) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Lossy elementwise cast between element types.
    pub fn cast<F: Element>(&self) -> Tensor<F> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|x| F::from_f64(x.to_f64())).collect() }
    }
}
