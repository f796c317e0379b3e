use super::{NnError, Result};
use crate::Real;

/// Dense row-major tensor (last axis fastest).
///
/// A multi-channel volume stored x-fastest maps onto a tensor of shape
/// `[C, nz, ny, nx]` without copying; convolution and pooling treat the three
/// spatial axes symmetrically so the axis naming does not matter to them.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if shape.is_empty() || shape.iter().any(|&s| s == 0) {
            return Err(NnError::Shape(format!("invalid shape {shape:?}")));
        }
        if expected != data.len() {
            return Err(NnError::Shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![T::zero(); n] }
    }

    pub fn from_vec(data: Vec<T>) -> Self {
        Tensor { shape: vec![data.len()], data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Tensor::new(shape, self.data)
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect() }
    }

    /// Spatial extents of a `[C, a, b, c]` tensor.
    pub(crate) fn volume_dims(&self) -> Result<(usize, [usize; 3])> {
        match self.shape.as_slice() {
            &[c, a, b, d] => Ok((c, [a, b, d])),
            s => Err(NnError::Shape(format!("expected [C, X, Y, Z] tensor, got {s:?}"))),
        }
    }
}
