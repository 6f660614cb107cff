//! Dense row-major tensors.
//!
//! Spatial tensors use height × width × channels layout, so the flat index of
//! `(row, col, ch)` is `(row * width + col) * channels + ch`. Weight matrices
//! are `[rows, cols]` and convolution kernels are
//! `[kernel_h, kernel_w, in_channels, out_channels]`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Dense array of `f64` with order at most 4.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking that the extents match the data and every value is finite.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 4 || shape.iter().product::<usize>() != data.len() {
            return Err(Error::InvalidShape {
                shape,
                len: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("tensor data at flat index {pos}"),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; len],
        }
    }

    /// Builds a tensor filled with `value`.
    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![value; len],
        }
    }

    /// Flat vector of length `data.len()`.
    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    /// Height × width × channels tensor.
    pub fn image(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![height, width, channels], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(height, width, channels)` when the tensor has order 3.
    pub fn hwc(&self) -> Result<(usize, usize, usize)> {
        match self.shape.as_slice() {
            &[h, w, c] => Ok((h, w, c)),
            other => Err(Error::ShapeMismatch {
                op: "hwc",
                left: other.to_vec(),
                right: vec![0, 0, 0],
            }),
        }
    }

    pub fn at3(&self, row: usize, col: usize, ch: usize) -> f64 {
        let w = self.shape[1];
        let c = self.shape[2];
        self.data[(row * w + col) * c + ch]
    }

    /// Channel vector at spatial site `(row, col)` of an order-3 tensor.
    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let w = self.shape[1];
        let c = self.shape[2];
        let start = (row * w + col) * c;
        &self.data[start..start + c]
    }

    /// Reinterprets the data under another shape with the same element count.
    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 4 || shape.iter().product::<usize>() != self.data.len()
        {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: self.shape,
                right: shape,
            });
        }
        Ok(Self {
            shape,
            data: self.data,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Errors if any value is NaN or infinite.
    pub fn check_finite(&self, context: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(pos) => Err(Error::NonFinite {
                context: format!("{context} at flat index {pos}"),
            }),
        }
    }

    pub(crate) fn from_parts_unchecked(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }
}
