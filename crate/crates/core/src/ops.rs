//! Exact forward primitives.
//!
//! Reductions run in a fixed order (kernel row, kernel column, input channel,
//! all ascending) so results are bitwise reproducible.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Geometry of a 2-D convolution over an HWC input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub out_c: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(input: &[usize], kernel: &[usize], stride: usize, padding: usize) -> Result<Self> {
        let (&[in_h, in_w, in_c], &[k_h, k_w, k_in, out_c]) = (input, kernel) else {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                left: input.to_vec(),
                right: kernel.to_vec(),
            });
        };
        if stride == 0 {
            return Err(Error::InvalidArgument(
                "conv2d stride must be positive".into(),
            ));
        }
        if k_in != in_c
            || k_h == 0
            || k_w == 0
            || k_h > in_h + 2 * padding
            || k_w > in_w + 2 * padding
        {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                left: input.to_vec(),
                right: kernel.to_vec(),
            });
        }
        Ok(Self {
            in_h,
            in_w,
            in_c,
            k_h,
            k_w,
            out_c,
            stride,
            padding,
            out_h: (in_h + 2 * padding - k_h) / stride + 1,
            out_w: (in_w + 2 * padding - k_w) / stride + 1,
        })
    }

    pub fn output_shape(&self) -> Vec<usize> {
        vec![self.out_h, self.out_w, self.out_c]
    }

    /// Zero-padded cross-correlation; `weight` transforms each kernel entry before use.
    pub fn apply(
        &self,
        input: &[f64],
        kernel: &[f64],
        bias: Option<&[f64]>,
        weight: impl Fn(f64) -> f64,
    ) -> Vec<f64> {
        let mut out = vec![0.0; self.out_h * self.out_w * self.out_c];
        for oi in 0..self.out_h {
            for oj in 0..self.out_w {
                for co in 0..self.out_c {
                    let mut acc = 0.0;
                    for ki in 0..self.k_h {
                        let Some(r) = (oi * self.stride + ki).checked_sub(self.padding) else {
                            continue;
                        };
                        if r >= self.in_h {
                            continue;
                        }
                        for kj in 0..self.k_w {
                            let Some(c) = (oj * self.stride + kj).checked_sub(self.padding) else {
                                continue;
                            };
                            if c >= self.in_w {
                                continue;
                            }
                            let x_base = (r * self.in_w + c) * self.in_c;
                            let k_base = ((ki * self.k_w + kj) * self.in_c) * self.out_c;
                            for ci in 0..self.in_c {
                                acc += weight(kernel[k_base + ci * self.out_c + co])
                                    * input[x_base + ci];
                            }
                        }
                    }
                    if let Some(b) = bias {
                        acc += b[co];
                    }
                    out[(oi * self.out_w + oj) * self.out_c + co] = acc;
                }
            }
        }
        out
    }
}

/// 2-D convolution with zero padding.
///
/// `input` is `[h, w, c_in]`, `kernel` is `[k_h, k_w, c_in, c_out]` and
/// `bias` has length `c_out`. Output extents are
/// `(in + 2 * padding - k) / stride + 1` along each axis.
pub fn conv2d(
    input: &Tensor,
    kernel: &Tensor,
    bias: &[f64],
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let geom = ConvGeometry::new(input.shape(), kernel.shape(), stride, padding)?;
    if bias.len() != geom.out_c {
        return Err(Error::ShapeMismatch {
            op: "conv2d bias",
            left: vec![bias.len()],
            right: vec![geom.out_c],
        });
    }
    let out = geom.apply(input.data(), kernel.data(), Some(bias), |w| w);
    let out = Tensor::from_parts_unchecked(geom.output_shape(), out);
    out.check_finite("conv2d output")?;
    Ok(out)
}

/// `y = W x + b` with `weights` of shape `[out, in]`; any input shape is read as its flat data.
pub fn affine(input: &Tensor, weights: &Tensor, bias: &[f64]) -> Result<Tensor> {
    let (rows, cols) = matrix_dims(weights)?;
    if cols != input.len() || bias.len() != rows {
        return Err(Error::ShapeMismatch {
            op: "affine",
            left: weights.shape().to_vec(),
            right: vec![input.len(), bias.len()],
        });
    }
    let out = matvec(weights.data(), rows, cols, input.data(), Some(bias), |w| w);
    let out = Tensor::from_parts_unchecked(vec![rows], out);
    out.check_finite("affine output")?;
    Ok(out)
}

pub(crate) fn matrix_dims(weights: &Tensor) -> Result<(usize, usize)> {
    match weights.shape() {
        &[r, c] => Ok((r, c)),
        other => Err(Error::ShapeMismatch {
            op: "affine weights",
            left: other.to_vec(),
            right: vec![0, 0],
        }),
    }
}

pub(crate) fn matvec(
    weights: &[f64],
    rows: usize,
    cols: usize,
    x: &[f64],
    bias: Option<&[f64]>,
    weight: impl Fn(f64) -> f64,
) -> Vec<f64> {
    (0..rows)
        .map(|j| {
            let row = &weights[j * cols..(j + 1) * cols];
            let mut acc = 0.0;
            for (w, v) in row.iter().zip(x) {
                acc += weight(*w) * v;
            }
            if let Some(b) = bias {
                acc += b[j];
            }
            acc
        })
        .collect()
}

/// ReLU clamped at 1.
pub fn relu1_scalar(x: f64) -> f64 {
    if x < 0.0 {
        0.0
    } else if x > 1.0 {
        1.0
    } else {
        x
    }
}

pub fn relu_scalar(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

pub fn relu1(x: &Tensor) -> Tensor {
    x.map(relu1_scalar)
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(relu_scalar)
}

/// Log-probabilities with max subtraction.
pub fn log_softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Empty("log_softmax"));
    }
    let lse = log_sum_exp(logits);
    let out: Vec<f64> = logits.iter().map(|v| v - lse).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "log_softmax".into(),
        });
    }
    Ok(out)
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = values.iter().map(|v| libm::exp(v - max)).sum();
    max + libm::log(sum)
}
