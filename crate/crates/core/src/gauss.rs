//! Probabilistic twin of the network.
//!
//! Every activation is an independent Gaussian described by its mean and
//! variance. Linear layers map moments exactly; activations, squared
//! distances and the min-pool use closed-form moment matching. Zero-variance
//! entries are point masses and follow the deterministic path exactly.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{Activation, Layer, LayerKind, ModelSpec};
use crate::ops::{self, matrix_dims, ConvGeometry};
use crate::special::{cdf, pdf};
use crate::tensor::Tensor;

/// Negative variances down to this value are rounding noise and clamp to 0.
pub const VARIANCE_TOLERANCE: f64 = 1e-12;

/// Scalar Gaussian moments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian {
    pub mean: f64,
    pub var: f64,
}

impl Gaussian {
    pub fn new(mean: f64, var: f64) -> Self {
        Self { mean, var }
    }

    pub fn point(mean: f64) -> Self {
        Self { mean, var: 0.0 }
    }

    pub fn std(&self) -> f64 {
        libm::sqrt(self.var)
    }
}

fn clamp_variance(var: f64) -> Result<f64> {
    if var < -VARIANCE_TOLERANCE || var.is_nan() {
        Err(Error::NegativeVariance { value: var })
    } else {
        Ok(var.max(0.0))
    }
}

/// Element-wise independent Gaussians with a shared shape.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianTensor {
    mean: Tensor,
    variance: Tensor,
}

impl GaussianTensor {
    pub fn new(mean: Tensor, mut variance: Tensor) -> Result<Self> {
        if mean.shape() != variance.shape() {
            return Err(Error::ShapeMismatch {
                op: "gaussian tensor",
                left: mean.shape().to_vec(),
                right: variance.shape().to_vec(),
            });
        }
        for v in variance.data_mut() {
            *v = clamp_variance(*v)?;
        }
        Ok(Self { mean, variance })
    }

    /// Zero-variance tensor.
    pub fn point(mean: Tensor) -> Self {
        let variance = Tensor::zeros(mean.shape().to_vec());
        Self { mean, variance }
    }

    pub fn mean(&self) -> &Tensor {
        &self.mean
    }

    pub fn variance(&self) -> &Tensor {
        &self.variance
    }

    pub fn shape(&self) -> &[usize] {
        self.mean.shape()
    }

    fn map(&self, f: impl Fn(Gaussian) -> Result<Gaussian>) -> Result<Self> {
        let mut mean = Vec::with_capacity(self.mean.len());
        let mut var = Vec::with_capacity(self.mean.len());
        for (&m, &v) in self.mean.data().iter().zip(self.variance.data()) {
            let g = f(Gaussian::new(m, v))?;
            mean.push(g.mean);
            var.push(g.var);
        }
        let shape = self.mean.shape().to_vec();
        Ok(Self {
            mean: Tensor::from_parts_unchecked(shape.clone(), mean),
            variance: Tensor::from_parts_unchecked(shape, var),
        })
    }

    fn check_finite(&self, context: &str) -> Result<()> {
        self.mean.check_finite(context)?;
        self.variance.check_finite(context)
    }
}

/// Convolution of independent Gaussians: the mean uses the kernel, the variance the squared kernel.
pub fn g_conv2d(
    x: &GaussianTensor,
    kernel: &Tensor,
    bias: &[f64],
    stride: usize,
    padding: usize,
) -> Result<GaussianTensor> {
    let geom = ConvGeometry::new(x.shape(), kernel.shape(), stride, padding)?;
    if bias.len() != geom.out_c {
        return Err(Error::ShapeMismatch {
            op: "conv2d bias",
            left: vec![bias.len()],
            right: vec![geom.out_c],
        });
    }
    let mean = geom.apply(x.mean.data(), kernel.data(), Some(bias), |w| w);
    let var = geom.apply(x.variance.data(), kernel.data(), None, |w| w * w);
    let out = GaussianTensor {
        mean: Tensor::from_parts_unchecked(geom.output_shape(), mean),
        variance: Tensor::from_parts_unchecked(geom.output_shape(), var),
    };
    out.check_finite("gaussian conv2d")?;
    Ok(out)
}

/// Affine map of independent Gaussians over the flattened input; output is flat.
pub fn g_affine(x: &GaussianTensor, weights: &Tensor, bias: &[f64]) -> Result<GaussianTensor> {
    let (rows, cols) = matrix_dims(weights)?;
    let n = x.mean.len();
    if cols != n || bias.len() != rows {
        return Err(Error::ShapeMismatch {
            op: "affine",
            left: weights.shape().to_vec(),
            right: vec![n, bias.len()],
        });
    }
    let mean = ops::matvec(weights.data(), rows, cols, x.mean.data(), Some(bias), |w| w);
    let var = ops::matvec(weights.data(), rows, cols, x.variance.data(), None, |w| {
        w * w
    });
    let out = GaussianTensor {
        mean: Tensor::from_parts_unchecked(vec![rows], mean),
        variance: Tensor::from_parts_unchecked(vec![rows], var),
    };
    out.check_finite("gaussian affine")?;
    Ok(out)
}

/// `Φ(hi) - Φ(lo)` for `lo <= hi`, taken from whichever tail keeps precision.
fn cdf_between(lo: f64, hi: f64) -> f64 {
    if lo > 0.0 {
        cdf(-lo) - cdf(-hi)
    } else {
        cdf(hi) - cdf(lo)
    }
}

/// Mean and variance of `relu1(X)` for `X ~ N(μ, σ²)`.
pub fn relu1_moments(input: Gaussian) -> Result<Gaussian> {
    let var = clamp_variance(input.var)?;
    let mu = input.mean;
    if var == 0.0 {
        return Ok(Gaussian::point(ops::relu1_scalar(mu)));
    }
    let sigma = libm::sqrt(var);
    let lower = -mu / sigma;
    let upper = (1.0 - mu) / sigma;
    let (pdf_lo, pdf_hi) = (pdf(lower), pdf(upper));
    let (cdf_lo, cdf_hi) = (cdf(lower), cdf(upper));
    let inside = cdf_between(lower, upper);
    let above = cdf(-upper);

    let m = sigma * (pdf_lo - pdf_hi) + mu * inside + above;

    let quad = mu * mu - 2.0 * mu * m + var;
    let v = (quad + 2.0 * m - 1.0) * cdf_hi
        - quad * cdf_lo
        - (mu * sigma - 2.0 * m * sigma + sigma) * pdf_hi
        + (mu * sigma - 2.0 * m * sigma) * pdf_lo
        + m * m
        - 2.0 * m
        + 1.0;

    Ok(Gaussian::new(m.clamp(0.0, 1.0), v.clamp(0.0, 0.25)))
}

/// Mean and variance of `relu(X)` for `X ~ N(μ, σ²)`.
pub fn relu_moments(input: Gaussian) -> Result<Gaussian> {
    let var = clamp_variance(input.var)?;
    let mu = input.mean;
    if var == 0.0 {
        return Ok(Gaussian::point(ops::relu_scalar(mu)));
    }
    let sigma = libm::sqrt(var);
    let alpha = mu / sigma;
    let (p, c) = (pdf(alpha), cdf(alpha));
    let m = mu * c + sigma * p;
    let v = (mu * mu + var) * c + mu * sigma * p - m * m;
    Ok(Gaussian::new(m.max(0.0), v.max(0.0)))
}

pub fn g_relu1(x: &GaussianTensor) -> Result<GaussianTensor> {
    x.map(relu1_moments)
}

pub fn g_relu(x: &GaussianTensor) -> Result<GaussianTensor> {
    x.map(relu_moments)
}

/// Moments of `Σ_l (z_l - p_l)²` for independent `z_l ~ N(mean_l, var_l)`.
///
/// With `m = mean - p` and diagonal covariance `Σ`, the mean is
/// `tr Σ + mᵀm` and the variance `2 tr Σ² + 4 mᵀ Σ m`.
pub fn g_sq_l2_distance(mean: &[f64], var: &[f64], prototype: &[f64]) -> Result<Gaussian> {
    if mean.len() != prototype.len() || var.len() != prototype.len() {
        return Err(Error::ShapeMismatch {
            op: "gaussian squared distance",
            left: vec![mean.len(), var.len()],
            right: vec![prototype.len()],
        });
    }
    let mut trace = 0.0;
    let mut norm = 0.0;
    let mut trace_sq = 0.0;
    let mut weighted = 0.0;
    for ((&mu, &v), &p) in mean.iter().zip(var).zip(prototype) {
        let v = clamp_variance(v)?;
        let m = p - mu;
        let m2 = m * m;
        trace += v;
        norm += m2;
        trace_sq += v * v;
        weighted += m2 * v;
    }
    Ok(Gaussian::new(trace + norm, 2.0 * trace_sq + 4.0 * weighted))
}

/// Clark's moment-matched maximum of two independent Gaussians.
pub fn clark_max(a: Gaussian, b: Gaussian) -> Gaussian {
    let theta2 = a.var + b.var;
    if theta2 == 0.0 {
        return Gaussian::point(a.mean.max(b.mean));
    }
    let theta = libm::sqrt(theta2);
    let alpha = (a.mean - b.mean) / theta;
    let (p, ca, cb) = (pdf(alpha), cdf(alpha), cdf(-alpha));
    let mean = a.mean * ca + b.mean * cb + theta * p;
    let second = (a.mean * a.mean + a.var) * ca
        + (b.mean * b.mean + b.var) * cb
        + (a.mean + b.mean) * theta * p;
    Gaussian::new(mean, (second - mean * mean).max(0.0))
}

/// Minimum of Gaussians as `-max(-x)`, reduced left to right with [`clark_max`].
pub fn g_min_pool(inputs: &[Gaussian]) -> Result<Gaussian> {
    let (first, rest) = inputs.split_first().ok_or(Error::Empty("min pool"))?;
    let neg =
        |g: &Gaussian| -> Result<Gaussian> { Ok(Gaussian::new(-g.mean, clamp_variance(g.var)?)) };
    let mut acc = neg(first)?;
    for g in rest {
        acc = clark_max(acc, neg(g)?);
    }
    Ok(Gaussian::new(-acc.mean, acc.var))
}

fn g_linear(layer: &Layer, x: &GaussianTensor) -> Result<GaussianTensor> {
    match &layer.kind {
        LayerKind::Conv2d {
            kernel,
            stride,
            padding,
        } => g_conv2d(x, kernel, &layer.bias, *stride, *padding),
        LayerKind::Affine { weights } => {
            let y = g_affine(x, weights, &layer.bias)?;
            let n = y.mean.len();
            Ok(GaussianTensor {
                mean: y.mean.reshape(vec![1, 1, n])?,
                variance: y.variance.reshape(vec![1, 1, n])?,
            })
        }
    }
}

pub(crate) fn g_activate(activation: Activation, linear: GaussianTensor) -> Result<GaussianTensor> {
    match activation {
        Activation::None => Ok(linear),
        Activation::Relu => g_relu(&linear),
        Activation::Relu1 => g_relu1(&linear),
    }
}

/// Output of [`g_forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianForward {
    pub latent: GaussianTensor,
    /// Per prototype, distance moments at every latent position (row-major).
    pub distance_maps: Vec<Vec<Gaussian>>,
    /// Per prototype, the min-pooled distance.
    pub distances: Vec<Gaussian>,
    /// Expected logits, `W E[s] + b`.
    pub logit_means: Vec<f64>,
}

/// Propagates input moments through the backbone, extractor and prototype layer.
pub fn g_forward(model: &ModelSpec, input: &GaussianTensor) -> Result<GaussianForward> {
    model.check_input(input.shape())?;
    g_forward_from(model, 0, input.clone())
}

/// Continues propagation with `x` as the output of the first `skip` layers of
/// the backbone-then-extractor chain.
pub(crate) fn g_forward_from(
    model: &ModelSpec,
    skip: usize,
    mut x: GaussianTensor,
) -> Result<GaussianForward> {
    let stages = [
        ("backbone", model.backbone()),
        ("extractor", model.extractor()),
    ];
    let mut position = 0;
    for (stage, layers) in stages {
        for (idx, layer) in layers.iter().enumerate() {
            position += 1;
            if position <= skip {
                continue;
            }
            x = g_linear(layer, &x)
                .and_then(|linear| g_activate(layer.activation, linear))
                .map_err(|e| match e {
                    Error::NonFinite { .. } => Error::NonFiniteLayer { stage, layer: idx },
                    other => other,
                })?;
        }
    }
    let (h, w, l) = x.mean.hwc()?;
    let protos = model.prototypes();
    let mut distance_maps = Vec::with_capacity(protos.len());
    let mut distances = Vec::with_capacity(protos.len());
    for p in 0..protos.len() {
        let proto = protos.value(p);
        let mut map = Vec::with_capacity(h * w);
        for site in 0..h * w {
            let range = site * l..(site + 1) * l;
            map.push(g_sq_l2_distance(
                &x.mean.data()[range.clone()],
                &x.variance.data()[range],
                proto,
            )?);
        }
        distances.push(g_min_pool(&map)?);
        distance_maps.push(map);
    }
    let means: Vec<f64> = distances.iter().map(|g| g.mean).collect();
    let logit_means = crate::protopnet::classify(model, &means)?;
    Ok(GaussianForward {
        latent: x,
        distance_maps,
        distances,
        logit_means,
    })
}
