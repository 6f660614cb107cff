//! Shapley approximation by moment propagation.
//!
//! A uniformly drawn coalition of size `d` from the `N = n - 1` other
//! features is summarised by the moments it induces. Under
//! [`CoalitionModel::ExactSize`] every first-layer pre-activation
//! `u = base + Σ_f m_f v_f` gets the exact sampling-without-replacement mean
//! `(d / N) Σ v_f` and variance `d (N - d) / (N (N - 1)) · Σ (v_f - v̄)²`.
//! Under [`CoalitionModel::Bernoulli`] each other feature is independently
//! present with `q = d / N`, giving it input mean `q x + (1 - q) b` and
//! variance `q (1 - q) (x - b)²`. One pass of the probabilistic twin with
//! feature `i` at the baseline and one with feature `i` at its value give the
//! expected marginal contribution for that coalition size.

use alloc::vec;
use alloc::vec::Vec;

use super::{
    feature_count, validate_target, AttributionMap, Granularity, Method, SetFunctionSpec, Target,
};
use crate::error::{Error, Result};
use crate::gauss::{g_activate, g_forward, g_forward_from, GaussianForward, GaussianTensor};
use crate::model::{Layer, LayerKind, ModelSpec};
use crate::ops;
use crate::tensor::Tensor;

/// How a coalition of fixed size enters the probabilistic twin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CoalitionModel {
    /// Independent per-feature membership with probability `d / (n - 1)`.
    #[default]
    Bernoulli,
    /// Exact first-layer moments of a uniform size-`d` coalition.
    ExactSize,
}

impl CoalitionModel {
    pub fn name(self) -> &'static str {
        match self {
            CoalitionModel::ExactSize => "exact-size",
            CoalitionModel::Bernoulli => "bernoulli",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DaspConfig {
    /// Number of coalition sizes evaluated per feature; capped at `|P|`.
    pub samples: usize,
    pub coalition: CoalitionModel,
}

impl Default for DaspConfig {
    fn default() -> Self {
        Self {
            samples: 32,
            coalition: CoalitionModel::Bernoulli,
        }
    }
}

impl DaspConfig {
    pub fn with_samples(samples: usize) -> Self {
        Self {
            samples,
            ..Self::default()
        }
    }
}

/// Coalition sizes and their averaging weights.
///
/// With `samples >= players` every size `0..players` gets weight `1 / players`.
/// Otherwise the sizes are evenly spaced over `0..=players - 1` including both
/// ends, and each integer size distributes its `1 / players` share linearly
/// between its two neighbouring samples. A single sample uses the middle size.
pub fn coalition_schedule(players: usize, samples: usize) -> Result<Vec<(usize, f64)>> {
    if players == 0 {
        return Err(Error::InvalidArgument(
            "DASP needs at least one feature".into(),
        ));
    }
    if samples == 0 {
        return Err(Error::InvalidArgument(
            "DASP needs at least one coalition size".into(),
        ));
    }
    let n = players;
    let m = samples.min(n);
    if m == n {
        return Ok((0..n).map(|d| (d, 1.0 / n as f64)).collect());
    }
    if m == 1 {
        return Ok(vec![((n - 1) / 2, 1.0)]);
    }
    let span = (n - 1) as f64;
    let sizes: Vec<usize> = (0..m)
        .map(|k| libm::round(k as f64 * span / (m - 1) as f64) as usize)
        .collect();
    let mut weights = vec![0.0; m];
    let mut seg = 0;
    for d in 0..n {
        while seg + 2 < m && d > sizes[seg + 1] {
            seg += 1;
        }
        let (lo, hi) = (sizes[seg], sizes[seg + 1]);
        let t = (d - lo) as f64 / (hi - lo) as f64;
        weights[seg] += 1.0 - t;
        weights[seg + 1] += t;
    }
    Ok(sizes
        .into_iter()
        .zip(weights)
        .map(|(d, w)| (d, w / n as f64))
        .collect())
}

fn target_mean(out: &GaussianForward, target: Target) -> f64 {
    match target {
        Target::Distance(p) => out.distances[p].mean,
        Target::Logit(c) => out.logit_means[c],
        Target::Latent { row, col, channel } => {
            let w = out.latent.shape()[1];
            let l = out.latent.shape()[2];
            out.latent.mean().data()[(row * w + col) * l + channel]
        }
    }
}

/// Deterministic pre-activation of `layer` on `x`, flattened.
fn linear_output(layer: &Layer, x: &Tensor, with_bias: bool) -> Result<Vec<f64>> {
    let zeros;
    let bias = if with_bias {
        &layer.bias[..]
    } else {
        zeros = vec![0.0; layer.bias.len()];
        &zeros[..]
    };
    let out = match &layer.kind {
        LayerKind::Conv2d {
            kernel,
            stride,
            padding,
        } => ops::conv2d(x, kernel, bias, *stride, *padding)?,
        LayerKind::Affine { weights } => ops::affine(x, weights, bias)?,
    };
    Ok(out.into_data())
}

/// First-layer quantities shared by every `(i, d)` pass.
struct FirstLayer<'m> {
    layer: &'m Layer,
    shape: Vec<usize>,
    /// Pre-activation of the all-baseline image.
    base: Vec<f64>,
    /// `columns[f][u]`: change of unit `u` when feature `f` goes from baseline to its value.
    columns: Vec<Vec<f64>>,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl<'m> FirstLayer<'m> {
    fn new(
        model: &'m ModelSpec,
        image: &Tensor,
        baseline: f64,
        granularity: Granularity,
    ) -> Result<Self> {
        let layer = model
            .backbone()
            .first()
            .or(model.extractor().first())
            .ok_or_else(|| Error::InvalidModel("model has no layers".into()))?;
        let shape = layer.output_shape(image.shape())?;
        let channels = image.shape()[2];
        let n = feature_count(image.shape(), granularity);
        let base = linear_output(layer, &Tensor::full(image.shape().to_vec(), baseline), true)?;
        let mut columns = Vec::with_capacity(n);
        let mut delta = Tensor::zeros(image.shape().to_vec());
        for f in 0..n {
            let range = match granularity {
                Granularity::Pixel => f * channels..(f + 1) * channels,
                Granularity::Scalar => f..f + 1,
            };
            for e in range.clone() {
                delta.data_mut()[e] = image.data()[e] - baseline;
            }
            columns.push(linear_output(layer, &delta, false)?);
            delta.data_mut()[range].fill(0.0);
        }
        let units = base.len();
        let mut sum = vec![0.0; units];
        let mut sum_sq = vec![0.0; units];
        for col in &columns {
            for u in 0..units {
                sum[u] += col[u];
                sum_sq[u] += col[u] * col[u];
            }
        }
        Ok(Self {
            layer,
            shape,
            base,
            columns,
            sum,
            sum_sq,
        })
    }

    /// Activated first-layer moments for feature `i` (present or absent) and coalition size `d`.
    fn moments(&self, i: usize, d: usize, present: bool) -> Result<GaussianTensor> {
        let others = (self.columns.len() - 1) as f64;
        let d = d as f64;
        let (frac, scale) = if others > 0.0 {
            let corr = if others > 1.0 {
                d * (others - d) / (others * (others - 1.0))
            } else {
                0.0
            };
            (d / others, corr)
        } else {
            (0.0, 0.0)
        };
        let col = &self.columns[i];
        let mut mean = Vec::with_capacity(self.base.len());
        let mut var = Vec::with_capacity(self.base.len());
        for u in 0..self.base.len() {
            let s1 = self.sum[u] - col[u];
            let s2 = self.sum_sq[u] - col[u] * col[u];
            let own = if present { col[u] } else { 0.0 };
            mean.push(self.base[u] + own + frac * s1);
            let spread = if others > 0.0 {
                s2 - s1 * s1 / others
            } else {
                0.0
            };
            var.push((scale * spread).max(0.0));
        }
        let linear = GaussianTensor::new(
            Tensor::new(self.shape.clone(), mean)?,
            Tensor::new(self.shape.clone(), var)?,
        )?;
        g_activate(self.layer.activation, linear)
    }
}

/// Raw DASP estimates, `result[t][i]` for target `t` and feature `i`.
fn dasp_estimates(
    model: &ModelSpec,
    image: &Tensor,
    baseline: f64,
    granularity: Granularity,
    config: DaspConfig,
    targets: &[Target],
) -> Result<Vec<Vec<f64>>> {
    model.check_input(image.shape())?;
    let shape = image.shape().to_vec();
    let n = feature_count(&shape, granularity);
    let schedule = coalition_schedule(n, config.samples)?;
    let mut out = vec![vec![0.0; n]; targets.len()];
    let mut accumulate =
        |i: usize, weight: f64, with: &GaussianForward, without: &GaussianForward| {
            for (t, &target) in targets.iter().enumerate() {
                out[t][i] += weight * (target_mean(with, target) - target_mean(without, target));
            }
        };
    match config.coalition {
        CoalitionModel::ExactSize => {
            let first = FirstLayer::new(model, image, baseline, granularity)?;
            for i in 0..n {
                for &(d, weight) in &schedule {
                    let without = g_forward_from(model, 1, first.moments(i, d, false)?)?;
                    let with = g_forward_from(model, 1, first.moments(i, d, true)?)?;
                    accumulate(i, weight, &with, &without);
                }
            }
        }
        CoalitionModel::Bernoulli => {
            let channels = shape[2];
            let feature_of = |e: usize| match granularity {
                Granularity::Pixel => e / channels,
                Granularity::Scalar => e,
            };
            let x = image.data();
            let mut mean = vec![0.0; x.len()];
            let mut var = vec![0.0; x.len()];
            for i in 0..n {
                for &(d, weight) in &schedule {
                    let q = if n > 1 {
                        d as f64 / (n - 1) as f64
                    } else {
                        0.0
                    };
                    for e in 0..x.len() {
                        if feature_of(e) == i {
                            mean[e] = baseline;
                            var[e] = 0.0;
                        } else {
                            let delta = x[e] - baseline;
                            mean[e] = q * x[e] + (1.0 - q) * baseline;
                            var[e] = q * (1.0 - q) * delta * delta;
                        }
                    }
                    let without = g_forward(
                        model,
                        &GaussianTensor::new(
                            Tensor::new(shape.clone(), mean.clone())?,
                            Tensor::new(shape.clone(), var.clone())?,
                        )?,
                    )?;
                    for e in (0..x.len()).filter(|&e| feature_of(e) == i) {
                        mean[e] = x[e];
                    }
                    let with = g_forward(
                        model,
                        &GaussianTensor::new(
                            Tensor::new(shape.clone(), mean.clone())?,
                            Tensor::new(shape.clone(), var.clone())?,
                        )?,
                    )?;
                    accumulate(i, weight, &with, &without);
                }
            }
        }
    }
    Ok(out)
}

/// DASP attribution of a masked-input set function.
pub fn dasp_shapley(spec: &SetFunctionSpec<'_>, config: DaspConfig) -> Result<AttributionMap> {
    let mut est = dasp_estimates(
        spec.model,
        spec.image,
        spec.baseline,
        spec.granularity,
        config,
        &[spec.target],
    )?;
    spec.map(est.remove(0), Method::Dasp, None)
}

/// DASP maps for several targets of one image, sharing the propagation passes.
pub fn dasp_shapley_batch(
    model: &ModelSpec,
    image: &Tensor,
    targets: &[Target],
    baseline: f64,
    granularity: Granularity,
    config: DaspConfig,
) -> Result<Vec<AttributionMap>> {
    for &t in targets {
        validate_target(model, t)?;
    }
    let est = dasp_estimates(model, image, baseline, granularity, config, targets)?;
    targets
        .iter()
        .zip(est)
        .map(|(&target, values)| {
            SetFunctionSpec::with_options(model, target, image, baseline, granularity)?.map(
                values,
                Method::Dasp,
                None,
            )
        })
        .collect()
}
