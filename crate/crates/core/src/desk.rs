//! Seeded generators for small random prototype networks.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::{Activation, Classifier, Layer, LayerKind, ModelSpec, PrototypeSet};
use crate::ops;
use crate::protopnet::{self, project_prototypes, LabeledImage};
use crate::tensor::Tensor;

/// Classifier weight from a prototype to its own class.
pub const OWN_CLASS_WEIGHT: f64 = -1.0;
/// Classifier weight from a prototype to every other class.
pub const OTHER_CLASS_WEIGHT: f64 = 0.5;

/// One backbone convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvConfig {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_channels: usize,
    pub activation: Activation,
}

/// Architecture of a desk model.
#[derive(Debug, Clone, PartialEq)]
pub struct DeskConfig {
    pub input: [usize; 3],
    pub convs: Vec<ConvConfig>,
    pub latent: usize,
    pub classes: usize,
    pub per_class: usize,
}

impl DeskConfig {
    /// Draws an architecture with input `≤ 8×8×1`, at most three backbone
    /// convolutions, `L ≤ 8`, `C ≤ 3` and `K ≤ 2`.
    pub fn sample<R: Rng>(rng: &mut R) -> Self {
        let h = rng.random_range(3..=8);
        let w = rng.random_range(3..=8);
        let depth = rng.random_range(1..=3);
        let mut convs = Vec::with_capacity(depth);
        let (mut ch, mut cw) = (h, w);
        for _ in 0..depth {
            let kernel = if rng.random_bool(0.7) { 3 } else { 1 };
            let padding = kernel / 2;
            let stride = if ch >= 4 && cw >= 4 && rng.random_bool(0.3) {
                2
            } else {
                1
            };
            ch = (ch + 2 * padding - kernel) / stride + 1;
            cw = (cw + 2 * padding - kernel) / stride + 1;
            convs.push(ConvConfig {
                kernel,
                stride,
                padding,
                out_channels: rng.random_range(1..=4),
                activation: if rng.random_bool(0.8) {
                    Activation::Relu
                } else {
                    Activation::None
                },
            });
        }
        Self {
            input: [h, w, 1],
            convs,
            latent: rng.random_range(1..=8),
            classes: rng.random_range(1..=3),
            per_class: rng.random_range(1..=2),
        }
    }

    /// [`DeskConfig::sample`] from a ChaCha8 stream seeded with `seed`.
    pub fn from_seed(seed: u64) -> Self {
        Self::sample(&mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// `8×8×1` input, two 3×3 stride-1 convolutions, `L = 4`, two classes of two prototypes.
    pub fn reference() -> Self {
        let conv = ConvConfig {
            kernel: 3,
            stride: 1,
            padding: 1,
            out_channels: 4,
            activation: Activation::Relu,
        };
        Self {
            input: [8, 8, 1],
            convs: vec![conv, conv],
            latent: 4,
            classes: 2,
            per_class: 2,
        }
    }

    pub fn prototypes(&self) -> usize {
        self.classes * self.per_class
    }
}

fn he_tensor<R: Rng>(rng: &mut R, shape: Vec<usize>, fan_in: usize) -> Result<Tensor> {
    let normal = Normal::new(0.0, libm::sqrt(2.0 / fan_in as f64))
        .map_err(|_| Error::InvalidArgument("zero fan-in".into()))?;
    let len = shape.iter().product();
    Tensor::new(shape, (0..len).map(|_| normal.sample(rng)).collect())
}

fn small_bias<R: Rng>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(0.0..0.1)).collect()
}

/// Own-class `-1`, other-class `+0.5` classifier for `C` classes of `K` prototypes.
pub fn desk_classifier(classes: usize, per_class: usize) -> Classifier {
    let count = classes * per_class;
    let mut weights = Vec::with_capacity(classes * count);
    for c in 0..classes {
        for p in 0..count {
            weights.push(if p / per_class == c {
                OWN_CLASS_WEIGHT
            } else {
                OTHER_CLASS_WEIGHT
            });
        }
    }
    Classifier {
        weights: Tensor::new(vec![classes, count], weights).expect("shape matches data"),
        bias: None,
    }
}

/// Pre-activation statistics targeted by the calibration of each layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub hidden_mean: f64,
    pub hidden_std: f64,
    pub latent_mean: f64,
    pub latent_std: f64,
    /// Images drawn to measure the statistics.
    pub images: usize,
}

impl Default for Calibration {
    fn default() -> Self {
        Self {
            hidden_mean: 0.5,
            hidden_std: 1.0,
            latent_mean: 0.5,
            latent_std: 0.3,
            images: 16,
        }
    }
}

/// Rescales each output channel of `layer` so its pre-activation over `batch`
/// has the requested mean and standard deviation; constant channels only shift.
fn calibrate(layer: &mut Layer, batch: &[Tensor], mean: f64, std: f64) -> Result<Vec<Tensor>> {
    let LayerKind::Conv2d {
        kernel,
        stride,
        padding,
    } = &mut layer.kind
    else {
        return Err(Error::InvalidArgument(
            "desk models only contain convolutions".into(),
        ));
    };
    let cout = kernel.shape()[3];
    let outputs: Vec<Tensor> = batch
        .iter()
        .map(|x| ops::conv2d(x, kernel, &layer.bias, *stride, *padding))
        .collect::<Result<_>>()?;
    let mut sum = vec![0.0; cout];
    let mut sum_sq = vec![0.0; cout];
    let mut count = 0.0;
    for out in &outputs {
        for (e, v) in out.data().iter().enumerate() {
            sum[e % cout] += v;
            sum_sq[e % cout] += v * v;
        }
        count += (out.len() / cout) as f64;
    }
    let mut scale = vec![1.0; cout];
    let mut shift = vec![0.0; cout];
    for co in 0..cout {
        let m = sum[co] / count;
        let sd = libm::sqrt((sum_sq[co] / count - m * m).max(0.0));
        if sd > 1e-9 {
            scale[co] = std / sd;
        }
        shift[co] = mean - scale[co] * m;
    }
    for (e, w) in kernel.data_mut().iter_mut().enumerate() {
        *w *= scale[e % cout];
    }
    for co in 0..cout {
        layer.bias[co] = scale[co] * layer.bias[co] + shift[co];
    }
    outputs
        .into_iter()
        .map(|out| {
            let data = out
                .data()
                .iter()
                .enumerate()
                .map(|(e, v)| scale[e % cout] * v + shift[e % cout])
                .collect();
            Ok(protopnet::apply_activation(
                Tensor::new(out.shape().to_vec(), data)?,
                layer.activation,
            ))
        })
        .collect()
}

/// Random model for `config`: He-scaled convolutions, a relu/relu1 extractor
/// and prototypes drawn uniformly from `[0, 1]^L`.
///
/// Every layer is then calibrated on random images so its pre-activations
/// have the [`Calibration::default`] statistics, which keeps units from
/// dying or saturating.
pub fn random_model(config: &DeskConfig, seed: u64) -> Result<ModelSpec> {
    random_model_with(config, seed, Some(Calibration::default()))
}

/// [`random_model`] with explicit calibration, or none.
pub fn random_model_with(
    config: &DeskConfig,
    seed: u64,
    calibration: Option<Calibration>,
) -> Result<ModelSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cin = config.input[2];
    let mut backbone = Vec::with_capacity(config.convs.len());
    for conv in &config.convs {
        let fan_in = conv.kernel * conv.kernel * cin;
        let kernel = he_tensor(
            &mut rng,
            vec![conv.kernel, conv.kernel, cin, conv.out_channels],
            fan_in,
        )?;
        let bias = small_bias(&mut rng, conv.out_channels);
        backbone.push(Layer::conv2d(
            kernel,
            bias,
            conv.stride,
            conv.padding,
            conv.activation,
        ));
        cin = conv.out_channels;
    }
    let l = config.latent;
    let first = he_tensor(&mut rng, vec![1, 1, cin, l], cin)?;
    let first_bias = small_bias(&mut rng, l);
    let second = he_tensor(&mut rng, vec![1, 1, l, l], l)?;
    let second_bias = small_bias(&mut rng, l);
    let mut extractor = vec![
        Layer::conv2d(first, first_bias, 1, 0, Activation::Relu),
        Layer::conv2d(second, second_bias, 1, 0, Activation::Relu1),
    ];
    if let Some(cal) = calibration {
        let mut batch = random_images(config.input, cal.images, seed ^ 0xca1b_0000);
        for layer in backbone.iter_mut().chain(extractor.iter_mut().take(1)) {
            batch = calibrate(layer, &batch, cal.hidden_mean, cal.hidden_std)?;
        }
        calibrate(&mut extractor[1], &batch, cal.latent_mean, cal.latent_std)?;
    }
    let count = config.prototypes();
    let values = (0..count * l).map(|_| rng.random_range(0.0..1.0)).collect();
    let prototypes = PrototypeSet::new(config.per_class, config.classes, l, values)?;
    ModelSpec::new(
        config.input,
        backbone,
        extractor,
        prototypes,
        desk_classifier(config.classes, config.per_class),
    )
}

/// `count` images of `shape` with entries uniform in `[0, 1)`.
pub fn random_images(shape: [usize; 3], count: usize, seed: u64) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = shape.iter().product::<usize>();
    (0..count)
        .map(|_| {
            let data = (0..len).map(|_| rng.random_range(0.0..1.0)).collect();
            Tensor::image(shape[0], shape[1], shape[2], data).expect("shape matches data")
        })
        .collect()
}

/// `per_class` random images for each class, labels cycling `0, 1, .., C-1`.
pub fn training_set(model: &ModelSpec, per_class: usize, seed: u64) -> Vec<LabeledImage> {
    let classes = model.classes();
    random_images(model.input_shape(), classes * per_class, seed)
        .into_iter()
        .enumerate()
        .map(|(i, image)| LabeledImage {
            image,
            label: i % classes,
        })
        .collect()
}

/// Random model whose prototypes are projected onto a random training set.
pub fn projected_model(
    config: &DeskConfig,
    images_per_class: usize,
    seed: u64,
) -> Result<(ModelSpec, Vec<LabeledImage>)> {
    let model = random_model(config, seed)?;
    let training = training_set(&model, images_per_class, seed.wrapping_add(1));
    let projected = project_prototypes(&model, &training)?;
    Ok((model.with_prototypes(projected)?, training))
}
