//! Deterministic forward pass, prototype distances, contribution scores,
//! losses and prototype projection.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{Activation, Layer, LayerKind, ModelSpec, PrototypeSet, Provenance};
use crate::ops::{self, log_softmax};
use crate::tensor::Tensor;

/// Minimum squared L2 distance of every prototype to the latent map.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceVector {
    pub values: Vec<f64>,
    /// Latent position `(row, col)` attaining each minimum.
    pub argmin: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// `(Z ∘ V)(image)`, shape `[H', W', L]`.
    pub latent: Tensor,
    pub distances: DistanceVector,
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
}

/// Additive decomposition of `log P(y = c | I)` over the `K` prototypes of class `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContributionScores {
    pub class: usize,
    /// `Ψ_k` for `k = 0..K`.
    pub psi: Vec<f64>,
    /// Term shared equally by every `Ψ_k`: `-log R / K` plus any
    /// cross-class and bias contributions divided by `K`.
    pub shared: f64,
    pub log_probability: f64,
}

/// Coefficients of the cluster and separation costs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub cluster: f64,
    pub separation: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            cluster: 0.5,
            separation: 0.5,
        }
    }
}

impl LossConfig {
    pub fn new(cluster: f64, separation: f64) -> Result<Self> {
        if !(cluster.is_finite() && separation.is_finite() && cluster >= 0.0 && separation >= 0.0) {
            return Err(Error::InvalidArgument(
                "loss coefficients must be finite and nonnegative".into(),
            ));
        }
        Ok(Self {
            cluster,
            separation,
        })
    }
}

/// Legacy epsilon for [`legacy_activation`].
pub const LEGACY_EPSILON: f64 = 1e-4;

pub(crate) fn apply_activation(x: Tensor, activation: Activation) -> Tensor {
    match activation {
        Activation::None => x,
        Activation::Relu => ops::relu(&x),
        Activation::Relu1 => ops::relu1(&x),
    }
}

fn apply_layer(layer: &Layer, x: &Tensor) -> Result<Tensor> {
    let linear = match &layer.kind {
        LayerKind::Conv2d {
            kernel,
            stride,
            padding,
        } => ops::conv2d(x, kernel, &layer.bias, *stride, *padding)?,
        LayerKind::Affine { weights } => {
            let y = ops::affine(x, weights, &layer.bias)?;
            let n = y.len();
            y.reshape(vec![1, 1, n])?
        }
    };
    Ok(apply_activation(linear, layer.activation))
}

fn run_stage(layers: &[Layer], mut x: Tensor, stage: &'static str) -> Result<Tensor> {
    for (idx, layer) in layers.iter().enumerate() {
        x = apply_layer(layer, &x).map_err(|e| match e {
            Error::NonFinite { .. } => Error::NonFiniteLayer { stage, layer: idx },
            other => other,
        })?;
    }
    Ok(x)
}

/// Output of the backbone `V` alone.
pub fn backbone(model: &ModelSpec, image: &Tensor) -> Result<Tensor> {
    model.check_input(image.shape())?;
    run_stage(model.backbone(), image.clone(), "backbone")
}

/// `(Z ∘ V)(image)`.
pub fn latent(model: &ModelSpec, image: &Tensor) -> Result<Tensor> {
    let v = backbone(model, image)?;
    run_stage(model.extractor(), v, "extractor")
}

/// Squared L2 distance between `prototype` and every latent vector, row-major over `(H', W')`.
pub fn distance_map(latent: &Tensor, prototype: &[f64]) -> Result<Vec<f64>> {
    let (h, w, l) = latent.hwc()?;
    if l != prototype.len() {
        return Err(Error::ShapeMismatch {
            op: "distance map",
            left: latent.shape().to_vec(),
            right: vec![prototype.len()],
        });
    }
    let mut out = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            out.push(squared_distance(latent.pixel(i, j), prototype));
        }
    }
    Ok(out)
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = y - x;
        acc += d * d;
    }
    acc
}

/// Per-prototype minimum distance; ties go to the smallest row, then column.
pub fn distances(latent: &Tensor, prototypes: &PrototypeSet) -> Result<DistanceVector> {
    let (_, w, _) = latent.hwc()?;
    let mut values = Vec::with_capacity(prototypes.len());
    let mut argmin = Vec::with_capacity(prototypes.len());
    for p in 0..prototypes.len() {
        let map = distance_map(latent, prototypes.value(p))?;
        let (pos, best) = min_first(&map);
        values.push(best);
        argmin.push((pos / w, pos % w));
    }
    Ok(DistanceVector { values, argmin })
}

fn min_first(values: &[f64]) -> (usize, f64) {
    let mut best = (0, values[0]);
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < best.1 {
            best = (i, v);
        }
    }
    best
}

/// Logits `W s + b` from the distance vector.
pub fn classify(model: &ModelSpec, distances: &[f64]) -> Result<Vec<f64>> {
    let cls = model.classifier();
    let zero;
    let bias = match &cls.bias {
        Some(b) => b.as_slice(),
        None => {
            zero = vec![0.0; model.classes()];
            zero.as_slice()
        }
    };
    let input = Tensor::vector(distances.to_vec())?;
    Ok(ops::affine(&input, &cls.weights, bias)?.into_data())
}

pub fn forward(model: &ModelSpec, image: &Tensor) -> Result<ForwardOutput> {
    let latent = latent(model, image)?;
    let distances = distances(&latent, model.prototypes())?;
    let logits = classify(model, &distances.values)?;
    let probabilities = log_softmax(&logits)?.into_iter().map(libm::exp).collect();
    Ok(ForwardOutput {
        latent,
        distances,
        logits,
        probabilities,
    })
}

/// Splits `log P(y = class | I)` into one score per own-class prototype.
///
/// With the stored weights applied to raw distances, the own-class term of
/// prototype `k` is `a'_{c,(c,k)} s_{(c,k)}`; everything else in
/// `logit_c - logsumexp(logits)` is split evenly over the `K` prototypes.
pub fn contribution_scores(
    model: &ModelSpec,
    distances: &DistanceVector,
    class: usize,
) -> Result<ContributionScores> {
    let classes = model.classes();
    if class >= classes {
        return Err(Error::ClassOutOfRange { class, classes });
    }
    let protos = model.prototypes();
    if distances.values.len() != protos.len() {
        return Err(Error::ShapeMismatch {
            op: "contribution scores",
            left: vec![distances.values.len()],
            right: vec![protos.len()],
        });
    }
    let logits = classify(model, &distances.values)?;
    let log_probability = log_softmax(&logits)?[class];
    let k = protos.per_class();
    let own: Vec<f64> = (0..k)
        .map(|idx| {
            let p = protos.index(class, idx);
            model.classifier().weight(class, p) * distances.values[p]
        })
        .collect();
    let own_sum: f64 = own.iter().sum();
    let shared = (log_probability - own_sum) / k as f64;
    Ok(ContributionScores {
        class,
        psi: own.into_iter().map(|o| o + shared).collect(),
        shared,
        log_probability,
    })
}

/// `log((s + 1) / (s + ε))`.
pub fn legacy_activation(distance: f64, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument("epsilon must be positive".into()));
    }
    if !(distance >= 0.0) {
        return Err(Error::InvalidArgument(
            "distance must be nonnegative".into(),
        ));
    }
    Ok(libm::log((distance + 1.0) / (distance + epsilon)))
}

fn class_min(
    latent: &Tensor,
    prototypes: &PrototypeSet,
    keep: impl Fn(usize) -> bool,
) -> Result<Option<f64>> {
    let dist = distances(latent, prototypes)?;
    Ok((0..prototypes.len())
        .filter(|&p| keep(prototypes.class_of(p)))
        .map(|p| dist.values[p])
        .reduce(f64::min))
}

/// Minimum distance between the latent map and any prototype of class `label`.
pub fn cluster_loss(latent: &Tensor, prototypes: &PrototypeSet, label: usize) -> Result<f64> {
    let classes = prototypes.classes();
    if label >= classes {
        return Err(Error::ClassOutOfRange {
            class: label,
            classes,
        });
    }
    class_min(latent, prototypes, |c| c == label)?.ok_or(Error::Empty("cluster loss"))
}

/// Minimum distance between the latent map and any prototype of another class.
pub fn separation_loss(latent: &Tensor, prototypes: &PrototypeSet, label: usize) -> Result<f64> {
    let classes = prototypes.classes();
    if label >= classes {
        return Err(Error::ClassOutOfRange {
            class: label,
            classes,
        });
    }
    class_min(latent, prototypes, |c| c != label)?.ok_or(Error::NoOtherClassPrototypes)
}

/// Cross-entropy plus weighted cluster and separation costs, evaluated without gradients.
pub fn total_loss(
    model: &ModelSpec,
    image: &Tensor,
    label: usize,
    config: LossConfig,
) -> Result<f64> {
    let out = forward(model, image)?;
    let classes = model.classes();
    if label >= classes {
        return Err(Error::ClassOutOfRange {
            class: label,
            classes,
        });
    }
    let ce = -log_softmax(&out.logits)?[label];
    let clst = cluster_loss(&out.latent, model.prototypes(), label)?;
    let sep = if classes > 1 {
        separation_loss(&out.latent, model.prototypes(), label)?
    } else {
        0.0
    };
    Ok(ce + config.cluster * clst + config.separation * sep)
}

/// A training image and its class label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub image: Tensor,
    pub label: usize,
}

/// Replaces each prototype by its closest latent vector among the training
/// images of its own class.
///
/// Ties go to the earliest image, then the smallest row and column.
pub fn project_prototypes(model: &ModelSpec, training: &[LabeledImage]) -> Result<PrototypeSet> {
    let protos = model.prototypes();
    let classes = protos.classes();
    let mut latents: Vec<Vec<(usize, Tensor)>> = vec![Vec::new(); classes];
    for (idx, item) in training.iter().enumerate() {
        if item.label >= classes {
            return Err(Error::ClassOutOfRange {
                class: item.label,
                classes,
            });
        }
        latents[item.label].push((idx, latent(model, &item.image)?));
    }
    if let Some(class) = latents.iter().position(Vec::is_empty) {
        return Err(Error::ClassWithoutImages { class });
    }

    let l = protos.channels();
    let mut values = Vec::with_capacity(protos.values().len());
    let mut provenance = Vec::with_capacity(protos.len());
    for p in 0..protos.len() {
        let class = protos.class_of(p);
        let target = protos.value(p);
        let mut best: Option<(f64, usize, usize, usize)> = None;
        for (image, z) in &latents[class] {
            let (h, w, _) = z.hwc()?;
            for i in 0..h {
                for j in 0..w {
                    let d = squared_distance(z.pixel(i, j), target);
                    if best.is_none_or(|b| d < b.0) {
                        best = Some((d, *image, i, j));
                    }
                }
            }
        }
        let (_, image, row, col) = best.expect("class has at least one image");
        let z = &latents[class]
            .iter()
            .find(|(idx, _)| *idx == image)
            .expect("image present")
            .1;
        values.extend_from_slice(&z.pixel(row, col)[..l]);
        provenance.push(Some(Provenance {
            class,
            index: p % protos.per_class(),
            image,
            row,
            col,
        }));
    }
    PrototypeSet::new(protos.per_class(), classes, l, values)?.with_provenance(provenance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Classifier;

    fn identity_kernel(c: usize) -> Tensor {
        let mut k = vec![0.0; c * c];
        for i in 0..c {
            k[i * c + i] = 1.0;
        }
        Tensor::new(vec![1, 1, c, c], k).unwrap()
    }

    fn pointwise_model(
        h: usize,
        w: usize,
        c: usize,
        prototypes: PrototypeSet,
        weights: Vec<f64>,
    ) -> ModelSpec {
        let classes = prototypes.classes();
        let count = prototypes.len();
        ModelSpec::new(
            [h, w, c],
            vec![],
            vec![
                Layer::conv2d(identity_kernel(c), vec![0.0; c], 1, 0, Activation::None),
                Layer::conv2d(identity_kernel(c), vec![0.0; c], 1, 0, Activation::Relu1),
            ],
            prototypes,
            Classifier {
                weights: Tensor::new(vec![classes, count], weights).unwrap(),
                bias: None,
            },
        )
        .unwrap()
    }

    #[test]
    fn constant_latent_equal_to_prototypes_gives_zero_distance() {
        let protos = PrototypeSet::new(1, 2, 2, vec![0.3, 0.7, 0.3, 0.7]).unwrap();
        let model = pointwise_model(2, 2, 2, protos, vec![-1.0, 0.5, 0.5, -1.0]);
        let img = Tensor::image(2, 2, 2, [0.3, 0.7].repeat(4)).unwrap();
        let out = forward(&model, &img).unwrap();
        assert_eq!(out.distances.values, vec![0.0, 0.0]);
        assert_eq!(out.distances.argmin, vec![(0, 0), (0, 0)]);
    }

    #[test]
    fn single_class_probability_is_one() {
        let protos = PrototypeSet::new(2, 1, 1, vec![0.1, 0.9]).unwrap();
        let model = pointwise_model(2, 1, 1, protos, vec![-1.0, -3.0]);
        let img = Tensor::image(2, 1, 1, vec![0.4, 0.2]).unwrap();
        let out = forward(&model, &img).unwrap();
        assert_eq!(out.probabilities, vec![1.0]);
        let scores = contribution_scores(&model, &out.distances, 0).unwrap();
        assert_eq!(scores.log_probability, 0.0);
        assert!(scores.psi.iter().sum::<f64>().abs() < 1e-15);
    }

    #[test]
    fn distance_to_far_prototype() {
        let latent = Tensor::zeros(vec![2, 2, 4]);
        let protos = PrototypeSet::new(1, 1, 4, vec![1.0; 4]).unwrap();
        let d = distances(&latent, &protos).unwrap();
        assert_eq!(d.values, vec![4.0]);
        assert_eq!(d.argmin, vec![(0, 0)]);
    }

    #[test]
    fn distance_channel_mismatch() {
        let latent = Tensor::zeros(vec![2, 2, 3]);
        let protos = PrototypeSet::new(1, 1, 4, vec![1.0; 4]).unwrap();
        assert!(matches!(
            distances(&latent, &protos),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn symmetric_scores() {
        // all distances and weights equal: log P = -ln C, Ψ_k = -ln(C) / K
        let protos = PrototypeSet::new(2, 3, 1, vec![0.5; 6]).unwrap();
        let model = pointwise_model(1, 1, 1, protos, vec![-0.7; 18]);
        let out = forward(&model, &Tensor::image(1, 1, 1, vec![0.2]).unwrap()).unwrap();
        let scores = contribution_scores(&model, &out.distances, 1).unwrap();
        let ln3 = libm::log(3.0);
        assert!((scores.log_probability + ln3).abs() < 1e-12);
        for psi in scores.psi {
            assert!((psi + ln3 / 2.0).abs() < 1e-12);
        }
        assert!(matches!(
            contribution_scores(&model, &out.distances, 3),
            Err(Error::ClassOutOfRange {
                class: 3,
                classes: 3
            })
        ));
    }

    #[test]
    fn own_class_only_weights_give_log_ratio_form() {
        // with no cross-class weights the shared term is exactly -log R / K
        let protos = PrototypeSet::new(2, 2, 1, vec![0.1, 0.8, 0.4, 0.6]).unwrap();
        let a = [0.9, 1.3, 0.5, 2.0];
        let weights = vec![-a[0], -a[1], 0.0, 0.0, 0.0, 0.0, -a[2], -a[3]];
        let model = pointwise_model(1, 2, 1, protos, weights);
        let out = forward(&model, &Tensor::image(1, 2, 1, vec![0.3, 0.7]).unwrap()).unwrap();
        let s = &out.distances.values;
        let e0 = -a[0] * s[0] - a[1] * s[1];
        let e1 = -a[2] * s[2] - a[3] * s[3];
        let log_r = libm::log(libm::exp(e0) + libm::exp(e1));
        let scores = contribution_scores(&model, &out.distances, 0).unwrap();
        assert!((scores.shared + log_r / 2.0).abs() < 1e-12);
        assert!((scores.psi[0] - (-a[0] * s[0] - log_r / 2.0)).abs() < 1e-12);
        assert!((scores.psi[1] - (-a[1] * s[1] - log_r / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn legacy_activation_values() {
        let v = legacy_activation(0.0, 1e-4).unwrap();
        assert!((v - libm::log(1e4)).abs() < 1e-12);
        assert!((v - 9.2103).abs() < 1e-4);
        assert!(legacy_activation(1e12, 1e-4).unwrap() > 0.0);
        assert!(legacy_activation(1e12, 1e-4).unwrap() < 1e-11);
        assert_eq!(legacy_activation(3.0, 1.0).unwrap(), 0.0);
        assert!(legacy_activation(1.0, 0.0).is_err());
        assert!(legacy_activation(1.0, -1.0).is_err());
        let mut prev = f64::INFINITY;
        for s in [0.0, 0.1, 0.5, 1.0, 4.0, 100.0] {
            let v = legacy_activation(s, LEGACY_EPSILON).unwrap();
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn loss_cases() {
        let protos = PrototypeSet::new(1, 2, 1, vec![0.25, 0.75]).unwrap();
        let latent = Tensor::image(1, 2, 1, vec![0.25, 0.5]).unwrap();
        assert_eq!(cluster_loss(&latent, &protos, 0).unwrap(), 0.0);
        assert_eq!(separation_loss(&latent, &protos, 0).unwrap(), 0.0625);
        assert!(cluster_loss(&latent, &protos, 2).is_err());

        let single = PrototypeSet::new(2, 1, 1, vec![0.25, 0.75]).unwrap();
        assert_eq!(
            separation_loss(&latent, &single, 0),
            Err(Error::NoOtherClassPrototypes)
        );
        assert!(LossConfig::new(-0.1, 0.5).is_err());
        assert_eq!(LossConfig::default(), LossConfig::new(0.5, 0.5).unwrap());
    }

    #[test]
    fn projection_single_image_per_class() {
        let protos = PrototypeSet::new(1, 2, 1, vec![0.9, 0.1]).unwrap();
        let model = pointwise_model(1, 3, 1, protos, vec![-1.0, 0.5, 0.5, -1.0]);
        let training = vec![
            LabeledImage {
                image: Tensor::image(1, 3, 1, vec![0.2, 0.6, 0.4]).unwrap(),
                label: 0,
            },
            LabeledImage {
                image: Tensor::image(1, 3, 1, vec![0.5, 0.3, 0.35]).unwrap(),
                label: 1,
            },
        ];
        let projected = project_prototypes(&model, &training).unwrap();
        assert_eq!(projected.values(), &[0.6, 0.3]);
        let rec = projected.provenance(1).unwrap();
        assert_eq!(
            (rec.class, rec.index, rec.image, rec.row, rec.col),
            (1, 0, 1, 0, 1)
        );

        let projected_model = model.with_prototypes(projected.clone()).unwrap();
        assert_eq!(
            project_prototypes(&projected_model, &training).unwrap(),
            projected
        );
    }

    #[test]
    fn projection_requires_every_class() {
        let protos = PrototypeSet::new(1, 2, 1, vec![0.9, 0.1]).unwrap();
        let model = pointwise_model(1, 1, 1, protos, vec![-1.0, 0.5, 0.5, -1.0]);
        let training = vec![LabeledImage {
            image: Tensor::image(1, 1, 1, vec![0.2]).unwrap(),
            label: 0,
        }];
        assert_eq!(
            project_prototypes(&model, &training),
            Err(Error::ClassWithoutImages { class: 1 })
        );
    }

    #[test]
    fn forward_reports_non_finite_layer() {
        let protos = PrototypeSet::new(1, 1, 1, vec![0.5]).unwrap();
        let big = Tensor::new(vec![1, 1, 1, 1], vec![1e300]).unwrap();
        let model = ModelSpec::new(
            [1, 1, 1],
            vec![
                Layer::conv2d(big.clone(), vec![0.0], 1, 0, Activation::None),
                Layer::conv2d(big, vec![0.0], 1, 0, Activation::None),
            ],
            vec![
                Layer::conv2d(identity_kernel(1), vec![0.0], 1, 0, Activation::None),
                Layer::conv2d(identity_kernel(1), vec![0.0], 1, 0, Activation::Relu1),
            ],
            protos,
            Classifier {
                weights: Tensor::new(vec![1, 1], vec![-1.0]).unwrap(),
                bias: None,
            },
        )
        .unwrap();
        let err = forward(&model, &Tensor::image(1, 1, 1, vec![1.0]).unwrap()).unwrap_err();
        assert_eq!(
            err,
            Error::NonFiniteLayer {
                stage: "backbone",
                layer: 1
            }
        );
    }
}
