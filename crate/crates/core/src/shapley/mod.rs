//! Shapley attribution of masked-input set functions.
//!
//! Three engines share one set-function definition: players are input
//! features (a pixel with all its channels, or a single scalar), and the value
//! of a coalition is the model target evaluated with every absent feature
//! replaced by the baseline.

mod dasp;
mod exact;
mod sampling;

pub use dasp::{coalition_schedule, dasp_shapley, dasp_shapley_batch, CoalitionModel, DaspConfig};
pub use exact::{exact_shapley, exact_values, shapley_weight, EXACT_FEATURE_LIMIT};
pub use sampling::{sampled_shapley, sampled_values, SampledValues};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::protopnet;
use crate::tensor::Tensor;

/// A cooperative game over `players()` players.
pub trait CoalitionGame {
    fn players(&self) -> usize;

    /// Value of the coalition whose members are flagged `true`.
    fn value(&self, coalition: &[bool]) -> Result<f64>;
}

impl<F> CoalitionGame for (usize, F)
where
    F: Fn(&[bool]) -> f64,
{
    fn players(&self) -> usize {
        self.0
    }

    fn value(&self, coalition: &[bool]) -> Result<f64> {
        Ok((self.1)(coalition))
    }
}

/// Scalar of the network being explained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    /// Minimum distance of prototype `c * K + k`.
    Distance(usize),
    Logit(usize),
    /// One entry of the latent map `(Z ∘ V)(I)`.
    Latent {
        row: usize,
        col: usize,
        channel: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Granularity {
    /// One player per spatial site, covering all channels.
    #[default]
    Pixel,
    /// One player per scalar element.
    Scalar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Oracle,
    Sampler,
    Dasp,
    Legacy,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Oracle => "oracle",
            Method::Sampler => "sampler",
            Method::Dasp => "faith",
            Method::Legacy => "legacy",
        }
    }
}

/// Masked-input set function `f̂`.
#[derive(Debug, Clone)]
pub struct SetFunctionSpec<'a> {
    pub model: &'a ModelSpec,
    pub target: Target,
    pub image: &'a Tensor,
    pub baseline: f64,
    pub granularity: Granularity,
}

impl<'a> SetFunctionSpec<'a> {
    /// Pixel granularity, baseline 0.
    pub fn new(model: &'a ModelSpec, target: Target, image: &'a Tensor) -> Result<Self> {
        Self::with_options(model, target, image, 0.0, Granularity::Pixel)
    }

    pub fn with_options(
        model: &'a ModelSpec,
        target: Target,
        image: &'a Tensor,
        baseline: f64,
        granularity: Granularity,
    ) -> Result<Self> {
        model.check_input(image.shape())?;
        if !baseline.is_finite() {
            return Err(Error::InvalidArgument("baseline must be finite".into()));
        }
        validate_target(model, target)?;
        Ok(Self {
            model,
            target,
            image,
            baseline,
            granularity,
        })
    }

    /// `|P|`.
    pub fn features(&self) -> usize {
        feature_count(self.image.shape(), self.granularity)
    }

    /// Image with every feature outside the coalition set to the baseline.
    pub fn masked_image(&self, coalition: &[bool]) -> Tensor {
        let c = self.image.shape()[2];
        let mut img = self.image.clone();
        for (e, v) in img.data_mut().iter_mut().enumerate() {
            let f = match self.granularity {
                Granularity::Pixel => e / c,
                Granularity::Scalar => e,
            };
            if !coalition[f] {
                *v = self.baseline;
            }
        }
        img
    }

    pub fn evaluate(&self, image: &Tensor) -> Result<f64> {
        evaluate_target(self.model, self.target, image)
    }

    /// `f̂(P) - f̂(∅)`.
    pub fn total_effect(&self) -> Result<f64> {
        let n = self.features();
        Ok(self.value(&vec![true; n])? - self.value(&vec![false; n])?)
    }

    fn map(
        &self,
        values: Vec<f64>,
        method: Method,
        std_error: Option<Vec<f64>>,
    ) -> Result<AttributionMap> {
        let residual = values.iter().sum::<f64>() - self.total_effect()?;
        Ok(AttributionMap {
            shape: feature_shape(self.image.shape(), self.granularity),
            values,
            method,
            target: self.target,
            granularity: self.granularity,
            baseline: self.baseline,
            residual,
            std_error,
        })
    }
}

impl CoalitionGame for SetFunctionSpec<'_> {
    fn players(&self) -> usize {
        self.features()
    }

    fn value(&self, coalition: &[bool]) -> Result<f64> {
        self.evaluate(&self.masked_image(coalition))
    }
}

pub(crate) fn validate_target(model: &ModelSpec, target: Target) -> Result<()> {
    match target {
        Target::Distance(p) => {
            let count = model.prototypes().len();
            if p >= count {
                return Err(Error::PrototypeOutOfRange { index: p, count });
            }
        }
        Target::Logit(c) => {
            let classes = model.classes();
            if c >= classes {
                return Err(Error::ClassOutOfRange { class: c, classes });
            }
        }
        Target::Latent { row, col, channel } => {
            let [h, w, l] = model.latent_shape();
            if row >= h || col >= w || channel >= l {
                return Err(Error::InvalidArgument(format!(
                    "latent position ({row}, {col}, {channel}) outside latent shape {:?}",
                    [h, w, l]
                )));
            }
        }
    }
    Ok(())
}

pub(crate) fn evaluate_target(model: &ModelSpec, target: Target, image: &Tensor) -> Result<f64> {
    match target {
        Target::Latent { row, col, channel } => {
            Ok(protopnet::latent(model, image)?.at3(row, col, channel))
        }
        Target::Distance(p) => Ok(protopnet::forward(model, image)?.distances.values[p]),
        Target::Logit(c) => Ok(protopnet::forward(model, image)?.logits[c]),
    }
}

pub(crate) fn feature_count(image: &[usize], granularity: Granularity) -> usize {
    match granularity {
        Granularity::Pixel => image[0] * image[1],
        Granularity::Scalar => image.iter().product(),
    }
}

pub(crate) fn feature_shape(image: &[usize], granularity: Granularity) -> Vec<usize> {
    match granularity {
        Granularity::Pixel => vec![image[0], image[1]],
        Granularity::Scalar => image.to_vec(),
    }
}

/// Per-feature attribution laid out like the image.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMap {
    /// `[H, W]` for pixel granularity, `[H, W, C]` for scalar granularity.
    pub shape: Vec<usize>,
    /// Row-major attribution, one entry per feature.
    pub values: Vec<f64>,
    pub method: Method,
    pub target: Target,
    pub granularity: Granularity,
    pub baseline: f64,
    /// `Σψ - (f̂(P) - f̂(∅))`.
    pub residual: f64,
    /// Per-feature standard error, for sampled estimates.
    pub std_error: Option<Vec<f64>>,
}

impl AttributionMap {
    /// Relevance used to rank features: larger means more responsible for the
    /// prototype match.
    ///
    /// Removing a feature that a distance attribution credits with a negative
    /// value increases the distance, so distance-targeted Shapley maps are
    /// negated. Legacy maps already score similarity.
    pub fn relevance(&self) -> Vec<f64> {
        match (self.method, self.target) {
            (Method::Legacy, _) => self.values.clone(),
            (_, Target::Distance(_)) => self.values.iter().map(|v| -v).collect(),
            _ => self.values.clone(),
        }
    }

    /// Feature indices by decreasing relevance, ties in row-major order.
    pub fn ranking(&self) -> Vec<usize> {
        let rel = self.relevance();
        let mut order: Vec<usize> = (0..rel.len()).collect();
        order.sort_by(|&a, &b| rel[b].total_cmp(&rel[a]).then(a.cmp(&b)));
        order
    }
}

/// Attribution of logit `class` from per-distance maps, by linearity of the classifier.
pub fn attribution_for_logit(
    maps: &[AttributionMap],
    model: &ModelSpec,
    class: usize,
) -> Result<AttributionMap> {
    let classes = model.classes();
    if class >= classes {
        return Err(Error::ClassOutOfRange { class, classes });
    }
    let first = maps.first().ok_or(Error::Empty("attribution maps"))?;
    let mut values = vec![0.0; first.values.len()];
    let mut residual = 0.0;
    for map in maps {
        if map.shape != first.shape
            || map.baseline != first.baseline
            || map.granularity != first.granularity
        {
            return Err(Error::InconsistentMaps(
                "maps differ in layout or baseline".into(),
            ));
        }
        if map.method != first.method {
            return Err(Error::InconsistentMaps(
                "maps come from different methods".into(),
            ));
        }
        let Target::Distance(p) = map.target else {
            return Err(Error::InconsistentMaps(
                "every map must target a prototype distance".into(),
            ));
        };
        if p >= model.prototypes().len() {
            return Err(Error::PrototypeOutOfRange {
                index: p,
                count: model.prototypes().len(),
            });
        }
        let w = model.classifier().weight(class, p);
        for (acc, v) in values.iter_mut().zip(&map.values) {
            *acc += w * v;
        }
        residual += w * map.residual;
    }
    Ok(AttributionMap {
        shape: first.shape.clone(),
        values,
        method: first.method,
        target: Target::Logit(class),
        granularity: first.granularity,
        baseline: first.baseline,
        residual,
        std_error: None,
    })
}
