use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::explain::{explain, ExplainOptions};
use crate::model::ModelSpec;
use crate::protopnet::{self, LabeledImage};
use crate::shapley::{feature_shape, AttributionMap, Granularity, Method, Target};
use crate::tensor::Tensor;

/// Value written into removed features.
pub const REMOVAL_VALUE: f64 = 0.0;

/// Distances of one prototype to its source image under progressive feature removal.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationCurve {
    pub prototype: usize,
    pub class: usize,
    pub index: usize,
    /// Training-set index of the source image.
    pub source_image: usize,
    /// The first `T` features in removal order.
    pub removed: Vec<usize>,
    /// `s(t)` for `t = 0..=T`.
    pub distances: Vec<f64>,
    /// `s(0) - s(t)` for `t = 1..=T`.
    pub terms: Vec<f64>,
}

impl PerturbationCurve {
    pub fn steps(&self) -> usize {
        self.terms.len()
    }

    pub fn sum(&self) -> f64 {
        self.terms.iter().sum()
    }
}

/// Removes the `steps` most relevant features one at a time and records the prototype distance.
pub fn perturbation_curve(
    model: &ModelSpec,
    prototype: usize,
    source_image: &Tensor,
    attribution: &AttributionMap,
    steps: usize,
) -> Result<PerturbationCurve> {
    let protos = model.prototypes();
    if prototype >= protos.len() {
        return Err(Error::PrototypeOutOfRange {
            index: prototype,
            count: protos.len(),
        });
    }
    let provenance = *protos
        .provenance(prototype)
        .ok_or(Error::MissingProvenance { prototype })?;
    model.check_input(source_image.shape())?;
    let expected = feature_shape(source_image.shape(), attribution.granularity);
    if attribution.shape != expected {
        return Err(Error::ShapeMismatch {
            op: "attribution vs source image",
            left: attribution.shape.clone(),
            right: expected,
        });
    }
    let features = attribution.values.len();
    if steps > features {
        return Err(Error::InvalidArgument(alloc::format!(
            "{steps} removal steps requested for {features} features"
        )));
    }
    let order = attribution.ranking();
    let channels = source_image.shape()[2];
    let mut image = source_image.clone();
    let first = protopnet::forward(model, &image)?.distances.values[prototype];
    let mut distances = alloc::vec![first];
    let mut terms = Vec::with_capacity(steps);
    for &feature in &order[..steps] {
        let data = image.data_mut();
        match attribution.granularity {
            Granularity::Pixel => {
                data[feature * channels..(feature + 1) * channels].fill(REMOVAL_VALUE)
            }
            Granularity::Scalar => data[feature] = REMOVAL_VALUE,
        }
        let s = protopnet::forward(model, &image)?.distances.values[prototype];
        distances.push(s);
        terms.push(first - s);
    }
    Ok(PerturbationCurve {
        prototype,
        class: provenance.class,
        index: provenance.index,
        source_image: provenance.image,
        removed: order[..steps].to_vec(),
        distances,
        terms,
    })
}

/// One curve per prototype, each on its own source image with the map of `method`.
///
/// `steps` defaults to [`super::default_steps`] of the feature count.
pub fn method_curves(
    model: &ModelSpec,
    training: &[LabeledImage],
    method: Method,
    options: &ExplainOptions,
    steps: Option<usize>,
) -> Result<Vec<PerturbationCurve>> {
    let protos = model.prototypes();
    (0..protos.len())
        .map(|p| {
            let provenance = protos
                .provenance(p)
                .ok_or(Error::MissingProvenance { prototype: p })?;
            let source = training.get(provenance.image).ok_or_else(|| {
                Error::InvalidArgument(alloc::format!(
                    "prototype {p} comes from training image {} but only {} were given",
                    provenance.image,
                    training.len()
                ))
            })?;
            let map = explain(model, &source.image, Target::Distance(p), method, options)?;
            let t = steps.unwrap_or_else(|| super::default_steps(map.values.len()));
            perturbation_curve(model, p, &source.image, &map, t)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// Triple sum divided by `C + K + T - 1`.
    PaperLiteral,
    /// Triple sum divided by `C · K · T`.
    PerTerm,
}

impl Normalization {
    pub fn name(self) -> &'static str {
        match self {
            Normalization::PaperLiteral => "paper",
            Normalization::PerTerm => "per-term",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AopcScore {
    pub normalization: Normalization,
    pub score: f64,
    /// Sum of every stored term.
    pub total: f64,
    /// Distinct classes among the curves.
    pub classes: usize,
    /// Largest number of curves for one class.
    pub per_class: usize,
    pub curves: usize,
    pub steps: usize,
}

/// AOPC over curves that share one step count.
pub fn aopc(curves: &[PerturbationCurve], normalization: Normalization) -> Result<AopcScore> {
    let steps = curves.first().ok_or(Error::Empty("aopc"))?.steps();
    if curves.iter().any(|c| c.steps() != steps) {
        return Err(Error::InvalidArgument(
            "curves have different step counts".into(),
        ));
    }
    let mut per_class_count: BTreeMap<usize, usize> = BTreeMap::new();
    for c in curves {
        *per_class_count.entry(c.class).or_default() += 1;
    }
    let classes = per_class_count.len();
    let per_class = per_class_count.values().copied().max().unwrap_or(0);
    let total: f64 = curves.iter().map(PerturbationCurve::sum).sum();
    let divisor = match normalization {
        Normalization::PaperLiteral => (classes + per_class + steps - 1) as f64,
        Normalization::PerTerm => (classes * per_class * steps) as f64,
    };
    let score = if divisor > 0.0 { total / divisor } else { 0.0 };
    Ok(AopcScore {
        normalization,
        score,
        total,
        classes,
        per_class,
        curves: curves.len(),
        steps,
    })
}

/// Scores of one explanation method under both normalizations.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodAopc {
    pub curves: Vec<PerturbationCurve>,
    pub paper: AopcScore,
    pub per_term: AopcScore,
}

impl MethodAopc {
    pub fn new(curves: Vec<PerturbationCurve>) -> Result<Self> {
        let paper = aopc(&curves, Normalization::PaperLiteral)?;
        let per_term = aopc(&curves, Normalization::PerTerm)?;
        Ok(Self {
            curves,
            paper,
            per_term,
        })
    }
}

/// Faithful-versus-legacy AOPC comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct AopcReport {
    pub faith: MethodAopc,
    pub legacy: MethodAopc,
    /// Prototypes whose faithful curve sum is strictly below the legacy one.
    pub faith_better: usize,
}

impl AopcReport {
    /// Pairs curves by position; both lists must cover the same prototypes.
    pub fn compare(faith: Vec<PerturbationCurve>, legacy: Vec<PerturbationCurve>) -> Result<Self> {
        if faith.len() != legacy.len()
            || faith
                .iter()
                .zip(&legacy)
                .any(|(a, b)| a.prototype != b.prototype)
        {
            return Err(Error::InvalidArgument(
                "curve lists cover different prototypes".into(),
            ));
        }
        let faith_better = faith
            .iter()
            .zip(&legacy)
            .filter(|(a, b)| a.sum() < b.sum())
            .count();
        Ok(Self {
            faith: MethodAopc::new(faith)?,
            legacy: MethodAopc::new(legacy)?,
            faith_better,
        })
    }

    /// DASP against the legacy map on every prototype's source image.
    pub fn evaluate(
        model: &ModelSpec,
        training: &[LabeledImage],
        options: &ExplainOptions,
        steps: Option<usize>,
    ) -> Result<Self> {
        let faith = method_curves(model, training, Method::Dasp, options, steps)?;
        let legacy = method_curves(model, training, Method::Legacy, options, steps)?;
        Self::compare(faith, legacy)
    }

    pub fn prototypes(&self) -> usize {
        self.faith.curves.len()
    }

    /// Faithful AOPC strictly below legacy under both normalizations.
    pub fn faith_wins(&self) -> bool {
        self.faith.paper.score < self.legacy.paper.score
            && self.faith.per_term.score < self.legacy.per_term.score
    }

    /// Faithful-over-legacy paper-literal AOPC ratio, for information.
    pub fn ratio(&self) -> f64 {
        self.faith.paper.score / self.legacy.paper.score
    }
}
