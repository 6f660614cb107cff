//! One entry point for every explanation method.

use alloc::format;

use crate::error::{Error, Result};
use crate::legacy::{legacy_as_attribution, legacy_map};
use crate::model::ModelSpec;
use crate::shapley::{
    dasp_shapley, exact_shapley, sampled_shapley, AttributionMap, CoalitionModel, DaspConfig,
    Granularity, Method, SetFunctionSpec, Target,
};
use crate::tensor::Tensor;

/// Permutations drawn by the sampler when no budget is given.
pub const DEFAULT_PERMUTATIONS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExplainOptions {
    /// Coalition sizes for DASP, permutations for the sampler; ignored otherwise.
    pub budget: Option<usize>,
    /// Required by the sampler.
    pub seed: Option<u64>,
    pub coalition: CoalitionModel,
    pub baseline: f64,
    pub granularity: Granularity,
}

impl Default for ExplainOptions {
    fn default() -> Self {
        Self {
            budget: None,
            seed: None,
            coalition: CoalitionModel::default(),
            baseline: 0.0,
            granularity: Granularity::Pixel,
        }
    }
}

/// Attribution of `target` for `image` by `method`.
///
/// The legacy map only explains distances, with a zero baseline at pixel
/// granularity.
pub fn explain(
    model: &ModelSpec,
    image: &Tensor,
    target: Target,
    method: Method,
    options: &ExplainOptions,
) -> Result<AttributionMap> {
    let spec =
        SetFunctionSpec::with_options(model, target, image, options.baseline, options.granularity)?;
    if options.budget == Some(0) {
        return Err(Error::InvalidArgument("budget must be at least 1".into()));
    }
    match method {
        Method::Oracle => exact_shapley(&spec),
        Method::Sampler => {
            let seed = options.seed.ok_or_else(|| {
                Error::InvalidArgument("the sampler needs an explicit seed".into())
            })?;
            sampled_shapley(&spec, options.budget.unwrap_or(DEFAULT_PERMUTATIONS), seed)
        }
        Method::Dasp => {
            let mut config = DaspConfig {
                coalition: options.coalition,
                ..DaspConfig::default()
            };
            if let Some(b) = options.budget {
                config.samples = b;
            }
            dasp_shapley(&spec, config)
        }
        Method::Legacy => {
            let Target::Distance(p) = target else {
                return Err(Error::InvalidArgument(format!(
                    "the legacy map explains prototype distances only, not {target:?}"
                )));
            };
            if options.baseline != 0.0 || options.granularity != Granularity::Pixel {
                return Err(Error::InvalidArgument(
                    "the legacy map uses a zero baseline at pixel granularity".into(),
                ));
            }
            Ok(legacy_as_attribution(&legacy_map(model, image, p)?))
        }
    }
}
