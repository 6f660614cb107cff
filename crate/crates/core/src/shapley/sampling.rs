use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AttributionMap, CoalitionGame, Method, SetFunctionSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SampledValues {
    pub values: Vec<f64>,
    /// Standard error of each estimate (sample std of marginals over `√permutations`).
    pub std_error: Vec<f64>,
}

/// Monte-Carlo Shapley estimate from uniformly drawn player orderings.
pub fn sampled_values<G: CoalitionGame + ?Sized>(
    game: &G,
    permutations: usize,
    seed: u64,
) -> Result<SampledValues> {
    if permutations == 0 {
        return Err(Error::InvalidArgument(
            "permutations must be at least 1".into(),
        ));
    }
    let n = game.players();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut coalition = vec![false; n];
    let empty = game.value(&coalition)?;
    let mut sum = vec![0.0; n];
    let mut sum_sq = vec![0.0; n];
    for _ in 0..permutations {
        order.shuffle(&mut rng);
        coalition.iter_mut().for_each(|m| *m = false);
        let mut prev = empty;
        for &player in &order {
            coalition[player] = true;
            let next = game.value(&coalition)?;
            let marginal = next - prev;
            sum[player] += marginal;
            sum_sq[player] += marginal * marginal;
            prev = next;
        }
    }
    let m = permutations as f64;
    let values: Vec<f64> = sum.iter().map(|s| s / m).collect();
    let std_error = sum_sq
        .iter()
        .zip(&values)
        .map(|(sq, mean)| {
            if permutations < 2 {
                return 0.0;
            }
            let var = ((sq - m * mean * mean) / (m - 1.0)).max(0.0);
            libm::sqrt(var / m)
        })
        .collect();
    Ok(SampledValues { values, std_error })
}

/// Permutation-sampling attribution of a masked-input set function.
pub fn sampled_shapley(
    spec: &SetFunctionSpec<'_>,
    permutations: usize,
    seed: u64,
) -> Result<AttributionMap> {
    let est = sampled_values(spec, permutations, seed)?;
    spec.map(est.values, Method::Sampler, Some(est.std_error))
}
