use alloc::vec;
use alloc::vec::Vec;

use super::{AttributionMap, CoalitionGame, Method, SetFunctionSpec};
use crate::error::{Error, Result};

/// Largest player count accepted by exact enumeration.
pub const EXACT_FEATURE_LIMIT: usize = 20;

/// `|S|! (n - |S| - 1)! / n!`, computed as `1 / (n · C(n-1, |S|))`.
pub fn shapley_weight(players: usize, size: usize) -> f64 {
    let mut binom = 1.0;
    for j in 0..size {
        binom = binom * (players - 1 - j) as f64 / (j + 1) as f64;
    }
    1.0 / (players as f64 * binom)
}

/// Exact Shapley values by enumerating all `2^n` coalitions.
pub fn exact_values<G: CoalitionGame + ?Sized>(game: &G) -> Result<Vec<f64>> {
    let n = game.players();
    if n > EXACT_FEATURE_LIMIT {
        return Err(Error::TooManyFeatures {
            features: n,
            limit: EXACT_FEATURE_LIMIT,
        });
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let total = 1usize << n;
    let mut coalition = vec![false; n];
    let mut values = Vec::with_capacity(total);
    for mask in 0..total {
        for (i, member) in coalition.iter_mut().enumerate() {
            *member = mask & (1 << i) != 0;
        }
        values.push(game.value(&coalition)?);
    }
    let weights: Vec<f64> = (0..n).map(|s| shapley_weight(n, s)).collect();
    let mut psi = vec![0.0; n];
    for (i, out) in psi.iter_mut().enumerate() {
        let bit = 1usize << i;
        let mut acc = 0.0;
        for mask in (0..total).filter(|m| m & bit == 0) {
            let size = mask.count_ones() as usize;
            acc += weights[size] * (values[mask | bit] - values[mask]);
        }
        *out = acc;
    }
    Ok(psi)
}

/// Exact Shapley attribution of a masked-input set function.
pub fn exact_shapley(spec: &SetFunctionSpec<'_>) -> Result<AttributionMap> {
    let values = exact_values(spec)?;
    spec.map(values, Method::Oracle, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_one_over_sizes() {
        // Σ_s C(n-1, s) w(s) = 1
        for n in 1..=20 {
            let mut total = 0.0;
            let mut binom = 1.0;
            for s in 0..n {
                total += binom * shapley_weight(n, s);
                binom = binom * (n - 1 - s) as f64 / (s + 1) as f64;
            }
            assert!((total - 1.0).abs() < 1e-12, "n = {n}");
        }
        assert_eq!(shapley_weight(3, 0), 1.0 / 3.0);
        assert_eq!(shapley_weight(3, 1), 1.0 / 6.0);
    }

    #[test]
    fn refuses_large_games() {
        let game = (21usize, |_: &[bool]| 0.0);
        assert_eq!(
            exact_values(&game),
            Err(Error::TooManyFeatures {
                features: 21,
                limit: 20
            })
        );
    }

    #[test]
    fn glove_game() {
        // v(S) = 1 iff S holds player 0 and one of players 1, 2
        let game = (
            3usize,
            |s: &[bool]| if s[0] && (s[1] || s[2]) { 1.0 } else { 0.0 },
        );
        let psi = exact_values(&game).unwrap();
        assert!((psi[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((psi[1] - 1.0 / 6.0).abs() < 1e-15);
        assert!((psi[2] - 1.0 / 6.0).abs() < 1e-15);
    }
}
