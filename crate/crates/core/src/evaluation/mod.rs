//! Perturbation curves, method comparison and moment validation.

mod aopc;
mod fixture;
mod moments;

pub use aopc::{
    aopc, method_curves, perturbation_curve, AopcReport, AopcScore, MethodAopc, Normalization,
    PerturbationCurve, REMOVAL_VALUE,
};
pub use fixture::{counterexample_fixture, COUNTEREXAMPLE_ACTIVATION};
pub use moments::{
    validate_moments, MomentCase, MomentCheck, MomentKind, MomentReport, CLARK_RELATIVE_ENVELOPE,
    DEGENERATE_TOLERANCE, MIN_SAMPLES, Z_LIMIT,
};

use alloc::vec;
use alloc::vec::Vec;

/// Default removal budget: 10% of the features, rounded up.
pub fn default_steps(features: usize) -> usize {
    features.div_ceil(10)
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Pearson correlation of the average ranks; `None` if either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some(cov / libm::sqrt(va * vb))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_average_ties() {
        assert_eq!(
            average_ranks(&[3.0, 1.0, 3.0, 2.0]),
            vec![3.5, 1.0, 3.5, 2.0]
        );
    }

    #[test]
    fn spearman_cases() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 1.0], &[1.0, 2.0]), None);
    }

    #[test]
    fn default_steps_round_up() {
        assert_eq!(default_steps(9), 1);
        assert_eq!(default_steps(64), 7);
        assert_eq!(default_steps(0), 0);
    }
}
