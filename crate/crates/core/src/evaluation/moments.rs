//! Monte-Carlo validation of the closed-form moments.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::gauss::{g_min_pool, g_sq_l2_distance, relu1_moments, relu_moments, Gaussian};
use crate::ops::{relu1_scalar, relu_scalar};
use crate::special::{cdf, pdf};

/// Smallest accepted sample count.
pub const MIN_SAMPLES: usize = 10_000;
/// Standard errors allowed for the exact closed forms.
pub const Z_LIMIT: f64 = 4.0;
/// Relative mean envelope for Clark's min-pool approximation.
pub const CLARK_RELATIVE_ENVELOPE: f64 = 0.05;
/// Absolute agreement required when every sample is identical and no standard error exists.
pub const DEGENERATE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentKind {
    Relu,
    Relu1,
    QuadraticForm,
    MinPool,
}

impl MomentKind {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "relu" => Ok(Self::Relu),
            "relu1" => Ok(Self::Relu1),
            "quadratic" => Ok(Self::QuadraticForm),
            "minpool" => Ok(Self::MinPool),
            other => Err(Error::InvalidArgument(format!(
                "unknown layer kind '{other}' (expected relu, relu1, quadratic or minpool)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Relu => "relu",
            Self::Relu1 => "relu1",
            Self::QuadraticForm => "quadratic",
            Self::MinPool => "minpool",
        }
    }

    /// Whether the closed form is exact (gated at [`Z_LIMIT`]) or an approximation.
    pub fn is_exact(self) -> bool {
        !matches!(self, Self::MinPool)
    }

    /// Reference grid for this kind.
    ///
    /// Activations use μ ∈ {-3, -2.5, ..., 3} × σ ∈ 8 evenly spaced values in
    /// `[0.1, 3]`; the quadratic form uses 50 random `(m, Σ)` with `L ≤ 16`;
    /// the min-pool uses 12 random sets of four Gaussians.
    pub fn default_grid(self, seed: u64) -> Vec<MomentCase> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_6a1d);
        match self {
            Self::Relu | Self::Relu1 => {
                let mut cases = Vec::with_capacity(104);
                for i in 0..13 {
                    let mu = -3.0 + 0.5 * i as f64;
                    for j in 0..8 {
                        let sigma = 0.1 + (3.0 - 0.1) * j as f64 / 7.0;
                        let g = Gaussian::new(mu, sigma * sigma);
                        cases.push(if self == Self::Relu {
                            MomentCase::Relu(g)
                        } else {
                            MomentCase::Relu1(g)
                        });
                    }
                }
                cases
            }
            Self::QuadraticForm => (0..50)
                .map(|_| {
                    let l = rng.random_range(1..=16);
                    let mean = (0..l).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let var = (0..l).map(|_| rng.random_range(0.0..0.5)).collect();
                    MomentCase::QuadraticForm { mean, var }
                })
                .collect(),
            Self::MinPool => (0..12)
                .map(|_| {
                    let inputs = (0..4)
                        .map(|_| {
                            Gaussian::new(rng.random_range(1.0..4.0), rng.random_range(0.01..1.0))
                        })
                        .collect();
                    MomentCase::MinPool(inputs)
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MomentCase {
    Relu(Gaussian),
    Relu1(Gaussian),
    /// `Σ_l z_l²` for independent `z_l ~ N(mean_l, var_l)` (prototype at the origin).
    QuadraticForm {
        mean: Vec<f64>,
        var: Vec<f64>,
    },
    MinPool(Vec<Gaussian>),
}

impl MomentCase {
    pub fn kind(&self) -> MomentKind {
        match self {
            Self::Relu(_) => MomentKind::Relu,
            Self::Relu1(_) => MomentKind::Relu1,
            Self::QuadraticForm { .. } => MomentKind::QuadraticForm,
            Self::MinPool(_) => MomentKind::MinPool,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Self::Relu(g) | Self::Relu1(g) => format!("mu={} sigma={}", g.mean, g.std()),
            Self::QuadraticForm { mean, .. } => format!("L={}", mean.len()),
            Self::MinPool(inputs) => {
                let parts: Vec<String> = inputs
                    .iter()
                    .map(|g| format!("({},{})", g.mean, g.var))
                    .collect();
                parts.join(" ")
            }
        }
    }

    pub fn closed_form(&self) -> Result<Gaussian> {
        match self {
            Self::Relu(g) => relu_moments(*g),
            Self::Relu1(g) => relu1_moments(*g),
            Self::QuadraticForm { mean, var } => {
                g_sq_l2_distance(mean, var, &alloc::vec![0.0; mean.len()])
            }
            Self::MinPool(inputs) => g_min_pool(inputs),
        }
    }

    /// Fourth central moment implied by the closed form, for the standard error
    /// of the variance under the hypothesis that the closed form is right.
    /// `None` for the min-pool, whose closed form is an approximation.
    pub fn null_fourth_moment(&self, closed: Gaussian) -> Option<f64> {
        match self {
            Self::Relu(g) => Some(clipped_fourth(*g, closed.mean, None)),
            Self::Relu1(g) => Some(clipped_fourth(*g, closed.mean, Some(1.0))),
            Self::QuadraticForm { mean, var } => {
                // cumulants of Σ z_l²: κ_r = 2^(r-1) (r-1)! Σ (v^r + r m² v^(r-1))
                let k2 = closed.var;
                let k4: f64 = 48.0
                    * mean
                        .iter()
                        .zip(var)
                        .map(|(&m, &v)| v * v * v * v + 4.0 * m * m * v * v * v)
                        .sum::<f64>();
                Some(k4 + 3.0 * k2 * k2)
            }
            Self::MinPool(_) => None,
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let mut draw = |g: &Gaussian| {
            let z: f64 = rng.sample(StandardNormal);
            g.mean + g.std() * z
        };
        match self {
            Self::Relu(g) => relu_scalar(draw(g)),
            Self::Relu1(g) => relu1_scalar(draw(g)),
            Self::QuadraticForm { mean, var } => mean
                .iter()
                .zip(var)
                .map(|(&m, &v)| {
                    let y = draw(&Gaussian::new(m, v));
                    y * y
                })
                .sum(),
            Self::MinPool(inputs) => inputs.iter().map(&mut draw).fold(f64::INFINITY, f64::min),
        }
    }
}

/// `∫_a^b z^j φ(z) dz` for `j = 0..=4`.
fn partial_moments(a: f64, b: f64) -> [f64; 5] {
    let edge = |x: f64, j: i32| {
        if x.is_infinite() {
            0.0
        } else {
            libm::pow(x, j as f64) * pdf(x)
        }
    };
    let mut m = [0.0; 5];
    m[0] = cdf(b) - cdf(a);
    m[1] = pdf(a) - pdf(b);
    for j in 2..5 {
        m[j] = (j - 1) as f64 * m[j - 2] + edge(a, j as i32 - 1) - edge(b, j as i32 - 1);
    }
    m
}

/// `E[(Y - m)^4]` for `Y = clamp(X, 0, upper)` with `X` Gaussian, expanded about `m` to avoid cancellation.
fn clipped_fourth(g: Gaussian, m: f64, upper: Option<f64>) -> f64 {
    let s = g.std();
    if s == 0.0 {
        return 0.0;
    }
    let a = -g.mean / s;
    let b = upper.map_or(f64::INFINITY, |u| (u - g.mean) / s);
    let j = partial_moments(a, b);
    let c = g.mean - m;
    let binom = [1.0, 4.0, 6.0, 4.0, 1.0];
    let linear: f64 = (0..5)
        .map(|k| binom[k] * libm::pow(c, (4 - k) as f64) * libm::pow(s, k as f64) * j[k])
        .sum();
    let below = libm::pow(m, 4.0) * cdf(a);
    let above = upper.map_or(0.0, |u| libm::pow(u - m, 4.0) * (1.0 - cdf(b)));
    (linear + below + above).max(0.0)
}

/// Closed form against Monte Carlo for one case.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentCheck {
    pub case: MomentCase,
    pub closed: Gaussian,
    pub mc_mean: f64,
    pub mc_var: f64,
    pub se_mean: f64,
    pub se_var: f64,
    /// `|closed - mc| / se`; 0 when both agree within [`DEGENERATE_TOLERANCE`] and no standard error exists.
    pub z_mean: f64,
    pub z_var: f64,
    /// `|closed - mc| / |mc|` on the mean.
    pub relative_mean: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentReport {
    pub samples: usize,
    pub seed: u64,
    pub checks: Vec<MomentCheck>,
}

impl MomentReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn max_z_mean(&self) -> f64 {
        self.checks.iter().map(|c| c.z_mean).fold(0.0, f64::max)
    }

    pub fn max_z_var(&self) -> f64 {
        self.checks.iter().map(|c| c.z_var).fold(0.0, f64::max)
    }
}

fn z_score(diff: f64, se: f64) -> f64 {
    if se > 0.0 {
        diff.abs() / se
    } else if diff.abs() <= DEGENERATE_TOLERANCE {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Compares every case's closed form with `samples` Monte-Carlo draws.
///
/// Case `i` uses its own stream seeded from `(seed, i)`. The mean's standard
/// error is the larger of the sampled one and `√(V_closed / n)`; the
/// variance's is the larger of the sampled and the closed-form fourth central
/// moment, so a sample that misses a rare tail cannot claim a zero error.
pub fn validate_moments(cases: &[MomentCase], samples: usize, seed: u64) -> Result<MomentReport> {
    if samples < MIN_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "moment validation needs at least {MIN_SAMPLES} samples, got {samples}"
        )));
    }
    let n = samples as f64;
    let mut checks = Vec::with_capacity(cases.len());
    for (idx, case) in cases.iter().enumerate() {
        let closed = case.closed_form()?;
        let mut rng = ChaCha8Rng::seed_from_u64(
            seed.wrapping_add((idx as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)),
        );
        let draws: Vec<f64> = (0..samples).map(|_| case.sample(&mut rng)).collect();
        // shifted by the first draw so a constant sample has its exact mean
        let mean = draws[0] + draws.iter().map(|x| x - draws[0]).sum::<f64>() / n;
        let (m2, m4) = draws.iter().fold((0.0, 0.0), |(a, b), &x| {
            let d = (x - mean) * (x - mean);
            (a + d, b + d * d)
        });
        let var = m2 / (n - 1.0);
        let m4 = m4 / n;
        let se_mean = libm::sqrt(var.max(closed.var) / n);
        let null_m4 = case
            .null_fourth_moment(closed)
            .map_or(0.0, |m| m - closed.var * closed.var);
        let se_var = libm::sqrt(((m4 - var * var).max(null_m4) / n).max(0.0));
        let z_mean = z_score(closed.mean - mean, se_mean);
        let z_var = z_score(closed.var - var, se_var);
        let relative_mean = if mean != 0.0 {
            (closed.mean - mean).abs() / mean.abs()
        } else {
            (closed.mean - mean).abs()
        };
        let pass = if case.kind().is_exact() {
            z_mean <= Z_LIMIT && z_var <= Z_LIMIT
        } else {
            (closed.mean - mean).abs() <= CLARK_RELATIVE_ENVELOPE * mean.abs() + Z_LIMIT * se_mean
        };
        checks.push(MomentCheck {
            case: case.clone(),
            closed,
            mc_mean: mean,
            mc_var: var,
            se_mean,
            se_var,
            z_mean,
            z_var,
            relative_mean,
            pass,
        });
    }
    Ok(MomentReport {
        samples,
        seed,
        checks,
    })
}
