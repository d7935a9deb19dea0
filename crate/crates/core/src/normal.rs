//! Standard normal helpers and a half-line truncated normal sampler.

use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use statrs::function::erf::{erfc, erfc_inv};

/// Standardized bound beyond which the inverse-CDF method hands over to
/// rejection sampling.
pub const INVERSE_CDF_LIMIT: f64 = 5.0;

/// Which half-line the draw is restricted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// `(-inf, 0]`
    NonPositive,
    /// `[0, inf)`
    NonNegative,
}

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal quantile.
pub fn std_normal_quantile(p: f64) -> f64 {
    -SQRT_2 * erfc_inv(2.0 * p)
}

pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Log density of `N(0, var)` at `x`.
pub fn normal_ln_pdf(x: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + x * x / var)
}

/// Draws from `N(mean, sd^2)` restricted to the half-line `side`.
///
/// The standardized bound `a` selects the method: inverse CDF on the tail
/// side when `|a| < 5`, Robert's exponential proposal when `a >= 5` and plain
/// rejection from the untruncated law when `a <= -5`.
pub fn sample_truncated_normal<G: Rng + ?Sized>(mean: f64, sd: f64, side: Side, rng: &mut G) -> f64 {
    debug_assert!(sd > 0.0);
    // Reduce to Z >= a with Z standard normal.
    let (mu, sign) = match side {
        Side::NonNegative => (mean, 1.0),
        Side::NonPositive => (-mean, -1.0),
    };
    let a = -mu / sd;
    let z = standard_lower_truncated(a, rng);
    let x = sign * (mu + sd * z);
    // Keep the draw on the closed half-line despite rounding.
    match side {
        Side::NonNegative => x.max(0.0),
        Side::NonPositive => x.min(0.0),
    }
}

fn standard_lower_truncated<G: Rng + ?Sized>(a: f64, rng: &mut G) -> f64 {
    if a >= INVERSE_CDF_LIMIT {
        let alpha = 0.5 * (a + (a * a + 4.0).sqrt());
        let exp = Exp::new(alpha).expect("alpha is positive");
        loop {
            let z = a + exp.sample(rng);
            let u: f64 = rng.random();
            if u <= (-0.5 * (z - alpha) * (z - alpha)).exp() {
                return z;
            }
        }
    } else if a <= -INVERSE_CDF_LIMIT {
        loop {
            let z: f64 = rng.sample(StandardNormal);
            if z >= a {
                return z;
            }
        }
    } else {
        // Phi(-z) = u * Phi(-a) keeps precision in the upper tail.
        let u = 1.0 - rng.random::<f64>();
        let z = -std_normal_quantile(u * std_normal_cdf(-a));
        z.max(a)
    }
}

/// Analytic mean and variance of `N(mean, sd^2)` truncated to `side`.
pub fn truncated_normal_moments(mean: f64, sd: f64, side: Side) -> (f64, f64) {
    let (mu, sign) = match side {
        Side::NonNegative => (mean, 1.0),
        Side::NonPositive => (-mean, -1.0),
    };
    let a = -mu / sd;
    let tail = std_normal_cdf(-a);
    let lambda = std_normal_pdf(a) / tail;
    let m = mu + sd * lambda;
    let v = sd * sd * (1.0 + a * lambda - lambda * lambda);
    (sign * m, v)
}
