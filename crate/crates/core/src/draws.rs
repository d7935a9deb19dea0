use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};

use crate::error::{numeric_err, Result};

/// Gamma draw in shape/rate form.
pub(crate) fn gamma<G: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut G) -> Result<f64> {
    if !(shape > 0.0 && rate > 0.0 && shape.is_finite() && rate.is_finite()) {
        return Err(numeric_err!("invalid gamma parameters shape={shape} rate={rate}"));
    }
    let g = Gamma::new(shape, rate.recip())
        .map_err(|e| numeric_err!("gamma({shape}, {rate}): {e}"))?;
    let v = g.sample(rng);
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        // Shapes below one can underflow to zero.
        Ok(v.max(f64::MIN_POSITIVE))
    }
}

pub(crate) fn beta<G: Rng + ?Sized>(a: f64, b: f64, rng: &mut G) -> Result<f64> {
    let d = Beta::new(a, b).map_err(|e| numeric_err!("beta({a}, {b}): {e}"))?;
    Ok(d.sample(rng).clamp(f64::EPSILON, 1.0 - f64::EPSILON))
}

/// `N(mean, var)`.
pub(crate) fn normal<G: Rng + ?Sized>(mean: f64, var: f64, rng: &mut G) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    mean + var.sqrt() * z
}
