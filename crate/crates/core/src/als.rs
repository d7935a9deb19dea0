//! CP decomposition by alternating least squares.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{numeric_err, param_err, Result};
use crate::kruskal::{
    contract_last, expanded_residual_ss, hadamard_except, khatri_rao, mttkrp_last, mttkrp_lead, CPFactors,
};
use crate::tensor::DenseTensor;

/// Outcome of an ALS run.
#[derive(Debug, Clone)]
pub struct AlsFit {
    pub factors: CPFactors,
    pub iterations: usize,
    /// `1 - ||X - Xhat|| / ||X||` at the last iteration.
    pub fit: f64,
}

/// Largest admissible rank: no tensor has CP rank above `prod(J) / max(J)`.
pub fn max_rank(dims: &[usize]) -> usize {
    let total: usize = dims.iter().product();
    total / dims.iter().copied().max().unwrap_or(1)
}

/// CP-ALS with the default start (seed 0).
pub fn cp_als(block: &DenseTensor, rank: usize, max_iters: usize, tol: f64) -> Result<CPFactors> {
    Ok(cp_als_seeded(block, rank, max_iters, tol, 0)?.factors)
}

/// CP-ALS from a seeded `N(0, 1/J_m)` start.
///
/// Each factor update solves its least-squares system with the
/// pseudoinverse of the Hadamard product of the other Gram matrices, so
/// rank-deficient systems still give the minimum-norm solution. Columns are
/// scaled to unit norm after every update and the norms stored as weights.
/// Iteration stops once the fit changes by less than `tol`.
pub fn cp_als_seeded(block: &DenseTensor, rank: usize, max_iters: usize, tol: f64, seed: u64) -> Result<AlsFit> {
    if block.order() < 2 {
        return Err(param_err!("ALS needs a tensor of order >= 2"));
    }
    let limit = max_rank(block.dims());
    if rank == 0 || rank > limit {
        return Err(param_err!("rank {rank} outside 1..={limit} for dims {:?}", block.dims()));
    }
    if max_iters == 0 {
        return Err(param_err!("max_iters must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = CPFactors::random(block.dims(), rank, &mut rng)?;
    als_from(block, f, max_iters, tol)
}

/// CP-ALS starting from given factors.
pub fn als_from(block: &DenseTensor, mut f: CPFactors, max_iters: usize, tol: f64) -> Result<AlsFit> {
    let norm_sq = block.norm_sq();
    let norm = norm_sq.sqrt();
    let last = block.order() - 1;
    // Fold the starting weights into the last factor.
    for r in 0..f.rank() {
        let w = f.weights[r];
        f.factors[last].column_mut(r).scale_mut(w);
        f.weights[r] = 1.0;
    }
    let mut grams = f.grams();
    let mut fit = 0.0;
    let mut iterations = 0;
    for it in 0..max_iters {
        iterations = it + 1;
        let y = contract_last(block, &f.factors[last]);
        let mut ml = DMatrix::zeros(0, 0);
        for m in 0..=last {
            let mt = if m < last {
                mttkrp_lead(&y, &f.factors[..last], m)
            } else {
                ml = mttkrp_last(block, &khatri_rao(&f.factors[..last]));
                ml.clone()
            };
            let v = hadamard_except(&grams, Some(m));
            let pinv = pseudo_inverse(v)?;
            let mut a = mt * pinv;
            let norms = normalize_columns(&mut a);
            f.factors[m] = a;
            f.weights = norms;
            grams[m] = f.factors[m].tr_mul(&f.factors[m]);
        }
        let ss = expanded_residual_ss(norm_sq, &f, &ml, &grams);
        if !ss.is_finite() {
            return Err(numeric_err!("ALS diverged"));
        }
        let new_fit = if norm > 0.0 { 1.0 - ss.sqrt() / norm } else { 1.0 };
        let change = (new_fit - fit).abs();
        fit = new_fit;
        if it > 0 && change < tol {
            break;
        }
    }
    Ok(AlsFit { factors: f, iterations, fit })
}

fn pseudo_inverse(v: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let scale = v.amax().max(f64::MIN_POSITIVE);
    v.pseudo_inverse(1e-12 * scale)
        .map_err(|e| numeric_err!("pseudoinverse failed: {e}"))
}

/// Scales columns to unit norm in place and returns the norms. Zero columns stay zero.
fn normalize_columns(a: &mut DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(
        a.ncols(),
        a.column_iter_mut().map(|mut c| {
            let n = c.norm();
            if n > 0.0 {
                c /= n;
            }
            n
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kruskal::{cp_reconstruct, residual_ss};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn planted(dims: &[usize], rank: usize, seed: u64) -> DenseTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = CPFactors::new(
            DVector::from_fn(rank, |r, _| 1.0 + r as f64),
            dims.iter()
                .map(|&j| DMatrix::from_fn(j, rank, |_, _| rng.sample::<f64, _>(StandardNormal)))
                .collect(),
        )
        .unwrap();
        cp_reconstruct(&f).unwrap()
    }

    fn rel_err(x: &DenseTensor, f: &CPFactors) -> f64 {
        residual_ss(x, f).sqrt() / x.frobenius_norm()
    }

    #[test]
    fn exact_rank_one_is_recovered() {
        let x = planted(&[5, 4, 6], 1, 1);
        let f = cp_als(&x, 1, 100, 1e-14).unwrap();
        assert!(rel_err(&x, &f) < 1e-8);
    }

    #[test]
    fn exact_rank_three_within_500_iterations() {
        let x = planted(&[20, 20, 20], 3, 2);
        let fit = cp_als_seeded(&x, 3, 500, 1e-12, 0).unwrap();
        assert!(fit.iterations <= 500);
        assert!(rel_err(&x, &fit.factors) < 1e-4);
    }

    #[test]
    fn columns_have_unit_norm() {
        let x = planted(&[6, 5, 4], 2, 3);
        let f = cp_als(&x, 2, 50, 1e-10).unwrap();
        for a in &f.factors {
            for c in a.column_iter() {
                assert!((c.norm() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pathological_ranks_are_rejected() {
        let x = planted(&[3, 4, 2], 1, 4);
        assert!(cp_als(&x, 0, 10, 1e-6).is_err());
        assert!(cp_als(&x, 24, 10, 1e-6).is_err());
        assert!(cp_als(&x, 6, 10, 1e-6).is_ok());
        assert!(cp_als(&x, 7, 10, 1e-6).is_err());
    }

    #[test]
    fn rank_deficient_system_uses_pseudoinverse() {
        // rank-1 data fitted with rank 3 makes the Gram products near singular
        let x = planted(&[4, 4, 4], 1, 5);
        let f = cp_als(&x, 3, 200, 1e-12).unwrap();
        assert!(f.weights.iter().all(|w| w.is_finite()));
        assert!(rel_err(&x, &f) < 1e-6);
    }

    #[test]
    fn zero_tensor_gives_zero_reconstruction() {
        let x = DenseTensor::zeros(vec![3, 3, 3]).unwrap();
        let f = cp_als(&x, 2, 10, 1e-8).unwrap();
        assert!(cp_reconstruct(&f).unwrap().data().iter().all(|v| *v == 0.0));
    }
}
