//! Weighted CP (Kruskal) factors and the dense kernels shared by the Gibbs
//! sampler and ALS.
//!
//! A tensor of order `M` is viewed as a `P x n` row-major matrix where `n` is
//! the length of the last mode and `P` the product of the leading modes. Read
//! column-major, the same buffer is the `n x P` unfolding along the last mode,
//! so both contractions below are plain matrix products without copies.

use nalgebra::{DMatrix, DMatrixView, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, shape_err, Result};
use crate::tensor::DenseTensor;

/// `sum_r weights[r] * a_r^(1) o ... o a_r^(M)`.
///
/// When the factors describe a stack of subjects the last matrix is the
/// subject-mode matrix `L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CPFactors {
    pub weights: DVector<f64>,
    pub factors: Vec<DMatrix<f64>>,
}

impl CPFactors {
    pub fn new(weights: DVector<f64>, factors: Vec<DMatrix<f64>>) -> Result<Self> {
        let f = Self { weights, factors };
        f.validate()?;
        Ok(f)
    }

    /// Entries i.i.d. `N(0, 1/J_m)` in mode `m`, unit weights.
    pub fn random<G: Rng + ?Sized>(dims: &[usize], rank: usize, rng: &mut G) -> Result<Self> {
        if rank == 0 {
            return Err(param_err!("rank must be at least 1"));
        }
        if dims.len() < 2 || dims.contains(&0) {
            return Err(shape_err!("need at least two nonempty modes, got {dims:?}"));
        }
        let factors = dims
            .iter()
            .map(|&j| {
                let sd = (j as f64).sqrt().recip();
                DMatrix::from_fn(j, rank, |_, _| sd * rng.sample::<f64, _>(StandardNormal))
            })
            .collect();
        Ok(Self { weights: DVector::from_element(rank, 1.0), factors })
    }

    pub fn rank(&self) -> usize {
        self.weights.len()
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(|a| a.nrows()).collect()
    }

    /// Subject-mode matrix (the last factor).
    pub fn subject(&self) -> &DMatrix<f64> {
        self.factors.last().expect("validated factors are nonempty")
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.weights.len();
        if self.factors.len() < 2 {
            return Err(shape_err!("need at least two factor matrices"));
        }
        for (m, a) in self.factors.iter().enumerate() {
            if a.ncols() != r {
                return Err(shape_err!(
                    "factor {m} has {} columns but there are {r} weights",
                    a.ncols()
                ));
            }
            if a.nrows() == 0 {
                return Err(shape_err!("factor {m} has no rows"));
            }
        }
        Ok(())
    }

    /// Gram matrices `A_m^T A_m`.
    pub fn grams(&self) -> Vec<DMatrix<f64>> {
        self.factors.iter().map(|a| a.tr_mul(a)).collect()
    }
}

/// Dense tensor `sum_r lambda_r a_r^(1) o ... o a_r^(M)`.
pub fn cp_reconstruct(f: &CPFactors) -> Result<DenseTensor> {
    f.validate()?;
    let m = f.order();
    let lead = khatri_rao(&f.factors[..m - 1]);
    let scaled_last = scale_columns(&f.factors[m - 1], f.weights.as_slice());
    // n x P in column-major equals P x n row-major.
    let out = &scaled_last * lead.transpose();
    Ok(DenseTensor::from_parts(f.dims(), out.as_slice().to_vec()))
}

/// Row-wise Khatri-Rao product: row `p` (leading modes flattened, last mode
/// fastest) holds `prod_k A_k[j_k(p), r]`.
pub fn khatri_rao(mats: &[DMatrix<f64>]) -> DMatrix<f64> {
    let r = mats[0].ncols();
    let mut out = mats[0].clone();
    for a in &mats[1..] {
        let rows = out.nrows() * a.nrows();
        let mut next = DMatrix::zeros(rows, r);
        for c in 0..r {
            let prev = out.column(c);
            let col = a.column(c);
            let mut dst = next.column_mut(c);
            let mut p = 0;
            for &x in prev.iter() {
                for &y in col.iter() {
                    dst[p] = x * y;
                    p += 1;
                }
            }
        }
        out = next;
    }
    out
}

pub(crate) fn scale_columns(a: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let mut out = a.clone();
    for (c, &s) in w.iter().enumerate() {
        out.column_mut(c).scale_mut(s);
    }
    out
}

/// The `n x P` last-mode unfolding of a tensor, borrowed.
pub fn last_mode_view(x: &DenseTensor) -> DMatrixView<'_, f64> {
    let n = x.subject_count();
    DMatrixView::from_slice(x.data(), n, x.len() / n)
}

/// Contracts the last mode with `l`: `Y[p, r] = sum_i X[p, i] L[i, r]`.
pub fn contract_last(x: &DenseTensor, l: &DMatrix<f64>) -> DMatrix<f64> {
    last_mode_view(x).tr_mul(l)
}

/// MTTKRP for the last mode given the Khatri-Rao product of the leading factors.
pub fn mttkrp_last(x: &DenseTensor, kr_lead: &DMatrix<f64>) -> DMatrix<f64> {
    last_mode_view(x) * kr_lead
}

/// MTTKRP for leading mode `m` from `Y = contract_last(x, L)`:
/// `M[j, r] = sum_{p : j_m(p) = j} Y[p, r] prod_{k != m} A_k[j_k(p), r]`,
/// where `lead` are the leading (non-last) factors.
pub fn mttkrp_lead(y: &DMatrix<f64>, lead: &[DMatrix<f64>], m: usize) -> DMatrix<f64> {
    let r = y.ncols();
    let jm = lead[m].nrows();
    let before = &lead[..m];
    let after = &lead[m + 1..];
    let kb = if before.is_empty() { None } else { Some(khatri_rao(before)) };
    let ka = if after.is_empty() { None } else { Some(khatri_rao(after)) };
    let nb = kb.as_ref().map_or(1, |k| k.nrows());
    let na = ka.as_ref().map_or(1, |k| k.nrows());
    let mut out = DMatrix::zeros(jm, r);
    let mut tmp = vec![0.0; jm];
    for c in 0..r {
        let yc = y.column(c);
        let yc = yc.as_slice();
        tmp.iter_mut().for_each(|t| *t = 0.0);
        for b in 0..nb {
            let wb = kb.as_ref().map_or(1.0, |k| k[(b, c)]);
            for (j, t) in tmp.iter_mut().enumerate() {
                let base = (b * jm + j) * na;
                let run = &yc[base..base + na];
                let s = match &ka {
                    Some(k) => run.iter().zip(k.column(c).iter()).map(|(u, v)| u * v).sum(),
                    None => run[0],
                };
                *t += wb * s;
            }
        }
        out.column_mut(c).copy_from_slice(&tmp);
    }
    out
}

/// `||X - [[lambda; A_1..A_M]]||^2`, evaluated exactly in column chunks.
pub fn residual_ss(x: &DenseTensor, f: &CPFactors) -> f64 {
    let m = f.order();
    let xv = last_mode_view(x);
    let kr = khatri_rao(&f.factors[..m - 1]);
    let sl = scale_columns(&f.factors[m - 1], f.weights.as_slice());
    let p = kr.nrows();
    const CHUNK: usize = 4096;
    let mut ss = 0.0;
    let mut start = 0;
    while start < p {
        let len = CHUNK.min(p - start);
        let recon = &sl * kr.rows(start, len).transpose();
        let xs = xv.columns(start, len);
        ss += xs
            .iter()
            .zip(recon.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
        start += len;
    }
    ss
}

/// Residual sum of squares from `||X||^2`, the last-mode MTTKRP `ml` (taken
/// with the current leading factors) and the Gram matrices of all factors:
/// `||X||^2 - 2 <X, Xhat> + ||Xhat||^2`, clamped at zero.
pub(crate) fn expanded_residual_ss(x_norm_sq: f64, f: &CPFactors, ml: &DMatrix<f64>, grams: &[DMatrix<f64>]) -> f64 {
    let l = f.subject();
    let lam = &f.weights;
    let cross: f64 = (0..f.rank()).map(|r| lam[r] * l.column(r).dot(&ml.column(r))).sum();
    let quad = lam.dot(&(hadamard_except(grams, None) * lam));
    (x_norm_sq - 2.0 * cross + quad).max(0.0)
}

/// Root mean squared error between two equally shaped tensors.
pub fn rmse(x: &DenseTensor, xhat: &DenseTensor) -> Result<f64> {
    if x.dims() != xhat.dims() {
        return Err(shape_err!("rmse of dims {:?} and {:?}", x.dims(), xhat.dims()));
    }
    let ss: f64 = x
        .data()
        .iter()
        .zip(xhat.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((ss / x.len() as f64).sqrt())
}

/// Entrywise product of all matrices in `grams` except index `skip`.
pub(crate) fn hadamard_except(grams: &[DMatrix<f64>], skip: Option<usize>) -> DMatrix<f64> {
    let r = grams[0].nrows();
    let mut out = DMatrix::from_element(r, r, 1.0);
    for (k, g) in grams.iter().enumerate() {
        if Some(k) != skip {
            out.component_mul_assign(g);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{inner_product, outer_product};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn oracle_reconstruct(f: &CPFactors) -> DenseTensor {
        let dims = f.dims();
        let mut acc = DenseTensor::zeros(dims.clone()).unwrap().into_data();
        for r in 0..f.rank() {
            let vecs: Vec<Vec<f64>> = f.factors.iter().map(|a| a.column(r).iter().copied().collect()).collect();
            let t = outer_product(&vecs).unwrap();
            for (a, b) in acc.iter_mut().zip(t.data()) {
                *a += f.weights[r] * b;
            }
        }
        DenseTensor::new(dims, acc).unwrap()
    }

    fn random_tensor(dims: &[usize], rng: &mut ChaCha8Rng) -> DenseTensor {
        DenseTensor::from_fn(dims.to_vec(), |_| rng.sample(StandardNormal)).unwrap()
    }

    #[test]
    fn rank_one_example() {
        let f = CPFactors::new(
            DVector::from_vec(vec![2.0]),
            vec![DMatrix::from_vec(2, 1, vec![1.0, 0.0]), DMatrix::from_vec(2, 1, vec![0.0, 1.0])],
        )
        .unwrap();
        assert_eq!(cp_reconstruct(&f).unwrap().data(), &[0.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_weights_give_zero_tensor() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut f = CPFactors::random(&[3, 4, 2], 3, &mut rng).unwrap();
        f.weights.fill(0.0);
        assert!(cp_reconstruct(&f).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn random_rank_three_matches_outer_product_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut f = CPFactors::random(&[6, 5, 4], 3, &mut rng).unwrap();
        f.weights = DVector::from_vec(vec![1.5, -0.7, 2.0]);
        let got = cp_reconstruct(&f).unwrap();
        let want = oracle_reconstruct(&f);
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn inconsistent_rank_is_rejected() {
        let f = CPFactors::new(
            DVector::from_vec(vec![1.0, 1.0]),
            vec![DMatrix::zeros(2, 2), DMatrix::zeros(3, 1)],
        );
        assert!(f.is_err());
    }

    #[test]
    fn reconstruction_is_linear_in_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = CPFactors::random(&[3, 3, 4], 2, &mut rng).unwrap();
        let mut f2 = f.clone();
        f2.weights *= 2.0;
        let a = cp_reconstruct(&f).unwrap();
        let b = cp_reconstruct(&f2).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(2.0 * x, *y);
        }
    }

    #[test]
    fn rank_one_inner_product_separates() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut f = CPFactors::random(&[4, 3, 5], 1, &mut rng).unwrap();
        let mut g = CPFactors::random(&[4, 3, 5], 1, &mut rng).unwrap();
        f.weights[0] = 1.3;
        g.weights[0] = -0.4;
        let lhs = inner_product(&cp_reconstruct(&f).unwrap(), &cp_reconstruct(&g).unwrap()).unwrap();
        let rhs: f64 = f
            .factors
            .iter()
            .zip(&g.factors)
            .map(|(a, b)| a.column(0).dot(&b.column(0)))
            .product::<f64>()
            * 1.3
            * -0.4;
        assert!((lhs - rhs).abs() < 1e-12 * (1.0 + rhs.abs()));
    }

    fn mttkrp_oracle(x: &DenseTensor, f: &CPFactors, mode: usize) -> DMatrix<f64> {
        let dims = x.dims().to_vec();
        let mut out = DMatrix::zeros(dims[mode], f.rank());
        let mut idx = vec![0; dims.len()];
        for &v in x.data() {
            for r in 0..f.rank() {
                let mut w = v;
                for (k, a) in f.factors.iter().enumerate() {
                    if k != mode {
                        w *= a[(idx[k], r)];
                    }
                }
                out[(idx[mode], r)] += w;
            }
            crate::tensor::advance(&mut idx, &dims);
        }
        out
    }

    #[test]
    fn mttkrp_kernels_match_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for dims in [vec![3, 4], vec![3, 4, 5], vec![2, 3, 4, 5]] {
            let x = random_tensor(&dims, &mut rng);
            let f = CPFactors::random(&dims, 3, &mut rng).unwrap();
            let m = dims.len();
            let y = contract_last(&x, f.subject());
            for mode in 0..m - 1 {
                let got = mttkrp_lead(&y, &f.factors[..m - 1], mode);
                let want = mttkrp_oracle(&x, &f, mode);
                assert!((got - want).abs().max() < 1e-10, "mode {mode} of {dims:?}");
            }
            let kr = khatri_rao(&f.factors[..m - 1]);
            let got = mttkrp_last(&x, &kr);
            let want = mttkrp_oracle(&x, &f, m - 1);
            assert!((got - want).abs().max() < 1e-10);
        }
    }

    #[test]
    fn residual_ss_matches_direct_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_tensor(&[5, 4, 3], &mut rng);
        let f = CPFactors::random(&[5, 4, 3], 2, &mut rng).unwrap();
        let recon = cp_reconstruct(&f).unwrap();
        let want: f64 = x.data().iter().zip(recon.data()).map(|(a, b)| (a - b).powi(2)).sum();
        assert!((residual_ss(&x, &f) - want).abs() < 1e-10);
    }

    #[test]
    fn rmse_examples() {
        let x = DenseTensor::zeros(vec![2, 2]).unwrap();
        let ones = DenseTensor::new(vec![2, 2], vec![1.0; 4]).unwrap();
        assert_eq!(rmse(&x, &x).unwrap(), 0.0);
        assert_eq!(rmse(&x, &ones).unwrap(), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_tensor(&[3, 4], &mut rng);
        let b = random_tensor(&[3, 4], &mut rng);
        let mut ss = 0.0;
        for i in 0..3 {
            for j in 0..4 {
                ss += (a.get(&[i, j]).unwrap() - b.get(&[i, j]).unwrap()).powi(2);
            }
        }
        assert!((rmse(&a, &b).unwrap() - (ss / 12.0).sqrt()).abs() < 1e-14);
    }
}
