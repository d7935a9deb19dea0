//! Latent factor compression `L = G D + Psi` of the extracted subject scores.
//!
//! `G` is `N x K` with i.i.d. `N(0, 1/N)` entries, `D` is `K x P_L` with
//! standard normal entries and the idiosyncratic part has common precision
//! `tau_psi ~ Gamma(beta0, beta1)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cp_bayes::CPState;
use crate::draws;
use crate::error::{numeric_err, param_err, shape_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FactorHyper {
    pub beta0: f64,
    pub beta1: f64,
}

impl Default for FactorHyper {
    fn default() -> Self {
        Self { beta0: 1e-6, beta1: 1e-6 }
    }
}

impl FactorHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta0 > 0.0 && self.beta1 > 0.0) {
            return Err(param_err!("factor hyperparameters must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorState {
    pub g: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub tau_psi: f64,
}

impl FactorState {
    /// Prior draws for `G` and `D`, `tau_psi = 1`.
    pub fn init<R: Rng + ?Sized>(n: usize, p: usize, k: usize, rng: &mut R) -> Result<Self> {
        if n == 0 || p == 0 || k == 0 {
            return Err(param_err!("factor model needs N, P_L and K positive (got {n}, {p}, {k})"));
        }
        let sd = (n as f64).sqrt().recip();
        let g = DMatrix::from_fn(n, k, |_, _| sd * rng.sample::<f64, _>(StandardNormal));
        let d = DMatrix::from_fn(k, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        Ok(Self { g, d, tau_psi: 1.0 })
    }

    /// Start from the truncated SVD `L ~ U S V^T`: `G = U_K`, `D = S_K V_K^T`.
    /// Components beyond the rank of `L` start at zero.
    pub fn from_svd(l: &DMatrix<f64>, k: usize) -> Result<Self> {
        let (n, p) = l.shape();
        if n == 0 || p == 0 || k == 0 {
            return Err(param_err!("factor model needs N, P_L and K positive (got {n}, {p}, {k})"));
        }
        let svd = l.clone().svd(true, true);
        let (u, vt) = (svd.u.expect("requested U"), svd.v_t.expect("requested V^T"));
        let m = k.min(svd.singular_values.len());
        let mut g = DMatrix::zeros(n, k);
        let mut d = DMatrix::zeros(k, p);
        for c in 0..m {
            g.set_column(c, &u.column(c));
            d.set_row(c, &(vt.row(c) * svd.singular_values[c]));
        }
        Ok(Self { g, d, tau_psi: 1.0 })
    }

    pub fn k(&self) -> usize {
        self.g.ncols()
    }

    fn check(&self, l: &DMatrix<f64>) -> Result<()> {
        if self.g.nrows() != l.nrows() || self.d.ncols() != l.ncols() || self.g.ncols() != self.d.nrows() {
            return Err(shape_err!(
                "G {}x{} and D {}x{} do not fit L {}x{}",
                self.g.nrows(),
                self.g.ncols(),
                self.d.nrows(),
                self.d.ncols(),
                l.nrows(),
                l.ncols()
            ));
        }
        Ok(())
    }

    /// `L - G D`.
    pub fn residual(&self, l: &DMatrix<f64>) -> DMatrix<f64> {
        l - &self.g * &self.d
    }
}

/// Horizontal concatenation of the subject matrices in partition order.
pub fn assemble_l(states: &[CPState]) -> Result<DMatrix<f64>> {
    let mats: Vec<&DMatrix<f64>> = states.iter().map(|s| s.factors.subject()).collect();
    concat_columns(&mats)
}

pub(crate) fn concat_columns(mats: &[&DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let first = mats.first().ok_or_else(|| param_err!("no matrices to concatenate"))?;
    let n = first.nrows();
    if mats.iter().any(|m| m.nrows() != n) {
        return Err(shape_err!("subject matrices disagree on the subject count"));
    }
    let p = mats.iter().map(|m| m.ncols()).sum();
    let mut out = DMatrix::zeros(n, p);
    let mut c = 0;
    for m in mats {
        out.columns_mut(c, m.ncols()).copy_from(*m);
        c += m.ncols();
    }
    Ok(out)
}

/// Column centering and scaling used before factor fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardization {
    pub fn identity(p: usize) -> Self {
        Self { center: vec![0.0; p], scale: vec![1.0; p] }
    }

    pub fn apply(&self, l: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = l.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            col.add_scalar_mut(-self.center[j]);
            col /= self.scale[j];
        }
        out
    }
}

/// Per-column zero mean and unit (population) variance. Constant columns
/// keep scale one.
pub fn standardize_columns(l: &DMatrix<f64>) -> (DMatrix<f64>, Standardization) {
    let n = l.nrows() as f64;
    let mut center = Vec::with_capacity(l.ncols());
    let mut scale = Vec::with_capacity(l.ncols());
    for col in l.column_iter() {
        let m = col.sum() / n;
        let v = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
        center.push(m);
        scale.push(if v > 0.0 { v.sqrt() } else { 1.0 });
    }
    let s = Standardization { center, scale };
    (s.apply(l), s)
}

/// `E + g_k d_k^T`: the residual with component `k` added back.
fn add_back(e: &DMatrix<f64>, st: &FactorState, k: usize) -> DMatrix<f64> {
    let mut out = e.clone();
    out.ger(1.0, &st.g.column(k), &st.d.row(k).transpose(), 1.0);
    out
}

/// Conditional mean vector and common variance of column `g_k`.
pub fn g_conditional(st: &FactorState, l: &DMatrix<f64>, k: usize) -> Result<(DVector<f64>, f64)> {
    st.check(l)?;
    let e = add_back(&st.residual(l), st, k);
    let dk = st.d.row(k).transpose();
    Ok(g_from_residual(st, &e, &dk))
}

fn g_from_residual(st: &FactorState, e: &DMatrix<f64>, dk: &DVector<f64>) -> (DVector<f64>, f64) {
    let n = st.g.nrows() as f64;
    let var = (n + st.tau_psi * dk.norm_squared()).recip();
    let mean = (e * dk) * (st.tau_psi * var);
    (mean, var)
}

pub fn update_g<R: Rng + ?Sized>(st: &mut FactorState, l: &DMatrix<f64>, k: usize, rng: &mut R) -> Result<DVector<f64>> {
    let (mean, var) = g_conditional(st, l, k)?;
    let draw = mean.map(|m| draws::normal(m, var, rng));
    st.g.set_column(k, &draw);
    Ok(draw)
}

/// Conditional means of row `d_k` and their common variance.
pub fn d_conditional(st: &FactorState, l: &DMatrix<f64>, k: usize) -> Result<(DVector<f64>, f64)> {
    st.check(l)?;
    let e = add_back(&st.residual(l), st, k);
    let gk = st.g.column(k).into_owned();
    Ok(d_from_residual(st, &e, &gk))
}

fn d_from_residual(st: &FactorState, e: &DMatrix<f64>, gk: &DVector<f64>) -> (DVector<f64>, f64) {
    let var = (1.0 + st.tau_psi * gk.norm_squared()).recip();
    let mean = e.tr_mul(gk) * (st.tau_psi * var);
    (mean, var)
}

pub fn update_d<R: Rng + ?Sized>(st: &mut FactorState, l: &DMatrix<f64>, k: usize, rng: &mut R) -> Result<DVector<f64>> {
    let (mean, var) = d_conditional(st, l, k)?;
    let draw = mean.map(|m| draws::normal(m, var, rng));
    st.d.set_row(k, &draw.transpose());
    Ok(draw)
}

/// Shape and rate of the `tau_psi` conditional.
pub fn tau_psi_conditional(st: &FactorState, l: &DMatrix<f64>, h: &FactorHyper) -> Result<(f64, f64)> {
    st.check(l)?;
    let ss = st.residual(l).norm_squared();
    if !ss.is_finite() {
        return Err(numeric_err!("non-finite factor residual"));
    }
    Ok((h.beta0 + l.len() as f64 / 2.0, h.beta1 + ss / 2.0))
}

pub fn update_tau_psi<R: Rng + ?Sized>(st: &mut FactorState, l: &DMatrix<f64>, h: &FactorHyper, rng: &mut R) -> Result<f64> {
    let (shape, rate) = tau_psi_conditional(st, l, h)?;
    st.tau_psi = draws::gamma(shape, rate, rng)?;
    Ok(st.tau_psi)
}

/// One sweep: for each `k`, `g_k` then `d_k`, then `tau_psi`. A residual
/// `L - G D` is kept up to date between the updates.
pub fn factor_sweep<R: Rng + ?Sized>(st: &mut FactorState, l: &DMatrix<f64>, h: &FactorHyper, rng: &mut R) -> Result<()> {
    st.check(l)?;
    let mut e = st.residual(l);
    for k in 0..st.k() {
        e.ger(1.0, &st.g.column(k), &st.d.row(k).transpose(), 1.0);
        let dk = st.d.row(k).transpose();
        let (mean, var) = g_from_residual(st, &e, &dk);
        let gk = mean.map(|m| draws::normal(m, var, rng));
        st.g.set_column(k, &gk);
        let (mean, var) = d_from_residual(st, &e, &gk);
        let dk = mean.map(|m| draws::normal(m, var, rng));
        st.d.set_row(k, &dk.transpose());
        e.ger(-1.0, &gk, &dk, 1.0);
    }
    let ss = e.norm_squared();
    if !ss.is_finite() {
        return Err(numeric_err!("non-finite factor residual"));
    }
    st.tau_psi = draws::gamma(h.beta0 + l.len() as f64 / 2.0, h.beta1 + ss / 2.0, rng)?;
    Ok(())
}

/// Posterior mean of the scores of new subjects given one draw of `D` and
/// `tau_psi`: `(tau D D^T + N I)^{-1} tau D l` for every row `l` of `l_new`,
/// where `n_train` is the prior precision of the scores.
pub fn scores_for(st_d: &DMatrix<f64>, tau_psi: f64, n_train: usize, l_new: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if st_d.ncols() != l_new.ncols() {
        return Err(shape_err!("D has {} columns, features have {}", st_d.ncols(), l_new.ncols()));
    }
    let k = st_d.nrows();
    let prec = st_d * st_d.transpose() * tau_psi + DMatrix::identity(k, k) * n_train as f64;
    let chol = prec
        .cholesky()
        .ok_or_else(|| numeric_err!("score precision is not positive definite"))?;
    let rhs = st_d * l_new.transpose() * tau_psi;
    Ok(chol.solve(&rhs).transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn planted(n: usize, p: usize, k: usize, seed: u64) -> (DMatrix<f64>, FactorState) {
        let mut g = rng(seed);
        let g0 = DMatrix::from_fn(n, k, |_, _| g.sample::<f64, _>(StandardNormal));
        let d0 = DMatrix::from_fn(k, p, |_, _| g.sample::<f64, _>(StandardNormal));
        (&g0 * &d0, FactorState { g: g0, d: d0, tau_psi: 1.0 })
    }

    #[test]
    fn assemble_orders_partitions() {
        use crate::cp_bayes::{CPHyper, CPState};
        let h = CPHyper::with_rank(2);
        let mut g = rng(1);
        let a = CPState::init(&[2, 3], &h, 0, &mut g).unwrap();
        let b = CPState::init(&[2, 3], &h, 1, &mut g).unwrap();
        let l = assemble_l(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(l.shape(), (3, 4));
        for j in 0..4 {
            let src = if j < 2 { &a } else { &b };
            assert_eq!(l.column(j), src.factors.subject().column(j % 2));
        }
        assert_eq!(assemble_l(&[a.clone()]).unwrap(), a.factors.subject().clone());
    }

    #[test]
    fn zero_loadings_fall_back_to_prior() {
        let (l, mut st) = planted(5, 4, 2, 2);
        st.d.row_mut(0).fill(0.0);
        let (mean, var) = g_conditional(&st, &l, 0).unwrap();
        assert!(mean.iter().all(|m| *m == 0.0));
        assert!((var - 0.2).abs() < 1e-15);
        st.g.column_mut(1).fill(0.0);
        let (mean, var) = d_conditional(&st, &l, 1).unwrap();
        assert!(mean.iter().all(|m| *m == 0.0));
        assert_eq!(var, 1.0);
    }

    #[test]
    fn large_precision_recovers_truth() {
        let (l, mut st) = planted(6, 5, 2, 3);
        st.tau_psi = 1e10;
        for k in 0..2 {
            let (mean, _) = g_conditional(&st, &l, k).unwrap();
            // coordinatewise ridge oracle with vanishing penalty
            let dk = st.d.row(k).transpose();
            let e = &l - &st.g * &st.d + st.g.column(k) * st.d.row(k);
            for i in 0..6 {
                let want = e.row(i).transpose().dot(&dk) / dk.norm_squared();
                assert!((mean[i] - want).abs() < 1e-6);
                assert!((mean[i] - st.g[(i, k)]).abs() < 1e-6);
            }
            let (mean, _) = d_conditional(&st, &l, k).unwrap();
            let gk = st.g.column(k);
            for j in 0..5 {
                let want = gk.dot(&e.column(j)) / gk.norm_squared();
                assert!((mean[j] - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn conditionals_match_scalar_oracle() {
        let (l0, mut st) = planted(4, 3, 2, 4);
        let l = l0.map(|v| v + 0.1);
        st.tau_psi = 2.5;
        let n = 4.0;
        for k in 0..2 {
            let (mean, var) = g_conditional(&st, &l, k).unwrap();
            let mut sd2 = 0.0;
            for j in 0..3 {
                sd2 += st.d[(k, j)] * st.d[(k, j)];
            }
            let v = 1.0 / (n + 2.5 * sd2);
            assert!((var - v).abs() < 1e-14);
            for i in 0..4 {
                let mut s = 0.0;
                for j in 0..3 {
                    let mut lstar = l[(i, j)];
                    for q in 0..2 {
                        if q != k {
                            lstar -= st.g[(i, q)] * st.d[(q, j)];
                        }
                    }
                    s += st.d[(k, j)] * lstar;
                }
                assert!((mean[i] - 2.5 * v * s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tau_psi_parameters() {
        let (l, st) = planted(3, 4, 2, 5);
        let h = FactorHyper { beta0: 0.5, beta1: 0.25 };
        let (shape, rate) = tau_psi_conditional(&st, &l, &h).unwrap();
        assert_eq!(shape, 0.5 + 6.0);
        assert!((rate - 0.25).abs() < 1e-12);
        let mut l2 = l.clone();
        l2[(0, 0)] += 2.0;
        let (_, rate) = tau_psi_conditional(&st, &l2, &h).unwrap();
        assert!((rate - 2.25).abs() < 1e-12);
        let mut l3 = l.clone();
        let mut ss = 0.0;
        for i in 0..3 {
            for j in 0..4 {
                let bump = 0.1 * (i * 4 + j) as f64;
                l3[(i, j)] += bump;
                ss += bump * bump;
            }
        }
        let (_, rate) = tau_psi_conditional(&st, &l3, &h).unwrap();
        assert!((rate - 0.25 - ss / 2.0).abs() < 1e-12);
    }

    #[test]
    fn sweep_reconstructs_noiseless_l() {
        let (l, _) = planted(30, 8, 2, 6);
        let h = FactorHyper::default();
        let mut g = rng(7);
        let mut st = FactorState::init(30, 8, 2, &mut g).unwrap();
        let mut acc = DMatrix::zeros(30, 8);
        let (burn, total) = (1000, 2000);
        for it in 0..total {
            factor_sweep(&mut st, &l, &h, &mut g).unwrap();
            if it >= burn {
                acc += &st.g * &st.d;
            }
        }
        acc /= (total - burn) as f64;
        let rel = (&acc - &l).norm() / l.norm();
        assert!(rel < 0.01, "relative error {rel}");
    }

    #[test]
    fn svd_start_reproduces_low_rank_l() {
        let (l, _) = planted(12, 7, 2, 21);
        let st = FactorState::from_svd(&l, 2).unwrap();
        assert!((&st.g * &st.d - &l).norm() < 1e-10 * l.norm());
        assert!((st.g.tr_mul(&st.g) - DMatrix::identity(2, 2)).norm() < 1e-10);
        let wide = FactorState::from_svd(&l, 9).unwrap();
        assert_eq!(wide.g.shape(), (12, 9));
        assert!(wide.d.row(8).iter().all(|v| *v == 0.0));
        assert!((&wide.g * &wide.d - &l).norm() < 1e-10 * l.norm());
    }

    #[test]
    fn standardization_is_per_column() {
        let l = DMatrix::from_row_slice(3, 2, &[1.0, 5.0, 2.0, 5.0, 3.0, 5.0]);
        let (z, s) = standardize_columns(&l);
        assert_eq!(s.center, vec![2.0, 5.0]);
        assert_eq!(s.scale[1], 1.0);
        assert!((z.column(0).norm_squared() / 3.0 - 1.0).abs() < 1e-12);
        assert!(z.column(1).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn scores_for_reduces_to_ridge() {
        let d = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let l = DMatrix::from_row_slice(1, 2, &[2.0, 2.0]);
        let g = scores_for(&d, 1e8, 1, &l).unwrap();
        assert!((g[(0, 0)] - 2.0).abs() < 1e-6);
    }
}
