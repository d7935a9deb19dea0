//! Probit regression with latent-variable augmentation and a spike-and-slab
//! prior on the feature coefficients.
//!
//! `y_i = 1(w_i > 0)`, `w_i ~ N(z_i' gamma + f_i' b, 1)`. Each `b_k` is
//! `N(0, sigma2)` when `delta_k = 1` and `N(0, eps)` otherwise,
//! `delta_k ~ Bernoulli(pi)`, `pi ~ Beta(alpha0, alpha1)`,
//! `gamma ~ N(gamma_star, I / upsilon)`, `upsilon ~ Gamma(nu0, nu1)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::draws;
use crate::error::{format_err, numeric_err, param_err, shape_err, Result};
use crate::normal::{normal_ln_pdf, sample_truncated_normal, std_normal_cdf, Side};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectHyper {
    pub sigma2: f64,
    pub eps: f64,
    pub alpha0: f64,
    pub alpha1: f64,
    /// Prior mean of `gamma`; empty means zero.
    pub gamma_star: Vec<f64>,
    pub nu0_upsilon: f64,
    pub nu1_upsilon: f64,
}

impl Default for SelectHyper {
    fn default() -> Self {
        Self {
            sigma2: 1e4,
            eps: 1e-4,
            alpha0: 0.5,
            alpha1: 0.5,
            gamma_star: Vec::new(),
            nu0_upsilon: 1.0,
            nu1_upsilon: 1.0,
        }
    }
}

impl SelectHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 > self.eps && self.eps > 0.0) {
            return Err(param_err!("need sigma2 > eps > 0, got {} and {}", self.sigma2, self.eps));
        }
        for (name, v) in [
            ("alpha0", self.alpha0),
            ("alpha1", self.alpha1),
            ("nu0_upsilon", self.nu0_upsilon),
            ("nu1_upsilon", self.nu1_upsilon),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(param_err!("{name} must be positive, got {v}"));
            }
        }
        Ok(())
    }

    fn gamma_star(&self, q: usize) -> Result<DVector<f64>> {
        match self.gamma_star.len() {
            0 => Ok(DVector::zeros(q)),
            n if n == q => Ok(DVector::from_column_slice(&self.gamma_star)),
            n => Err(shape_err!("gamma_star has length {n}, covariates have {q}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionState {
    pub w: DVector<f64>,
    pub b: DVector<f64>,
    pub delta: Vec<bool>,
    pub pi: f64,
    pub gamma: DVector<f64>,
    pub upsilon: f64,
}

impl RegressionState {
    /// All features included, `pi = 1/2`, zero coefficients and latents.
    pub fn init(n: usize, k: usize, q: usize) -> Self {
        Self {
            w: DVector::zeros(n),
            b: DVector::zeros(k),
            delta: vec![true; k],
            pi: 0.5,
            gamma: DVector::zeros(q),
            upsilon: 1.0,
        }
    }

    /// `Z gamma + F b`.
    pub fn linear_predictor(&self, z: &DMatrix<f64>, feat: &DMatrix<f64>) -> DVector<f64> {
        let mut eta = feat * &self.b;
        if z.ncols() > 0 {
            eta += z * &self.gamma;
        }
        eta
    }
}

/// Validates a 0/1 response.
pub fn binary_response(y: &[f64]) -> Result<Vec<bool>> {
    y.iter()
        .enumerate()
        .map(|(i, &v)| {
            if v == 0.0 {
                Ok(false)
            } else if v == 1.0 {
                Ok(true)
            } else {
                Err(format_err!("response {i} is {v}, expected 0 or 1"))
            }
        })
        .collect()
}

fn check_shapes(st: &RegressionState, y: &[bool], z: &DMatrix<f64>, feat: &DMatrix<f64>) -> Result<()> {
    let n = y.len();
    if st.w.len() != n || z.nrows() != n || feat.nrows() != n {
        return Err(shape_err!(
            "{} responses but w has {}, Z has {} rows and features have {}",
            n,
            st.w.len(),
            z.nrows(),
            feat.nrows()
        ));
    }
    if feat.ncols() != st.b.len() || z.ncols() != st.gamma.len() {
        return Err(shape_err!("coefficient lengths do not match the design"));
    }
    Ok(())
}

/// Draws every `w_i` from its truncated normal conditional.
pub fn update_w<R: Rng + ?Sized>(
    st: &mut RegressionState,
    y: &[bool],
    z: &DMatrix<f64>,
    feat: &DMatrix<f64>,
    rng: &mut R,
) -> Result<()> {
    check_shapes(st, y, z, feat)?;
    let eta = st.linear_predictor(z, feat);
    for (i, &yi) in y.iter().enumerate() {
        let side = if yi { Side::NonNegative } else { Side::NonPositive };
        st.w[i] = sample_truncated_normal(eta[i], 1.0, side, rng);
    }
    Ok(())
}

/// `P(delta_k = 1 | b_k, pi)` with both mixture densities normalized.
pub fn inclusion_probability(b: f64, pi: f64, h: &SelectHyper) -> f64 {
    let lp1 = pi.ln() + normal_ln_pdf(b, h.sigma2);
    let lp0 = (1.0 - pi).ln() + normal_ln_pdf(b, h.eps);
    1.0 / (1.0 + (lp0 - lp1).exp())
}

pub fn update_delta<R: Rng + ?Sized>(st: &mut RegressionState, h: &SelectHyper, k: usize, rng: &mut R) -> bool {
    let p = inclusion_probability(st.b[k], st.pi, h);
    st.delta[k] = rng.random::<f64>() < p;
    st.delta[k]
}

/// Mean and variance of `b_k` given the partial residual `w_tilde`.
pub fn b_conditional(st: &RegressionState, h: &SelectHyper, w_tilde: &DVector<f64>, feat: &DMatrix<f64>, k: usize) -> (f64, f64) {
    let col = feat.column(k);
    let s = if st.delta[k] { h.sigma2 } else { h.eps };
    let var = (col.norm_squared() + s.recip()).recip();
    (var * col.dot(w_tilde), var)
}

/// Draws `b_k`. `w_tilde` is `w - Z gamma - F b + f_k b_k`.
pub fn update_b<R: Rng + ?Sized>(
    st: &mut RegressionState,
    h: &SelectHyper,
    w_tilde: &DVector<f64>,
    feat: &DMatrix<f64>,
    k: usize,
    rng: &mut R,
) -> f64 {
    let (mean, var) = b_conditional(st, h, w_tilde, feat, k);
    st.b[k] = draws::normal(mean, var, rng);
    st.b[k]
}

pub fn update_pi<R: Rng + ?Sized>(st: &mut RegressionState, h: &SelectHyper, rng: &mut R) -> Result<f64> {
    let on = st.delta.iter().filter(|d| **d).count() as f64;
    let len = st.delta.len() as f64;
    st.pi = draws::beta(h.alpha0 + on, h.alpha1 + len - on, rng)?;
    Ok(st.pi)
}

/// Mean and Cholesky factor of the precision of the `gamma` conditional.
pub fn gamma_conditional(
    st: &RegressionState,
    h: &SelectHyper,
    z: &DMatrix<f64>,
    feat: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let q = z.ncols();
    let prec = DMatrix::identity(q, q) * st.upsilon + z.tr_mul(z);
    let chol = prec
        .cholesky()
        .ok_or_else(|| numeric_err!("gamma precision is not positive definite"))?;
    let w_star = &st.w - feat * &st.b;
    let rhs = h.gamma_star(q)? * st.upsilon + z.tr_mul(&w_star);
    Ok((chol.solve(&rhs), chol.l()))
}

pub fn update_gamma<R: Rng + ?Sized>(
    st: &mut RegressionState,
    h: &SelectHyper,
    z: &DMatrix<f64>,
    feat: &DMatrix<f64>,
    rng: &mut R,
) -> Result<()> {
    if z.ncols() == 0 {
        return Ok(());
    }
    let (mean, l) = gamma_conditional(st, h, z, feat)?;
    let e = DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    // L^T x = e gives x ~ N(0, (L L^T)^{-1}).
    let x = l
        .transpose()
        .solve_upper_triangular(&e)
        .ok_or_else(|| numeric_err!("singular Cholesky factor"))?;
    st.gamma = mean + x;
    Ok(())
}

/// Shape and rate of the `upsilon` conditional.
pub fn upsilon_conditional(st: &RegressionState, h: &SelectHyper) -> Result<(f64, f64)> {
    let q = st.gamma.len();
    let dev = &st.gamma - h.gamma_star(q)?;
    Ok((h.nu0_upsilon + q as f64 / 2.0, h.nu1_upsilon + dev.norm_squared() / 2.0))
}

pub fn update_upsilon<R: Rng + ?Sized>(st: &mut RegressionState, h: &SelectHyper, rng: &mut R) -> Result<f64> {
    let (shape, rate) = upsilon_conditional(st, h)?;
    st.upsilon = draws::gamma(shape, rate, rng)?;
    Ok(st.upsilon)
}

/// Every `b_k` in ascending order with a running partial residual.
fn update_all_b<R: Rng + ?Sized>(st: &mut RegressionState, h: &SelectHyper, z: &DMatrix<f64>, feat: &DMatrix<f64>, rng: &mut R) {
    let mut resid = &st.w - st.linear_predictor(z, feat);
    for k in 0..st.b.len() {
        let old = st.b[k];
        resid.axpy(old, &feat.column(k), 1.0);
        let new = update_b(st, h, &resid, feat, k, rng);
        resid.axpy(-new, &feat.column(k), 1.0);
    }
}

/// Starting point of a chain: latents given the current coefficients, then
/// every `b_k` given those latents and the current indicators. Without it a
/// chain started at `b = 0` puts every indicator in the spike on its first
/// sweep.
pub fn warm_start<R: Rng + ?Sized>(
    st: &mut RegressionState,
    h: &SelectHyper,
    y: &[bool],
    z: &DMatrix<f64>,
    feat: &DMatrix<f64>,
    rng: &mut R,
) -> Result<()> {
    update_w(st, y, z, feat, rng)?;
    update_all_b(st, h, z, feat, rng);
    Ok(())
}

/// Selection block given the current latents: every `delta_k`, then every
/// `b_k` with a running partial residual, then `pi`, `gamma` and `upsilon`.
pub fn select_sweep<R: Rng + ?Sized>(
    st: &mut RegressionState,
    h: &SelectHyper,
    z: &DMatrix<f64>,
    feat: &DMatrix<f64>,
    rng: &mut R,
) -> Result<()> {
    if feat.ncols() != st.b.len() || z.ncols() != st.gamma.len() || feat.nrows() != st.w.len() {
        return Err(shape_err!("design does not match the regression state"));
    }
    for k in 0..st.b.len() {
        update_delta(st, h, k, rng);
    }
    update_all_b(st, h, z, feat, rng);
    update_pi(st, h, rng)?;
    update_gamma(st, h, z, feat, rng)?;
    update_upsilon(st, h, rng)?;
    if st.b.iter().chain(st.gamma.iter()).any(|v| !v.is_finite()) {
        return Err(numeric_err!("non-finite regression coefficient"));
    }
    Ok(())
}

/// Posterior predictive `P(y = 1)`: the average of `Phi(z' gamma + f' b)`
/// over the draws. `feats[t]` holds the features matching draw `t`, or a
/// single matrix shared by all draws.
pub fn predict(draws: &[RegressionState], z_new: &DMatrix<f64>, feats: &[DMatrix<f64>]) -> Result<Vec<f64>> {
    if draws.is_empty() {
        return Err(param_err!("no draws to predict from"));
    }
    if feats.len() != 1 && feats.len() != draws.len() {
        return Err(shape_err!("{} feature matrices for {} draws", feats.len(), draws.len()));
    }
    let n = feats[0].nrows();
    let mut p = vec![0.0; n];
    for (t, st) in draws.iter().enumerate() {
        let f = if feats.len() == 1 { &feats[0] } else { &feats[t] };
        if f.nrows() != n || f.ncols() != st.b.len() || z_new.ncols() != st.gamma.len() || z_new.nrows() != n {
            return Err(shape_err!("new design does not match the fitted coefficients"));
        }
        let eta = st.linear_predictor(z_new, f);
        for (pi, e) in p.iter_mut().zip(eta.iter()) {
            *pi += std_normal_cdf(*e);
        }
    }
    p.iter_mut().for_each(|v| *v /= draws.len() as f64);
    Ok(p)
}

/// Probit regression on fixed features. Returns the retained draws
/// (`burn_in` discarded, every `thin`-th kept afterwards).
#[allow(clippy::too_many_arguments)]
pub fn fit_probit<R: Rng + ?Sized>(
    y: &[bool],
    z: &DMatrix<f64>,
    feat: &DMatrix<f64>,
    h: &SelectHyper,
    iters: usize,
    burn_in: usize,
    thin: usize,
    rng: &mut R,
) -> Result<Vec<RegressionState>> {
    h.validate()?;
    if burn_in >= iters || thin == 0 {
        return Err(param_err!("need burn_in < iters and thin >= 1"));
    }
    let mut st = RegressionState::init(y.len(), feat.ncols(), z.ncols());
    warm_start(&mut st, h, y, z, feat, rng)?;
    let mut kept = Vec::with_capacity((iters - burn_in) / thin);
    for t in 0..iters {
        update_w(&mut st, y, z, feat, rng)?;
        select_sweep(&mut st, h, z, feat, rng)?;
        if t >= burn_in && (t - burn_in + 1) % thin == 0 {
            kept.push(st.clone());
        }
    }
    Ok(kept)
}
