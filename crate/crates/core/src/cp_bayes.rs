//! Bayesian CP decomposition of one block by Gibbs sampling.
//!
//! The block has order `M >= 2`; its last mode is the subject mode with factor
//! `L`. Every factor matrix of mode `m` carries an i.i.d. normal prior whose
//! precision equals the mode length `J_m`, the weights `lambda_r` are
//! `N(0, 1/kappa)` and the noise precision `tau` is `Gamma(nu0, nu1)` in
//! shape/rate form.
//!
//! Two routes exist. The `update_*` functions evaluate a single full
//! conditional directly from its definition by looping over the block; they
//! are simple and slow. [`CpSampler`] runs whole sweeps using MTTKRP and Gram
//! identities and is what [`gibbs_cp`] and the pipeline use.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::draws;
use crate::error::{numeric_err, param_err, shape_err, Result};
use crate::kruskal::{
    contract_last, expanded_residual_ss, hadamard_except, khatri_rao, mttkrp_last, mttkrp_lead,
    residual_ss, CPFactors,
};
use crate::tensor::{advance, DenseTensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CPHyper {
    pub nu0_tau: f64,
    pub nu1_tau: f64,
    pub kappa: f64,
    pub rank: usize,
}

impl Default for CPHyper {
    fn default() -> Self {
        Self::with_rank(2)
    }
}

impl CPHyper {
    /// Non-informative defaults with the given rank.
    pub fn with_rank(rank: usize) -> Self {
        Self { nu0_tau: 1.0, nu1_tau: 1e-4, kappa: 1e-4, rank }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(param_err!("rank must be at least 1"));
        }
        for (name, v) in [("nu0_tau", self.nu0_tau), ("nu1_tau", self.nu1_tau), ("kappa", self.kappa)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(param_err!("{name} must be positive and finite, got {v}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CPState {
    pub factors: CPFactors,
    pub tau: f64,
    pub partition: usize,
}

impl CPState {
    /// Prior-scale start: entries `N(0, 1/J_m)`, unit weights, `tau = nu0/nu1`.
    pub fn init<G: Rng + ?Sized>(dims: &[usize], h: &CPHyper, partition: usize, rng: &mut G) -> Result<Self> {
        h.validate()?;
        Ok(Self {
            factors: CPFactors::random(dims, h.rank, rng)?,
            tau: h.nu0_tau / h.nu1_tau,
            partition,
        })
    }

    pub fn check(&self, block: &DenseTensor) -> Result<()> {
        self.factors.validate()?;
        if self.factors.dims() != block.dims() {
            return Err(shape_err!(
                "factor dims {:?} do not match block dims {:?}",
                self.factors.dims(),
                block.dims()
            ));
        }
        if !(self.tau > 0.0) {
            return Err(numeric_err!("noise precision must be positive, got {}", self.tau));
        }
        Ok(())
    }

    fn ensure_finite(&self) -> Result<()> {
        let f = &self.factors;
        if !self.tau.is_finite()
            || f.weights.iter().any(|v| !v.is_finite())
            || f.factors.iter().any(|a| a.iter().any(|v| !v.is_finite()))
        {
            return Err(numeric_err!("non-finite value in CP state of partition {}", self.partition));
        }
        Ok(())
    }
}

/// Mean and variance of a normal full conditional.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalConditional {
    pub mean: f64,
    pub var: f64,
}

/// Shape and rate of the noise-precision conditional.
pub fn tau_conditional(state: &CPState, block: &DenseTensor, h: &CPHyper) -> Result<(f64, f64)> {
    state.check(block)?;
    let ss = residual_ss(block, &state.factors);
    if !ss.is_finite() {
        return Err(numeric_err!("non-finite residual sum of squares"));
    }
    Ok((h.nu0_tau + block.len() as f64 / 2.0, h.nu1_tau + ss / 2.0))
}

pub fn update_tau<G: Rng + ?Sized>(state: &mut CPState, block: &DenseTensor, h: &CPHyper, rng: &mut G) -> Result<f64> {
    let (shape, rate) = tau_conditional(state, block, h)?;
    state.tau = draws::gamma(shape, rate, rng)?;
    Ok(state.tau)
}

/// Full conditional of entry `(j, r)` of factor `mode`, evaluated directly.
pub fn factor_conditional(state: &CPState, block: &DenseTensor, mode: usize, j: usize, r: usize) -> Result<NormalConditional> {
    state.check(block)?;
    let f = &state.factors;
    let dims = block.dims();
    if mode >= dims.len() || j >= dims[mode] || r >= f.rank() {
        return Err(shape_err!("entry ({j}, {r}) of mode {mode} is out of range"));
    }
    let current = f.factors[mode][(j, r)];
    let (mut num, mut den) = (0.0, 0.0);
    let mut idx = vec![0; dims.len()];
    for &x in block.data() {
        if idx[mode] == j {
            let recon = entry_value(f, &idx);
            let mut design = f.weights[r];
            for (k, a) in f.factors.iter().enumerate() {
                if k != mode {
                    design *= a[(idx[k], r)];
                }
            }
            let deflated = x - recon + design * current;
            num += deflated * design;
            den += design * design;
        }
        advance(&mut idx, dims);
    }
    let prec = state.tau * den + dims[mode] as f64;
    Ok(NormalConditional { mean: state.tau * num / prec, var: prec.recip() })
}

/// Draws entry `(j, r)` of leading factor `mode` in place.
pub fn update_factor_entry<G: Rng + ?Sized>(
    state: &mut CPState,
    block: &DenseTensor,
    _h: &CPHyper,
    mode: usize,
    j: usize,
    r: usize,
    rng: &mut G,
) -> Result<f64> {
    if mode + 1 >= block.order() {
        return Err(param_err!("mode {mode} is not a leading mode of an order-{} block", block.order()));
    }
    let c = factor_conditional(state, block, mode, j, r)?;
    let v = draws::normal(c.mean, c.var, rng);
    state.factors.factors[mode][(j, r)] = v;
    Ok(v)
}

/// Draws entry `(i, r)` of the subject matrix `L` in place.
pub fn update_subject_entry<G: Rng + ?Sized>(
    state: &mut CPState,
    block: &DenseTensor,
    _h: &CPHyper,
    i: usize,
    r: usize,
    rng: &mut G,
) -> Result<f64> {
    let mode = block.order() - 1;
    let c = factor_conditional(state, block, mode, i, r)?;
    let v = draws::normal(c.mean, c.var, rng);
    state.factors.factors[mode][(i, r)] = v;
    Ok(v)
}

/// Full conditional of weight `lambda_r`, evaluated directly.
pub fn lambda_conditional(state: &CPState, block: &DenseTensor, h: &CPHyper, r: usize) -> Result<NormalConditional> {
    state.check(block)?;
    let f = &state.factors;
    if r >= f.rank() {
        return Err(shape_err!("rank index {r} out of range {}", f.rank()));
    }
    let dims = block.dims();
    let (mut num, mut den) = (0.0, 0.0);
    let mut idx = vec![0; dims.len()];
    for &x in block.data() {
        let recon = entry_value(f, &idx);
        let mut design = 1.0;
        for (k, a) in f.factors.iter().enumerate() {
            design *= a[(idx[k], r)];
        }
        let deflated = x - recon + f.weights[r] * design;
        num += deflated * design;
        den += design * design;
        advance(&mut idx, dims);
    }
    let prec = state.tau * den + h.kappa;
    Ok(NormalConditional { mean: state.tau * num / prec, var: prec.recip() })
}

pub fn update_lambda<G: Rng + ?Sized>(state: &mut CPState, block: &DenseTensor, h: &CPHyper, r: usize, rng: &mut G) -> Result<f64> {
    let c = lambda_conditional(state, block, h, r)?;
    let v = draws::normal(c.mean, c.var, rng);
    state.factors.weights[r] = v;
    Ok(v)
}

fn entry_value(f: &CPFactors, idx: &[usize]) -> f64 {
    (0..f.rank())
        .map(|r| {
            f.factors
                .iter()
                .zip(idx)
                .fold(f.weights[r], |acc, (a, &i)| acc * a[(i, r)])
        })
        .sum()
}

/// Sweep-level Gibbs sampler for one block.
///
/// Order within a sweep: `tau`, leading factors mode by mode (column by
/// column, all rows of a column jointly), the subject matrix, then the weights.
#[derive(Debug, Clone)]
pub struct CpSampler<'a> {
    block: &'a DenseTensor,
    h: CPHyper,
    state: CPState,
    grams: Vec<DMatrix<f64>>,
    norm_sq: f64,
    ss: f64,
}

impl<'a> CpSampler<'a> {
    pub fn new<G: Rng + ?Sized>(block: &'a DenseTensor, h: CPHyper, partition: usize, rng: &mut G) -> Result<Self> {
        if block.order() < 2 {
            return Err(shape_err!("a CP block needs order >= 2, got {}", block.order()));
        }
        let state = CPState::init(block.dims(), &h, partition, rng)?;
        Self::from_state(block, h, state)
    }

    pub fn from_state(block: &'a DenseTensor, h: CPHyper, state: CPState) -> Result<Self> {
        h.validate()?;
        state.check(block)?;
        if state.factors.rank() != h.rank {
            return Err(shape_err!("state rank {} differs from hyper rank {}", state.factors.rank(), h.rank));
        }
        let grams = state.factors.grams();
        let ss = residual_ss(block, &state.factors);
        Ok(Self { block, h, state, grams, norm_sq: block.norm_sq(), ss })
    }

    pub fn state(&self) -> &CPState {
        &self.state
    }

    pub fn into_state(self) -> CPState {
        self.state
    }

    /// Residual sum of squares of the current state.
    pub fn residual_ss(&self) -> f64 {
        self.ss
    }

    /// Means and common variance of column `r` of factor `mode` given the
    /// MTTKRP of that mode.
    fn column_conditional(&self, mode: usize, r: usize, mt: &DMatrix<f64>) -> (Vec<f64>, f64) {
        let lam = &self.state.factors.weights;
        let a = &self.state.factors.factors[mode];
        let had = hadamard_except(&self.grams, Some(mode));
        let tau = self.state.tau;
        let prec = tau * lam[r] * lam[r] * had[(r, r)] + a.nrows() as f64;
        let means = (0..a.nrows())
            .map(|j| {
                let mut cross = 0.0;
                for q in 0..lam.len() {
                    if q != r {
                        cross += lam[q] * a[(j, q)] * had[(q, r)];
                    }
                }
                tau * lam[r] * (mt[(j, r)] - cross) / prec
            })
            .collect();
        (means, prec.recip())
    }

    fn update_mode<G: Rng + ?Sized>(&mut self, mode: usize, mt: &DMatrix<f64>, rng: &mut G) {
        for r in 0..self.h.rank {
            let (means, var) = self.column_conditional(mode, r, mt);
            let a = &mut self.state.factors.factors[mode];
            for (j, m) in means.into_iter().enumerate() {
                a[(j, r)] = draws::normal(m, var, rng);
            }
        }
        let a = &self.state.factors.factors[mode];
        self.grams[mode] = a.tr_mul(a);
    }

    pub fn sweep<G: Rng + ?Sized>(&mut self, rng: &mut G) -> Result<()> {
        let h = self.h;
        let total = self.block.len() as f64;
        self.state.tau = draws::gamma(h.nu0_tau + total / 2.0, h.nu1_tau + self.ss / 2.0, rng)?;

        let last = self.block.order() - 1;
        let y = contract_last(self.block, &self.state.factors.factors[last]);
        for m in 0..last {
            let mt = mttkrp_lead(&y, &self.state.factors.factors[..last], m);
            self.update_mode(m, &mt, rng);
        }
        let kr = khatri_rao(&self.state.factors.factors[..last]);
        let ml = mttkrp_last(self.block, &kr);
        self.update_mode(last, &ml, rng);

        let had = hadamard_except(&self.grams, None);
        let l = &self.state.factors.factors[last];
        for r in 0..h.rank {
            let lam = &self.state.factors.weights;
            let prec = self.state.tau * had[(r, r)] + h.kappa;
            let mut num = l.column(r).dot(&ml.column(r));
            for q in 0..h.rank {
                if q != r {
                    num -= lam[q] * had[(q, r)];
                }
            }
            let v = draws::normal(self.state.tau * num / prec, prec.recip(), rng);
            self.state.factors.weights[r] = v;
        }

        self.ss = expanded_residual_ss(self.norm_sq, &self.state.factors, &ml, &self.grams);
        if !self.ss.is_finite() {
            return Err(numeric_err!("non-finite residual in partition {}", self.state.partition));
        }
        self.state.ensure_finite()
    }
}

/// Runs `iters` sweeps from the prior-scale start and returns every state.
pub fn gibbs_cp<G: Rng + ?Sized>(block: &DenseTensor, h: &CPHyper, iters: usize, rng: &mut G) -> Result<Vec<CPState>> {
    h.validate()?;
    if iters == 0 {
        return Err(param_err!("iters must be at least 1"));
    }
    let mut sampler = CpSampler::new(block, *h, 0, rng)?;
    let mut chain = Vec::with_capacity(iters);
    for _ in 0..iters {
        sampler.sweep(rng)?;
        chain.push(sampler.state().clone());
    }
    Ok(chain)
}

/// Entrywise average of the reconstructions of `states`.
pub fn posterior_mean_reconstruction(states: &[CPState]) -> Result<DenseTensor> {
    let first = states.first().ok_or_else(|| param_err!("no states to average"))?;
    let dims = first.factors.dims();
    let mut acc = DMatrix::<f64>::zeros(*dims.last().unwrap(), dims[..dims.len() - 1].iter().product());
    for s in states {
        if s.factors.dims() != dims {
            return Err(shape_err!("states have differing dims"));
        }
        let m = s.factors.order();
        let kr = khatri_rao(&s.factors.factors[..m - 1]);
        let sl = crate::kruskal::scale_columns(&s.factors.factors[m - 1], s.factors.weights.as_slice());
        acc.gemm(1.0, &sl, &kr.transpose(), 1.0);
    }
    acc /= states.len() as f64;
    DenseTensor::new(dims, acc.as_slice().to_vec())
}

/// Posterior mean of the subject matrix `L` over `states`.
pub fn posterior_mean_subject(states: &[CPState]) -> Result<DMatrix<f64>> {
    let first = states.first().ok_or_else(|| param_err!("no states to average"))?;
    let mut acc = first.factors.subject().clone() * 0.0;
    for s in states {
        acc += s.factors.subject();
    }
    Ok(acc / states.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kruskal::{cp_reconstruct, rmse};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn noisy_block(dims: &[usize], rank: usize, noise: f64, seed: u64) -> (DenseTensor, CPFactors) {
        let mut g = rng(seed);
        let mut f = CPFactors::random(dims, rank, &mut g).unwrap();
        for a in f.factors.iter_mut() {
            *a *= (a.nrows() as f64).sqrt();
        }
        let clean = cp_reconstruct(&f).unwrap();
        let data = clean
            .data()
            .iter()
            .map(|v| v + noise * g.sample::<f64, _>(StandardNormal))
            .collect();
        (DenseTensor::new(dims.to_vec(), data).unwrap(), f)
    }

    /// Independent scalar evaluation of the entry conditional: rebuilds the
    /// deflated residual and design tensor entry by entry with nested loops.
    fn scalar_oracle_2x2x2(state: &CPState, x: &DenseTensor, mode: usize, j: usize) -> (f64, f64) {
        let a = &state.factors.factors;
        let lam = state.factors.weights[0];
        let (mut num, mut den) = (0.0, 0.0);
        for i0 in 0..2 {
            for i1 in 0..2 {
                for i2 in 0..2 {
                    let idx = [i0, i1, i2];
                    if idx[mode] != j {
                        continue;
                    }
                    let design: f64 = lam
                        * (0..3).filter(|&k| k != mode).map(|k| a[k][(idx[k], 0)]).product::<f64>();
                    // rank one: the deflated residual is the data itself
                    let v = x.get(&idx).unwrap();
                    num += v * design;
                    den += design * design;
                }
            }
        }
        let prec = state.tau * den + 2.0;
        (state.tau * num / prec, 1.0 / prec)
    }

    #[test]
    fn entry_conditionals_match_scalar_oracle() {
        let (x, _) = noisy_block(&[2, 2, 2], 1, 0.3, 11);
        let h = CPHyper::with_rank(1);
        let mut g = rng(12);
        let mut st = CPState::init(&[2, 2, 2], &h, 0, &mut g).unwrap();
        st.tau = 3.7;
        st.factors.weights[0] = 1.4;
        for mode in 0..3 {
            for j in 0..2 {
                let c = factor_conditional(&st, &x, mode, j, 0).unwrap();
                let (m, v) = scalar_oracle_2x2x2(&st, &x, mode, j);
                assert!((c.mean - m).abs() < 1e-12 && (c.var - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_design_falls_back_to_prior() {
        let (x, _) = noisy_block(&[3, 4, 5], 2, 0.1, 13);
        let h = CPHyper::with_rank(2);
        let mut st = CPState::init(&[3, 4, 5], &h, 0, &mut rng(14)).unwrap();
        st.factors.factors[1].column_mut(0).fill(0.0);
        let c = factor_conditional(&st, &x, 0, 1, 0).unwrap();
        assert_eq!(c.mean, 0.0);
        assert!((c.var - 1.0 / 3.0).abs() < 1e-15);
        // subject mode: prior precision is the subject count
        let c = factor_conditional(&st, &x, 2, 4, 0).unwrap();
        assert_eq!(c.mean, 0.0);
        assert!((c.var - 1.0 / 5.0).abs() < 1e-15);
        // lambda with zero design
        let c = lambda_conditional(&st, &x, &h, 0).unwrap();
        assert_eq!(c.mean, 0.0);
        assert!((c.var - 1.0 / h.kappa).abs() < 1e-9);
    }

    #[test]
    fn huge_kappa_pins_lambda_at_zero() {
        let (x, _) = noisy_block(&[3, 3, 3], 1, 0.1, 15);
        let mut h = CPHyper::with_rank(1);
        h.kappa = 1e12;
        let mut st = CPState::init(&[3, 3, 3], &h, 0, &mut rng(16)).unwrap();
        st.tau = 1.0;
        let v = update_lambda(&mut st, &x, &h, 0, &mut rng(17)).unwrap();
        assert!(v.abs() < 1e-4);
    }

    #[test]
    fn large_tau_mean_is_least_squares_value() {
        let (x, truth) = noisy_block(&[4, 3, 5], 1, 0.0, 18);
        let mut st = CPState { factors: truth.clone(), tau: 1e12, partition: 0 };
        for mode in 0..3 {
            for j in 0..truth.factors[mode].nrows() {
                // 1-D least squares: <slice, design> / <design, design>
                let c = factor_conditional(&st, &x, mode, j, 0).unwrap();
                assert!((c.mean - truth.factors[mode][(j, 0)]).abs() < 1e-6);
            }
        }
        st.factors.factors[2][(1, 0)] = 0.0;
        let c = factor_conditional(&st, &x, 2, 1, 0).unwrap();
        assert!((c.mean - truth.factors[2][(1, 0)]).abs() < 1e-6);
    }

    #[test]
    fn tau_parameters() {
        let x = DenseTensor::zeros(vec![2, 2, 2]).unwrap();
        let h = CPHyper { nu0_tau: 1.0, nu1_tau: 0.01, kappa: 1.0, rank: 1 };
        let mut st = CPState::init(&[2, 2, 2], &h, 0, &mut rng(19)).unwrap();
        st.factors.weights[0] = 0.0;
        let (shape, rate) = tau_conditional(&st, &x, &h).unwrap();
        assert_eq!(shape, 5.0);
        assert_eq!(rate, 0.01);
        let mut g = rng(20);
        let n = 100_000;
        let mean = (0..n).map(|_| update_tau(&mut st, &x, &h, &mut g).unwrap()).sum::<f64>() / n as f64;
        assert!((mean / 500.0 - 1.0).abs() < 0.02, "{mean}");

        // residual sum of squares 2 with nu1 = 1 gives rate 2
        let x = DenseTensor::new(vec![2, 1], vec![1.0, -1.0]).unwrap();
        let h = CPHyper { nu0_tau: 1.0, nu1_tau: 1.0, kappa: 1.0, rank: 1 };
        let mut st = CPState::init(&[2, 1], &h, 0, &mut rng(21)).unwrap();
        st.factors.weights[0] = 0.0;
        assert_eq!(tau_conditional(&st, &x, &h).unwrap().1, 2.0);
    }

    #[test]
    fn tau_rate_matches_loop_oracle() {
        let (x, _) = noisy_block(&[3, 2, 4], 2, 0.5, 22);
        let h = CPHyper::with_rank(2);
        let st = CPState::init(&[3, 2, 4], &h, 0, &mut rng(23)).unwrap();
        let mut ss = 0.0;
        for i in 0..3 {
            for j in 0..2 {
                for k in 0..4 {
                    let mut rec = 0.0;
                    for r in 0..2 {
                        rec += st.factors.weights[r]
                            * st.factors.factors[0][(i, r)]
                            * st.factors.factors[1][(j, r)]
                            * st.factors.factors[2][(k, r)];
                    }
                    ss += (x.get(&[i, j, k]).unwrap() - rec).powi(2);
                }
            }
        }
        let (shape, rate) = tau_conditional(&st, &x, &h).unwrap();
        assert_eq!(shape, h.nu0_tau + 12.0);
        assert!((rate - h.nu1_tau - ss / 2.0).abs() < 1e-10);
    }

    #[test]
    fn sweep_conditionals_agree_with_direct_route() {
        let (x, _) = noisy_block(&[3, 4, 2, 5], 3, 0.2, 24);
        let h = CPHyper::with_rank(3);
        let mut g = rng(25);
        let mut sampler = CpSampler::new(&x, h, 0, &mut g).unwrap();
        sampler.sweep(&mut g).unwrap();
        sampler.state.tau = 2.5;
        let last = x.order() - 1;
        let y = contract_last(&x, &sampler.state.factors.factors[last]);
        for m in 0..=last {
            let mt = if m < last {
                mttkrp_lead(&y, &sampler.state.factors.factors[..last], m)
            } else {
                mttkrp_last(&x, &khatri_rao(&sampler.state.factors.factors[..last]))
            };
            for r in 0..3 {
                let (means, var) = sampler.column_conditional(m, r, &mt);
                for (j, mean) in means.iter().enumerate() {
                    let c = factor_conditional(&sampler.state, &x, m, j, r).unwrap();
                    assert!((c.mean - mean).abs() < 1e-9 * (1.0 + mean.abs()), "mode {m} ({j},{r})");
                    assert!((c.var - var).abs() < 1e-12);
                }
            }
        }
        let exact = residual_ss(&x, &sampler.state.factors);
        assert!((sampler.residual_ss() - exact).abs() < 1e-9 * (1.0 + exact));
    }

    #[test]
    fn zero_rank_and_zero_iters_are_rejected() {
        let x = DenseTensor::zeros(vec![2, 2]).unwrap();
        assert!(gibbs_cp(&x, &CPHyper::with_rank(0), 10, &mut rng(1)).is_err());
        assert!(gibbs_cp(&x, &CPHyper::with_rank(1), 0, &mut rng(1)).is_err());
    }

    #[test]
    fn chains_are_seed_deterministic() {
        let (x, _) = noisy_block(&[3, 3, 4], 2, 0.3, 26);
        let h = CPHyper::with_rank(2);
        let a = gibbs_cp(&x, &h, 20, &mut rng(27)).unwrap();
        let b = gibbs_cp(&x, &h, 20, &mut rng(27)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noiseless_rank_two_block_is_recovered() {
        let (x, _) = noisy_block(&[16, 16, 16], 2, 0.0, 28);
        let h = CPHyper::with_rank(2);
        let chain = gibbs_cp(&x, &h, 2000, &mut rng(29)).unwrap();
        let mean = posterior_mean_reconstruction(&chain[1000..]).unwrap();
        let data_rms = (x.norm_sq() / x.len() as f64).sqrt();
        let err = rmse(&x, &mean).unwrap();
        assert!(err < 0.01 * data_rms, "rmse {err} vs data rms {data_rms}");
    }
}
