//! Joint-distribution tests of the Gibbs updates.
//!
//! Two simulators of `p(theta, data)` are compared. The marginal-conditional
//! one draws `theta` from the prior and data given `theta`, independently each
//! time. The successive-conditional one alternates a sampler transition for
//! `theta` given the data with a fresh data draw given `theta`. When the
//! transition leaves the posterior invariant both produce the same moments.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};
use serde::Serialize;

use crate::cp_bayes::{CPHyper, CPState, CpSampler};
use crate::error::{param_err, Result};
use crate::factor::{factor_sweep, FactorHyper, FactorState};
use crate::kruskal::{cp_reconstruct, CPFactors};
use crate::normal::std_normal_cdf;
use crate::probit::{select_sweep, update_w, RegressionState, SelectHyper};
use crate::tensor::DenseTensor;

/// A model with a prior simulator, a data simulator and a sampler transition.
pub trait GewekeModel {
    type Theta: Clone;
    type Data;

    fn prior<R: Rng>(&self, rng: &mut R) -> Self::Theta;
    fn data<R: Rng>(&self, theta: &Self::Theta, rng: &mut R) -> Result<Self::Data>;
    /// One transition that leaves `p(theta | data)` invariant.
    fn step<R: Rng>(&self, theta: &mut Self::Theta, data: &Self::Data, rng: &mut R) -> Result<()>;
    /// Test functions; their squares are added by the harness.
    fn stats(&self, theta: &Self::Theta) -> Vec<f64>;
    fn names(&self) -> Vec<String>;
}

#[derive(Debug, Clone, Serialize)]
pub struct GewekeStat {
    pub name: String,
    pub marginal: f64,
    pub successive: f64,
    pub z: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GewekeReport {
    pub stats: Vec<GewekeStat>,
}

impl GewekeReport {
    pub fn max_abs_z(&self) -> f64 {
        self.stats.iter().map(|s| s.z.abs()).fold(0.0, f64::max)
    }

    pub fn passes(&self, limit: f64) -> bool {
        self.max_abs_z() < limit
    }
}

const BATCHES: usize = 50;

fn with_squares(v: Vec<f64>) -> Vec<f64> {
    let sq: Vec<f64> = v.iter().map(|x| x * x).collect();
    v.into_iter().chain(sq).collect()
}

/// Runs both simulators and z-scores the difference of every moment. The
/// successive chain's standard errors come from batch means.
pub fn run_geweke<M: GewekeModel>(model: &M, marginal: usize, successive: usize, seed: u64) -> Result<GewekeReport> {
    if marginal < 2 || successive < 2 * BATCHES {
        return Err(param_err!("need at least 2 marginal and {} successive draws", 2 * BATCHES));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mc: Vec<Vec<f64>> = Vec::with_capacity(marginal);
    for _ in 0..marginal {
        let theta = model.prior(&mut rng);
        mc.push(with_squares(model.stats(&theta)));
    }

    let mut theta = model.prior(&mut rng);
    let mut data = model.data(&theta, &mut rng)?;
    let mut sc: Vec<Vec<f64>> = Vec::with_capacity(successive);
    for _ in 0..successive {
        model.step(&mut theta, &data, &mut rng)?;
        data = model.data(&theta, &mut rng)?;
        sc.push(with_squares(model.stats(&theta)));
    }

    let base = model.names();
    let names: Vec<String> = base.iter().cloned().chain(base.iter().map(|n| format!("{n}^2"))).collect();
    let batch = successive / BATCHES;
    let stats = names
        .into_iter()
        .enumerate()
        .map(|(j, name)| {
            let (m1, v1) = mean_var(mc.iter().map(|s| s[j]));
            let used = &sc[..batch * BATCHES];
            let (m2, _) = mean_var(used.iter().map(|s| s[j]));
            let means = used.chunks(batch).map(|c| c.iter().map(|s| s[j]).sum::<f64>() / batch as f64);
            let (_, vb) = mean_var(means);
            let se2 = v1 / marginal as f64 + vb / BATCHES as f64;
            let z = if se2 > 0.0 { (m1 - m2) / se2.sqrt() } else { 0.0 };
            GewekeStat { name, marginal: m1, successive: m2, z }
        })
        .collect();
    Ok(GewekeReport { stats })
}

fn mean_var(it: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = it.collect();
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, var)
}

fn normal_matrix<R: Rng>(r: usize, c: usize, sd: f64, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| sd * rng.sample::<f64, _>(StandardNormal))
}

fn gamma_draw<R: Rng>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    Gamma::new(shape, rate.recip()).expect("valid gamma").sample(rng)
}

/// CP block updates on a small block.
pub struct CpModel {
    pub dims: Vec<usize>,
    pub h: CPHyper,
}

impl Default for CpModel {
    fn default() -> Self {
        Self { dims: vec![3, 3, 2], h: CPHyper { nu0_tau: 4.0, nu1_tau: 4.0, kappa: 1.0, rank: 2 } }
    }
}

impl GewekeModel for CpModel {
    type Theta = CPState;
    type Data = DenseTensor;

    fn prior<R: Rng>(&self, rng: &mut R) -> CPState {
        let r = self.h.rank;
        let factors = self.dims.iter().map(|&j| normal_matrix(j, r, (j as f64).sqrt().recip(), rng)).collect();
        let weights = DVector::from_fn(r, |_, _| self.h.kappa.sqrt().recip() * rng.sample::<f64, _>(StandardNormal));
        CPState {
            factors: CPFactors::new(weights, factors).expect("consistent shapes"),
            tau: gamma_draw(self.h.nu0_tau, self.h.nu1_tau, rng),
            partition: 0,
        }
    }

    fn data<R: Rng>(&self, theta: &CPState, rng: &mut R) -> Result<DenseTensor> {
        let mean = cp_reconstruct(&theta.factors)?;
        let sd = theta.tau.sqrt().recip();
        let data = mean.data().iter().map(|m| m + sd * rng.sample::<f64, _>(StandardNormal)).collect();
        DenseTensor::new(self.dims.clone(), data)
    }

    fn step<R: Rng>(&self, theta: &mut CPState, data: &DenseTensor, rng: &mut R) -> Result<()> {
        let mut s = CpSampler::from_state(data, self.h, theta.clone())?;
        s.sweep(rng)?;
        *theta = s.into_state();
        Ok(())
    }

    fn stats(&self, theta: &CPState) -> Vec<f64> {
        let f = &theta.factors;
        let mut v = vec![theta.tau, f.weights.sum()];
        for a in &f.factors {
            v.push(a.sum());
        }
        v
    }

    fn names(&self) -> Vec<String> {
        let mut n = vec!["tau".to_string(), "sum lambda".to_string()];
        for m in 0..self.dims.len() {
            n.push(format!("sum A{m}"));
        }
        n
    }
}

/// Factor model updates.
pub struct FactorModel {
    pub n: usize,
    pub p: usize,
    pub k: usize,
    pub h: FactorHyper,
}

impl Default for FactorModel {
    fn default() -> Self {
        Self { n: 4, p: 6, k: 2, h: FactorHyper { beta0: 4.0, beta1: 4.0 } }
    }
}

impl GewekeModel for FactorModel {
    type Theta = FactorState;
    type Data = DMatrix<f64>;

    fn prior<R: Rng>(&self, rng: &mut R) -> FactorState {
        FactorState {
            g: normal_matrix(self.n, self.k, (self.n as f64).sqrt().recip(), rng),
            d: normal_matrix(self.k, self.p, 1.0, rng),
            tau_psi: gamma_draw(self.h.beta0, self.h.beta1, rng),
        }
    }

    fn data<R: Rng>(&self, theta: &FactorState, rng: &mut R) -> Result<DMatrix<f64>> {
        let sd = theta.tau_psi.sqrt().recip();
        Ok(&theta.g * &theta.d + normal_matrix(self.n, self.p, sd, rng))
    }

    fn step<R: Rng>(&self, theta: &mut FactorState, data: &DMatrix<f64>, rng: &mut R) -> Result<()> {
        factor_sweep(theta, data, &self.h, rng)
    }

    fn stats(&self, theta: &FactorState) -> Vec<f64> {
        let gd = &theta.g * &theta.d;
        vec![theta.tau_psi, theta.g.sum(), theta.d.sum(), gd.sum(), theta.g.column(0).dot(&theta.g.column(1))]
    }

    fn names(&self) -> Vec<String> {
        ["tau_psi", "sum G", "sum D", "sum GD", "g0.g1"].map(String::from).to_vec()
    }
}

/// Probit latents and the spike-and-slab block on a fixed design.
pub struct ProbitModel {
    pub z: DMatrix<f64>,
    pub feat: DMatrix<f64>,
    pub h: SelectHyper,
}

impl ProbitModel {
    pub fn new(n: usize, features: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut z = normal_matrix(n, 2, 1.0, &mut rng);
        z.column_mut(0).fill(1.0);
        Self {
            z,
            feat: normal_matrix(n, features, 0.7, &mut rng),
            h: SelectHyper {
                sigma2: 2.0,
                eps: 0.05,
                alpha0: 1.0,
                alpha1: 1.0,
                gamma_star: vec![0.2, -0.1],
                nu0_upsilon: 4.0,
                nu1_upsilon: 4.0,
            },
        }
    }
}

impl GewekeModel for ProbitModel {
    type Theta = RegressionState;
    type Data = Vec<bool>;

    fn prior<R: Rng>(&self, rng: &mut R) -> RegressionState {
        let h = &self.h;
        let k = self.feat.ncols();
        let pi = Beta::new(h.alpha0, h.alpha1).expect("valid beta").sample(rng);
        let delta: Vec<bool> = (0..k).map(|_| rng.random::<f64>() < pi).collect();
        let b = DVector::from_fn(k, |j, _| {
            let var = if delta[j] { h.sigma2 } else { h.eps };
            var.sqrt() * rng.sample::<f64, _>(StandardNormal)
        });
        let upsilon = gamma_draw(h.nu0_upsilon, h.nu1_upsilon, rng);
        let gamma = DVector::from_fn(self.z.ncols(), |j, _| {
            h.gamma_star[j] + upsilon.sqrt().recip() * rng.sample::<f64, _>(StandardNormal)
        });
        RegressionState { w: DVector::zeros(self.z.nrows()), b, delta, pi, gamma, upsilon }
    }

    fn data<R: Rng>(&self, theta: &RegressionState, rng: &mut R) -> Result<Vec<bool>> {
        let eta = theta.linear_predictor(&self.z, &self.feat);
        Ok(eta.iter().map(|e| rng.random::<f64>() < std_normal_cdf(*e)).collect())
    }

    fn step<R: Rng>(&self, theta: &mut RegressionState, y: &Vec<bool>, rng: &mut R) -> Result<()> {
        update_w(theta, y, &self.z, &self.feat, rng)?;
        select_sweep(theta, &self.h, &self.z, &self.feat, rng)
    }

    fn stats(&self, theta: &RegressionState) -> Vec<f64> {
        let on = theta.delta.iter().filter(|d| **d).count() as f64;
        let mut v = vec![theta.b.sum(), on, theta.pi, theta.upsilon];
        v.extend(theta.gamma.iter());
        v.push(theta.b[0]);
        v
    }

    fn names(&self) -> Vec<String> {
        let mut n: Vec<String> = ["sum b", "sum delta", "pi", "upsilon"].map(String::from).to_vec();
        n.extend((0..self.z.ncols()).map(|j| format!("gamma{j}")));
        n.push("b0".into());
        n
    }
}
