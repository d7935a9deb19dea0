//! Synthetic data generators, baseline feature extractors and the
//! simulation studies built from them.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Normal, StandardNormal};
use serde::Serialize;

use crate::als::{cp_als_seeded, AlsFit};
use crate::chain::{quantile_sorted, ChainStore};
use crate::cp_bayes::CPHyper;
use crate::decompose::gibbs_decompose;
use crate::error::{param_err, shape_err, Result};
use crate::factor::standardize_columns;
use crate::kruskal::{cp_reconstruct, last_mode_view, rmse, CPFactors};
use crate::pipeline::{fit, fitted_probabilities, projection, PipelineConfig, Projection};
use crate::probit::{binary_response, fit_probit, predict, SelectHyper};
use crate::tensor::{stack_subjects, DenseTensor};

/// Fraction of subjects whose thresholded probability `p > 0.5` matches `y`.
pub fn accuracy(y: &[f64], p_hat: &[f64]) -> Result<f64> {
    if y.len() != p_hat.len() || y.is_empty() {
        return Err(shape_err!("{} responses for {} predictions", y.len(), p_hat.len()));
    }
    let yb = binary_response(y)?;
    let hits = yb.iter().zip(p_hat).filter(|(y, p)| **y == (**p > 0.5)).count();
    Ok(hits as f64 / y.len() as f64)
}

/// Seed of replication `rep` derived from a base seed.
pub fn replication_seed(seed: u64, rep: usize) -> u64 {
    seed ^ (rep as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn bernoulli_labels(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let coin = Bernoulli::new(0.5).expect("valid probability");
    (0..n).map(|_| f64::from(u8::from(coin.sample(rng)))).collect()
}

/// Labelled images with the voxels where the groups differ.
#[derive(Debug, Clone)]
pub struct SimData {
    pub y: Vec<f64>,
    pub images: Vec<DenseTensor>,
    pub truth: DenseTensor,
}

pub const PHANTOM_SIDE: usize = 32;
pub const PHANTOM_EFFECT: f64 = 5.0;
/// Effect rows and columns of the phantom, half-open.
pub const PHANTOM_REGION: (usize, usize) = (17, 23);

/// 32x32 phantom: group 1 adds a 6x6 square of amplitude 5 to a zero
/// background, every pixel gets `N(0, noise_sd^2)` noise.
pub fn gen_phantom_2d(n: usize, noise_sd: f64, seed: u64) -> Result<SimData> {
    if !(noise_sd >= 0.0) {
        return Err(param_err!("noise_sd must be non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y = bernoulli_labels(n, &mut rng);
    let (lo, hi) = PHANTOM_REGION;
    let inside = |i: usize, j: usize| (lo..hi).contains(&i) && (lo..hi).contains(&j);
    let dims = vec![PHANTOM_SIDE, PHANTOM_SIDE];
    let truth = DenseTensor::from_fn(dims.clone(), |idx| f64::from(u8::from(inside(idx[0], idx[1]))))?;
    let images = y
        .iter()
        .map(|&yi| {
            DenseTensor::from_fn(dims.clone(), |idx| {
                let base = if inside(idx[0], idx[1]) { PHANTOM_EFFECT * yi } else { 0.0 };
                base + noise_sd * rng.sample::<f64, _>(StandardNormal)
            })
        })
        .collect::<Result<_>>()?;
    Ok(SimData { y, images, truth })
}

pub const SIM3D_DIMS: [usize; 3] = [64, 64, 50];
pub const SIM3D_NOISE_SD: f64 = 70.0;
pub const SIM3D_OFFSETS: [usize; 4] = [10, 22, 34, 46];

/// Factor matrix whose column `r` holds `sin(j pi / 14)`, `j = 1..13`, from
/// position `offsets[r] + j`; positions beyond the mode are dropped.
pub fn sine_factor(len: usize, offsets: &[usize]) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(len, offsets.len());
    for (r, &c) in offsets.iter().enumerate() {
        for j in 1..14 {
            // positions are 1-based
            if c + j <= len {
                a[(c + j - 1, r)] = (j as f64 * std::f64::consts::PI / 14.0).sin();
            }
        }
    }
    a
}

/// Rank-4 signal with unit weights and sine-profile factors.
pub fn sim3d_signal() -> Result<DenseTensor> {
    let factors = SIM3D_DIMS.iter().map(|&p| sine_factor(p, &SIM3D_OFFSETS)).collect();
    cp_reconstruct(&CPFactors::new(nalgebra::DVector::from_element(4, 1.0), factors)?)
}

/// Smooth template: three Gaussian bumps rescaled to span `[0, 250]`.
pub fn sim3d_template() -> Result<DenseTensor> {
    let bumps = [([20.0, 24.0, 15.0], 9.0, 1.0), ([42.0, 40.0, 28.0], 12.0, 0.8), ([30.0, 50.0, 38.0], 7.0, 0.6)];
    let raw = DenseTensor::from_fn(SIM3D_DIMS.to_vec(), |idx| {
        bumps
            .iter()
            .map(|(c, sd, h)| {
                let d2: f64 = idx.iter().zip(c).map(|(&i, c)| (i as f64 - c).powi(2)).sum();
                h * (-d2 / (2.0 * sd * sd)).exp()
            })
            .sum()
    })?;
    let (lo, hi) = raw
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    DenseTensor::new(raw.dims().to_vec(), raw.data().iter().map(|v| 250.0 * (v - lo) / (hi - lo)).collect())
}

/// `X_i = G0 + c0 y_i X0 + E_i` on 64x64x50 volumes with `N(0, 70^2)` noise.
pub fn gen_sim_3d(n: usize, c0: f64, seed: u64) -> Result<SimData> {
    let template = sim3d_template()?;
    let signal = sim3d_signal()?;
    let truth = DenseTensor::new(
        signal.dims().to_vec(),
        signal.data().iter().map(|v| f64::from(u8::from(*v != 0.0))).collect(),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y = bernoulli_labels(n, &mut rng);
    let noise = Normal::new(0.0, SIM3D_NOISE_SD).expect("valid sd");
    let images = y
        .iter()
        .map(|&yi| {
            let data = template
                .data()
                .iter()
                .zip(signal.data())
                .map(|(g, s)| g + c0 * yi * s + noise.sample(&mut rng))
                .collect();
            DenseTensor::new(template.dims().to_vec(), data)
        })
        .collect::<Result<_>>()?;
    Ok(SimData { y, images, truth })
}

/// Principal component scores and loadings of vectorized images.
#[derive(Debug, Clone)]
pub struct PcaFit {
    /// `N x R`, mutually orthogonal columns.
    pub scores: DMatrix<f64>,
    /// `P x R`, orthonormal columns.
    pub loadings: DMatrix<f64>,
    /// Share of the centered variance explained by each component.
    pub explained: Vec<f64>,
}

/// PCA of a stacked tensor (subjects last) through the centered `N x N` Gram matrix.
pub fn pca_stacked(x: &DenseTensor, r: usize) -> Result<PcaFit> {
    let view = last_mode_view(x);
    let (n, p) = view.shape();
    if r == 0 || r > n.min(p) {
        return Err(param_err!("PCA rank {r} outside 1..={}", n.min(p)));
    }
    let mut gram = DMatrix::zeros(n, n);
    let chunk = 4096;
    for v0 in (0..p).step_by(chunk) {
        let c = view.columns(v0, chunk.min(p - v0));
        gram.gemm(1.0, &c, &c.transpose(), 1.0);
    }
    let row_mean = gram.row_sum() / n as f64;
    let total = gram.sum() / (n * n) as f64;
    let centered = DMatrix::from_fn(n, n, |i, j| gram[(i, j)] - row_mean[i] - row_mean[j] + total);
    let eig = SymmetricEigen::new(centered);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let trace: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let mut scores = DMatrix::zeros(n, r);
    let mut u = DMatrix::zeros(n, r);
    let mut explained = Vec::with_capacity(r);
    for (k, &i) in order.iter().take(r).enumerate() {
        let ev = eig.eigenvalues[i].max(0.0);
        let sigma = ev.sqrt();
        u.set_column(k, &eig.eigenvectors.column(i));
        scores.set_column(k, &(eig.eigenvectors.column(i) * sigma));
        explained.push(if trace > 0.0 { ev / trace } else { 0.0 });
    }
    // X^T u / sigma; the mean drops out because u is orthogonal to ones
    let mut loadings = view.tr_mul(&u);
    for (k, mut col) in loadings.column_iter_mut().enumerate() {
        let s = scores.column(k).norm();
        if s > 0.0 {
            col /= s;
        }
    }
    Ok(PcaFit { scores, loadings, explained })
}

/// Top-`r` principal component scores of the vectorized images.
pub fn baseline_pca_features(images: &[DenseTensor], r: usize) -> Result<DMatrix<f64>> {
    Ok(pca_stacked(&stack_subjects(images)?, r)?.scores)
}

const TALS_ITERS: usize = 50;
const TALS_TOL: f64 = 1e-6;

/// Subject factor of a rank-`r` CP-ALS fit of the stacked tensor.
pub fn tals_stacked(x: &DenseTensor, r: usize, seed: u64) -> Result<AlsFit> {
    cp_als_seeded(x, r, TALS_ITERS, TALS_TOL, seed)
}

/// Subject-mode factor matrix of a non-partitioned CP-ALS fit.
pub fn baseline_tals_features(images: &[DenseTensor], r: usize) -> Result<DMatrix<f64>> {
    Ok(tals_stacked(&stack_subjects(images)?, r, 0)?.factors.subject().clone())
}

/// Settings of the two-stage baselines: fixed features then a
/// spike-and-slab probit fit.
#[derive(Debug, Clone)]
pub struct ProbitSettings {
    pub select: SelectHyper,
    pub iters: usize,
    pub burn_in: usize,
}

/// Fits the probit model to standardized features plus an intercept and
/// returns the in-sample predictive probabilities and the retained
/// coefficient draws on the raw feature scale.
pub fn two_stage(y: &[f64], feat: &DMatrix<f64>, s: &ProbitSettings, seed: u64) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let yb = binary_response(y)?;
    let (f, stdz) = standardize_columns(feat);
    let z = DMatrix::from_element(y.len(), 1, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws = fit_probit(&yb, &z, &f, &s.select, s.iters, s.burn_in, 1, &mut rng)?;
    let p = predict(&draws, &z, std::slice::from_ref(&f))?;
    let coefs = draws
        .iter()
        .map(|d| d.b.iter().zip(&stdz.scale).map(|(b, s)| b / s).collect())
        .collect();
    Ok((p, coefs))
}

/// Posterior mean and 95% significance of `loadings * c` over coefficient draws.
pub fn linear_projection(loadings: &DMatrix<f64>, coefs: &[Vec<f64>], dims: &[usize]) -> Result<(DenseTensor, DenseTensor)> {
    let n = coefs.len();
    if n == 0 {
        return Err(param_err!("no coefficient draws"));
    }
    let cm = DMatrix::from_fn(loadings.ncols(), n, |k, t| coefs[t][k]);
    let imgs = loadings * cm;
    let mut mean = Vec::with_capacity(imgs.nrows());
    let mut sig = Vec::with_capacity(imgs.nrows());
    for row in imgs.row_iter() {
        let mut v: Vec<f64> = row.iter().copied().collect();
        mean.push(v.iter().sum::<f64>() / n as f64);
        v.sort_by(f64::total_cmp);
        let (lo, hi) = (quantile_sorted(&v, 0.025), quantile_sorted(&v, 0.975));
        sig.push(if lo > 0.0 || hi < 0.0 { 1.0 } else { 0.0 });
    }
    Ok((DenseTensor::new(dims.to_vec(), mean)?, DenseTensor::new(dims.to_vec(), sig)?))
}

/// Precision and recall of a 0/1 mask against the truth. Precision is zero
/// when nothing is flagged.
pub fn mask_scores(mask: &DenseTensor, truth: &DenseTensor) -> Result<(f64, f64)> {
    if mask.dims() != truth.dims() {
        return Err(shape_err!("mask dims {:?} differ from truth dims {:?}", mask.dims(), truth.dims()));
    }
    let (mut tp, mut flagged, mut positives) = (0usize, 0usize, 0usize);
    for (m, t) in mask.data().iter().zip(truth.data()) {
        let (m, t) = (*m != 0.0, *t != 0.0);
        tp += usize::from(m && t);
        flagged += usize::from(m);
        positives += usize::from(t);
    }
    let precision = if flagged > 0 { tp as f64 / flagged as f64 } else { 0.0 };
    let recall = if positives > 0 { tp as f64 / positives as f64 } else { 0.0 };
    Ok((precision, recall))
}

/// Posterior-mean reconstruction of a tensor decomposed block by block with
/// the Gibbs sampler (`burn_in` sweeps discarded).
pub fn bayes_decompose(
    x: &DenseTensor,
    block_dims: &[usize],
    h: &CPHyper,
    iters: usize,
    burn_in: usize,
    seed: u64,
) -> Result<DenseTensor> {
    Ok(gibbs_decompose(x, block_dims, h, iters, burn_in, seed)?.reconstruction)
}

/// Noisy cube with structure at several scales: twelve rank-one terms with
/// geometrically decaying weights.
pub fn gen_multiscale(side: usize, noise_sd: f64, seed: u64) -> Result<DenseTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let terms = 12;
    let weights = nalgebra::DVector::from_fn(terms, |r, _| 40.0 * 0.7f64.powi(r as i32));
    let factors = (0..3)
        .map(|_| {
            let mut a = DMatrix::from_fn(side, terms, |_, _| rng.sample::<f64, _>(StandardNormal));
            for mut c in a.column_iter_mut() {
                c.normalize_mut();
            }
            a * (side as f64).sqrt()
        })
        .collect();
    let clean = cp_reconstruct(&CPFactors::new(weights, factors)?)?;
    add_noise(clean, noise_sd, &mut rng)
}

/// Noisy cube of side `2b` holding one round blob inside each of its eight
/// `b`-cubes. The blob profile `h exp(-(r/w)^4)` is not separable, so no
/// single rank-one term reproduces a blob.
pub fn gen_localized(half: usize, noise_sd: f64, seed: u64) -> Result<DenseTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = 2 * half;
    let w = half as f64 / 4.0;
    let blobs: Vec<([f64; 3], f64)> = (0..8)
        .map(|o| {
            let c = [0, 1, 2].map(|d| {
                let base = if (o >> (2 - d)) & 1 == 1 { half } else { 0 } as f64;
                base + half as f64 / 2.0 + rng.random_range(-1.0..1.0) * half as f64 / 8.0
            });
            (c, rng.random_range(5.0..10.0))
        })
        .collect();
    let clean = DenseTensor::from_fn(vec![side; 3], |idx| {
        blobs
            .iter()
            .map(|(c, h)| {
                let d2: f64 = idx.iter().zip(c).map(|(&i, c)| (i as f64 - c).powi(2)).sum();
                h * (-(d2 / (w * w)).powi(2)).exp()
            })
            .sum()
    })?;
    add_noise(clean, noise_sd, &mut rng)
}

fn add_noise(x: DenseTensor, sd: f64, rng: &mut ChaCha8Rng) -> Result<DenseTensor> {
    let dims = x.dims().to_vec();
    let data = x
        .into_data()
        .into_iter()
        .map(|v| v + sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    DenseTensor::new(dims, data)
}

/// One row of the decomposition study.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecompRow {
    pub run: usize,
    pub data: String,
    pub method: String,
    pub rank: usize,
    pub rmse: f64,
}

#[derive(Debug, Clone)]
pub struct DecompSettings {
    pub half: usize,
    pub noise_sd: f64,
    pub ranks: Vec<usize>,
    pub iters: usize,
    pub burn_in: usize,
    pub als_iters: usize,
}

impl Default for DecompSettings {
    fn default() -> Self {
        Self { half: 16, noise_sd: 0.25, ranks: vec![2, 4, 8], iters: 2000, burn_in: 1000, als_iters: 500 }
    }
}

/// ALS and Gibbs reconstructions (one block and eight blocks) of a
/// multiscale and a localized cube at every rank.
pub fn decomp_experiment(replications: usize, seed: u64, s: &DecompSettings) -> Result<Vec<DecompRow>> {
    let mut rows = Vec::new();
    let side = 2 * s.half;
    for run in 0..replications {
        let rs = replication_seed(seed, run);
        let datasets = [
            ("multiscale", gen_multiscale(side, s.noise_sd, rs)?),
            ("localized", gen_localized(s.half, s.noise_sd, rs)?),
        ];
        for (name, x) in &datasets {
            for &r in &s.ranks {
                let h = CPHyper::with_rank(r);
                let als = cp_reconstruct(&cp_als_seeded(x, r, s.als_iters, 1e-10, rs)?.factors)?;
                let whole = bayes_decompose(x, x.dims(), &h, s.iters, s.burn_in, rs)?;
                let split = bayes_decompose(x, &[s.half; 3], &h, s.iters, s.burn_in, rs)?;
                for (method, xhat) in [("als", &als), ("bayes_s1", &whole), ("bayes_s8", &split)] {
                    rows.push(DecompRow {
                        run,
                        data: name.to_string(),
                        method: method.to_string(),
                        rank: r,
                        rmse: rmse(x, xhat)?,
                    });
                }
            }
        }
    }
    Ok(rows)
}

/// Accuracy of one method in one replication.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodAccuracy {
    pub run: usize,
    pub method: String,
    pub c0: f64,
    pub accuracy: f64,
}

/// Localization scores and maps of one phantom model.
#[derive(Debug, Clone)]
pub struct PhantomModel {
    pub method: String,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub mean: DenseTensor,
    pub significant: DenseTensor,
}

#[derive(Debug, Clone)]
pub struct PhantomSettings {
    pub n: usize,
    pub noise_sd: f64,
    pub rank: usize,
    pub iters: usize,
    pub burn_in: usize,
}

impl Default for PhantomSettings {
    fn default() -> Self {
        Self { n: 200, noise_sd: 5.0, rank: 8, iters: 5000, burn_in: 3000 }
    }
}

fn phantom_config(block: usize, s: &PhantomSettings, seed: u64) -> PipelineConfig {
    PipelineConfig {
        block_dims: vec![block, block],
        cp: CPHyper::with_rank(s.rank),
        factor_model: false,
        iters: s.iters,
        burn_in: s.burn_in,
        thin: 1,
        seed,
        ..PipelineConfig::default()
    }
}

/// The fpca baseline and the partition model with one and sixteen blocks on
/// one phantom dataset.
pub fn phantom_experiment(seed: u64, s: &PhantomSettings) -> Result<(SimData, Vec<PhantomModel>)> {
    let data = gen_phantom_2d(s.n, s.noise_sd, seed)?;
    let x = stack_subjects(&data.images)?;
    let mut models = Vec::new();

    let pca = pca_stacked(&x, s.rank)?;
    let settings = ProbitSettings { select: SelectHyper::default(), iters: s.iters, burn_in: s.burn_in };
    let (p, coefs) = two_stage(&data.y, &pca.scores, &settings, seed)?;
    let (mean, significant) = linear_projection(&pca.loadings, &coefs, data.truth.dims())?;
    let (precision, recall) = mask_scores(&significant, &data.truth)?;
    models.push(PhantomModel {
        method: "fpca".into(),
        accuracy: accuracy(&data.y, &p)?,
        precision,
        recall,
        mean,
        significant,
    });

    for (label, block) in [("tprm_s1", PHANTOM_SIDE), ("tprm_s16", PHANTOM_SIDE / 4)] {
        let chain = fit(&x, &data.y, None, &phantom_config(block, s, seed))?;
        models.push(phantom_model(label, &chain, &data)?);
    }
    Ok((data, models))
}

fn phantom_model(label: &str, chain: &ChainStore, data: &SimData) -> Result<PhantomModel> {
    let Projection { mean, significant, .. } = projection(chain)?;
    let (precision, recall) = mask_scores(&significant, &data.truth)?;
    Ok(PhantomModel {
        method: label.into(),
        accuracy: accuracy(&data.y, &fitted_probabilities(chain)?)?,
        precision,
        recall,
        mean,
        significant,
    })
}

#[derive(Debug, Clone)]
pub struct Sim3dSettings {
    pub n: usize,
    pub c0: f64,
    /// Blocks of the partition model (16x16x25 gives 32 blocks).
    pub block_dims: Vec<usize>,
    pub rank_pmtd: usize,
    pub rank_baseline: usize,
    pub iters: usize,
    pub burn_in: usize,
}

impl Default for Sim3dSettings {
    fn default() -> Self {
        Self {
            n: 200,
            c0: 65.0,
            block_dims: vec![16, 16, 25],
            rank_pmtd: 2,
            rank_baseline: 4,
            iters: 5000,
            burn_in: 3000,
        }
    }
}

/// In-sample model accuracy of fpca, tals and pmtd on one 3-D dataset.
pub fn sim3d_replication(run: usize, seed: u64, s: &Sim3dSettings) -> Result<Vec<MethodAccuracy>> {
    let (x, y) = {
        let data = gen_sim_3d(s.n, s.c0, seed)?;
        (stack_subjects(&data.images)?, data.y)
    };
    let settings = ProbitSettings { select: SelectHyper::default(), iters: s.iters, burn_in: s.burn_in };
    let row = |method: &str, accuracy: f64| MethodAccuracy { run, method: method.into(), c0: s.c0, accuracy };

    let pca = pca_stacked(&x, s.rank_baseline)?;
    let (p, _) = two_stage(&y, &pca.scores, &settings, seed)?;
    let fpca = row("fpca", accuracy(&y, &p)?);

    let tals = tals_stacked(&x, s.rank_baseline, seed)?;
    let (p, _) = two_stage(&y, tals.factors.subject(), &settings, seed)?;
    let tals = row("tals", accuracy(&y, &p)?);

    let blocks: usize = x.dims().iter().zip(&s.block_dims).map(|(d, b)| d / b).product();
    let p_l = blocks * s.rank_pmtd;
    let cfg = PipelineConfig {
        block_dims: s.block_dims.clone(),
        cp: CPHyper::with_rank(s.rank_pmtd),
        k: (p_l.min(s.n) / 2).max(1),
        iters: s.iters,
        burn_in: s.burn_in,
        seed,
        ..PipelineConfig::default()
    };
    let chain = fit(&x, &y, None, &cfg)?;
    let pmtd = row("pmtd", accuracy(&y, &fitted_probabilities(&chain)?)?);
    Ok(vec![fpca, tals, pmtd])
}

/// `replications` independent 3-D datasets, three rows each.
pub fn sim3d_experiment(replications: usize, seed: u64, s: &Sim3dSettings) -> Result<Vec<MethodAccuracy>> {
    let mut rows = Vec::with_capacity(3 * replications);
    for run in 0..replications {
        rows.extend(sim3d_replication(run, replication_seed(seed, run), s)?);
    }
    Ok(rows)
}
