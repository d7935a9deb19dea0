//! Joint Gibbs sampler for the partitioned tensor probit model.
//!
//! Each iteration updates the probit latents, every partition's CP block,
//! the factor model (when enabled) and the spike-and-slab regression, in that
//! order. Partitions are sampled concurrently with one RNG stream each, so a
//! run is reproducible whatever the thread count.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::als::cp_als_seeded;
use crate::chain::{quantile_sorted, ChainMeta, ChainStore, DrawSink, MemorySink};
use crate::cp_bayes::{CPHyper, CPState, CpSampler};
use crate::error::{numeric_err, param_err, shape_err, Result};
use crate::factor::{factor_sweep, scores_for, standardize_columns, FactorHyper, FactorState, Standardization};
use crate::kruskal::{khatri_rao, mttkrp_last};
use crate::normal::std_normal_cdf;
use crate::partition::{partition, unpartition, PartitionGrid};
use crate::probit::{binary_response, select_sweep, update_w, warm_start, RegressionState, SelectHyper};
use crate::sim::accuracy;
use crate::tensor::DenseTensor;

/// ALS effort spent per block when screening.
const SCREEN_ALS_ITERS: usize = 25;
const SCREEN_ALS_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Block lengths of the image modes; the subject mode is never split.
    pub block_dims: Vec<usize>,
    /// Zero-pad image modes that are not a multiple of the block length.
    pub pad: bool,
    /// CP prior; `cp.rank` is the per-block rank `R`.
    pub cp: CPHyper,
    /// Latent factors `K`.
    pub k: usize,
    pub factor_model: bool,
    pub factor: FactorHyper,
    pub select: SelectHyper,
    pub iters: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub screening: bool,
    pub screen_tol: f64,
    /// Center and scale the extracted features every iteration.
    pub standardize: bool,
    /// Prepend a column of ones to the covariates.
    pub intercept: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            block_dims: Vec::new(),
            pad: false,
            cp: CPHyper::with_rank(2),
            k: 100,
            factor_model: true,
            factor: FactorHyper::default(),
            select: SelectHyper::default(),
            iters: 5000,
            burn_in: 3000,
            thin: 1,
            seed: 0,
            screening: true,
            screen_tol: 1e-8,
            standardize: true,
            intercept: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iters {
            return Err(param_err!("burn_in {} must be below iters {}", self.burn_in, self.iters));
        }
        if self.thin == 0 {
            return Err(param_err!("thin must be at least 1"));
        }
        if self.factor_model && self.k == 0 {
            return Err(param_err!("K must be at least 1 when the factor model is on"));
        }
        if !(self.screen_tol >= 0.0) {
            return Err(param_err!("screen_tol must be non-negative"));
        }
        self.cp.validate()?;
        self.factor.validate()?;
        self.select.validate()
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(json))
    }

    fn grid(&self, dims: &[usize]) -> Result<PartitionGrid> {
        let lead = dims.len() - 1;
        if self.block_dims.len() != lead {
            return Err(shape_err!(
                "block_dims {:?} has {} entries, images have {lead} modes",
                self.block_dims,
                self.block_dims.len()
            ));
        }
        let mut block = self.block_dims.clone();
        block.push(dims[lead]);
        if self.pad {
            PartitionGrid::with_padding(dims, &block)
        } else {
            PartitionGrid::new(dims, &block)
        }
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn design(z: Option<&DMatrix<f64>>, n: usize, intercept: bool) -> Result<DMatrix<f64>> {
    let cols = z.map_or(0, |z| z.ncols());
    if let Some(z) = z {
        if z.nrows() != n {
            return Err(shape_err!("covariates have {} rows, expected {n}", z.nrows()));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(param_err!("covariates contain non-finite values"));
        }
    }
    let off = usize::from(intercept);
    Ok(DMatrix::from_fn(n, cols + off, |i, j| {
        if j < off {
            1.0
        } else {
            z.expect("covariate column")[(i, j - off)]
        }
    }))
}

fn block_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Drops partitions whose subject factor is zero to within `tol`; returns the
/// surviving partition ids in order.
pub fn screen(states: &[CPState], tol: f64) -> Vec<usize> {
    states
        .iter()
        .filter(|s| s.factors.subject().amax() >= tol)
        .map(|s| s.partition)
        .collect()
}

/// ALS point estimates for every block. Screening reads them and the
/// sampler starts from them.
pub fn als_states(blocks: &[DenseTensor], rank: usize, seed: u64) -> Result<Vec<CPState>> {
    blocks
        .par_iter()
        .enumerate()
        .map(|(s, b)| {
            let fit = cp_als_seeded(b, rank, SCREEN_ALS_ITERS, SCREEN_ALS_TOL, seed)?;
            Ok(CPState { factors: fit.factors, tau: 1.0, partition: s })
        })
        .collect()
}

/// Fits the model and keeps the draws in memory.
pub fn fit(x: &DenseTensor, y: &[f64], z: Option<&DMatrix<f64>>, cfg: &PipelineConfig) -> Result<ChainStore> {
    let mut sink = MemorySink::default();
    let meta = fit_with_sink(x, y, z, cfg, &mut sink)?;
    sink.into_store(meta)
}

/// Fits the model, handing every retained draw to `sink`.
pub fn fit_with_sink(
    x: &DenseTensor,
    y: &[f64],
    z: Option<&DMatrix<f64>>,
    cfg: &PipelineConfig,
    sink: &mut dyn DrawSink,
) -> Result<ChainMeta> {
    cfg.validate()?;
    if x.order() < 3 {
        return Err(shape_err!("need images of order >= 2 stacked along a subject mode"));
    }
    let n = x.subject_count();
    if y.len() != n {
        return Err(shape_err!("response has {} entries, tensor has {n} subjects", y.len()));
    }
    let yb = binary_response(y)?;
    let zm = design(z, n, cfg.intercept)?;
    let grid = cfg.grid(x.dims())?;
    let blocks = partition(x, &grid)?;
    let rank = cfg.cp.rank;

    let start = als_states(&blocks, rank, cfg.seed)?;
    let survivors: Vec<usize> = if cfg.screening {
        screen(&start, cfg.screen_tol)
    } else {
        (0..blocks.len()).collect()
    };
    if survivors.is_empty() {
        return Err(param_err!("screening removed every partition"));
    }
    let p_l = survivors.len() * rank;

    let mut samplers = Vec::with_capacity(survivors.len());
    let mut rngs = Vec::with_capacity(survivors.len());
    for &s in &survivors {
        let state = CPState { tau: cfg.cp.nu0_tau / cfg.cp.nu1_tau, ..start[s].clone() };
        samplers.push(CpSampler::from_state(&blocks[s], cfg.cp, state)?);
        rngs.push(block_rng(cfg.seed, s as u64 + 1));
    }
    drop(start);
    let mut rng = block_rng(cfg.seed, 0);

    let features = |samplers: &[CpSampler<'_>]| -> (DMatrix<f64>, Standardization) {
        let l = subject_matrix(samplers.iter().map(|s| s.state()), n, rank);
        if cfg.standardize {
            standardize_columns(&l)
        } else {
            (l, Standardization::identity(p_l))
        }
    };

    let l0 = features(&samplers).0;
    let mut fs = if cfg.factor_model {
        Some(FactorState::from_svd(&l0, cfg.k)?)
    } else {
        None
    };
    let mut feat = match &fs {
        Some(f) => f.g.clone(),
        None => l0,
    };
    let mut reg = RegressionState::init(n, feat.ncols(), zm.ncols());
    warm_start(&mut reg, &cfg.select, &yb, &zm, &feat, &mut rng)?;

    for t in 0..cfg.iters {
        update_w(&mut reg, &yb, &zm, &feat, &mut rng)?;
        samplers
            .par_iter_mut()
            .zip(rngs.par_iter_mut())
            .try_for_each(|(s, r)| s.sweep(r))?;
        let (l, stdz) = features(&samplers);
        feat = match fs.as_mut() {
            Some(f) => {
                factor_sweep(f, &l, &cfg.factor, &mut rng)?;
                f.g.clone()
            }
            None => l,
        };
        select_sweep(&mut reg, &cfg.select, &zm, &feat, &mut rng)?;

        if t >= cfg.burn_in && (t - cfg.burn_in + 1) % cfg.thin == 0 {
            record(sink, &samplers, &stdz, fs.as_ref(), &reg, &zm, &feat)?;
        }
    }

    Ok(ChainMeta {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        iters: cfg.iters,
        burn_in: cfg.burn_in,
        thin: cfg.thin,
        draws: ChainMeta::retained(cfg.iters, cfg.burn_in, cfg.thin),
        grid,
        rank,
        survivors,
        factor_model: cfg.factor_model,
        k: if cfg.factor_model { cfg.k } else { 0 },
        n_train: n,
        covariates: z.map_or(0, |z| z.ncols()),
        intercept: cfg.intercept,
        widths: Default::default(),
    })
}

/// Subject factors of the given states side by side, `N x (S R)`.
fn subject_matrix<'s>(states: impl Iterator<Item = &'s CPState>, n: usize, rank: usize) -> DMatrix<f64> {
    let states: Vec<_> = states.collect();
    let mut l = DMatrix::zeros(n, states.len() * rank);
    for (u, s) in states.iter().enumerate() {
        l.columns_mut(u * rank, rank).copy_from(s.factors.subject());
    }
    l
}

fn record(
    sink: &mut dyn DrawSink,
    samplers: &[CpSampler<'_>],
    stdz: &Standardization,
    fs: Option<&FactorState>,
    reg: &RegressionState,
    z: &DMatrix<f64>,
    feat: &DMatrix<f64>,
) -> Result<()> {
    let tau: Vec<f64> = samplers.iter().map(|s| s.state().tau).collect();
    sink.push("tau", &tau)?;
    let mut lambda = Vec::new();
    let mut factors = Vec::new();
    for s in samplers {
        let f = &s.state().factors;
        lambda.extend_from_slice(f.weights.as_slice());
        for a in &f.factors[..f.order() - 1] {
            factors.extend_from_slice(a.as_slice());
        }
    }
    sink.push("lambda", &lambda)?;
    sink.push("factors", &factors)?;
    sink.push("l_center", &stdz.center)?;
    sink.push("l_scale", &stdz.scale)?;
    if let Some(f) = fs {
        sink.push("d", f.d.as_slice())?;
        sink.push("tau_psi", &[f.tau_psi])?;
    }
    sink.push("b", reg.b.as_slice())?;
    let delta: Vec<f64> = reg.delta.iter().map(|&d| f64::from(u8::from(d))).collect();
    sink.push("delta", &delta)?;
    sink.push("pi", &[reg.pi])?;
    if !reg.gamma.is_empty() {
        sink.push("gamma", reg.gamma.as_slice())?;
    }
    sink.push("upsilon", &[reg.upsilon])?;
    sink.push("eta", reg.linear_predictor(z, feat).as_slice())
}

/// Image-mode factors and weights of one partition in one draw.
struct BlockDraw {
    lambda: Vec<f64>,
    lead: Vec<DMatrix<f64>>,
}

fn block_draws(chain: &ChainStore, t: usize) -> Result<Vec<BlockDraw>> {
    let meta = &chain.meta;
    let r = meta.rank;
    let lead_dims = &meta.grid.block_dims()[..meta.grid.block_dims().len() - 1];
    let per_block: usize = lead_dims.iter().sum::<usize>() * r;
    let lambda = chain.draw("lambda", t)?;
    let factors = chain.draw("factors", t)?;
    if factors.len() != per_block * meta.survivors.len() || lambda.len() != r * meta.survivors.len() {
        return Err(shape_err!("stored factors do not match the chain layout"));
    }
    Ok((0..meta.survivors.len())
        .map(|u| {
            let mut off = u * per_block;
            let lead = lead_dims
                .iter()
                .map(|&p| {
                    let a = DMatrix::from_column_slice(p, r, &factors[off..off + p * r]);
                    off += p * r;
                    a
                })
                .collect();
            BlockDraw { lambda: lambda[u * r..(u + 1) * r].to_vec(), lead }
        })
        .collect())
}

/// Coefficients on the raw extracted features for one draw.
fn raw_coefficients(chain: &ChainStore, t: usize) -> Result<Vec<f64>> {
    let meta = &chain.meta;
    let p_l = meta.feature_count();
    let b = DVector::from_column_slice(chain.draw("b", t)?);
    let c = if meta.factor_model {
        let d = DMatrix::from_column_slice(meta.k, p_l, chain.draw("d", t)?);
        d.tr_mul(&b)
    } else {
        b
    };
    let scale = chain.draw("l_scale", t)?;
    Ok(c.iter().zip(scale).map(|(c, s)| c / s).collect())
}

fn spatial_grid(grid: &PartitionGrid) -> Result<PartitionGrid> {
    let d = grid.parent_dims().len() - 1;
    let parent = &grid.parent_dims()[..d];
    let block = &grid.block_dims()[..d];
    if grid.is_padded() {
        PartitionGrid::with_padding(parent, block)
    } else {
        PartitionGrid::new(parent, block)
    }
}

/// Voxelwise projection of the coefficients into image space.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub mean: DenseTensor,
    pub lower: DenseTensor,
    pub upper: DenseTensor,
    /// 1 where the 95% interval excludes zero, else 0.
    pub significant: DenseTensor,
}

/// Projection image of one draw.
pub fn projection_draw(chain: &ChainStore, t: usize) -> Result<DenseTensor> {
    let meta = &chain.meta;
    let grid = spatial_grid(&meta.grid)?;
    let r = meta.rank;
    let coef = raw_coefficients(chain, t)?;
    let draws = block_draws(chain, t)?;
    let block_dims = grid.block_dims().to_vec();
    let mut blocks = vec![DenseTensor::zeros(block_dims.clone())?; grid.block_count()];
    for (u, (&s, bd)) in meta.survivors.iter().zip(&draws).enumerate() {
        let w = DVector::from_fn(r, |q, _| bd.lambda[q] * coef[u * r + q]);
        let v = khatri_rao(&bd.lead) * w;
        blocks[s] = DenseTensor::new(block_dims.clone(), v.as_slice().to_vec())?;
    }
    unpartition(&blocks, &grid)
}

/// Posterior mean and equal-tailed 95% interval of the projection.
pub fn projection(chain: &ChainStore) -> Result<Projection> {
    let n = chain.draws();
    if n == 0 {
        return Err(param_err!("chain has no draws"));
    }
    let images = (0..n)
        .into_par_iter()
        .map(|t| projection_draw(chain, t))
        .collect::<Result<Vec<_>>>()?;
    let dims = images[0].dims().to_vec();
    let len = images[0].len();
    let mut mean = vec![0.0; len];
    let mut lower = vec![0.0; len];
    let mut upper = vec![0.0; len];
    let mut sig = vec![0.0; len];
    let mut col = vec![0.0; n];
    for v in 0..len {
        for (c, img) in col.iter_mut().zip(&images) {
            *c = img.data()[v];
        }
        mean[v] = col.iter().sum::<f64>() / n as f64;
        col.sort_by(f64::total_cmp);
        lower[v] = quantile_sorted(&col, 0.025);
        upper[v] = quantile_sorted(&col, 0.975);
        sig[v] = if lower[v] > 0.0 || upper[v] < 0.0 { 1.0 } else { 0.0 };
    }
    Ok(Projection {
        mean: DenseTensor::new(dims.clone(), mean)?,
        lower: DenseTensor::new(dims.clone(), lower)?,
        upper: DenseTensor::new(dims.clone(), upper)?,
        significant: DenseTensor::new(dims, sig)?,
    })
}

/// In-sample posterior predictive `P(y_i = 1)`.
pub fn fitted_probabilities(chain: &ChainStore) -> Result<Vec<f64>> {
    let n = chain.draws();
    if n == 0 {
        return Err(param_err!("chain has no draws"));
    }
    let w = chain.width("eta")?;
    let mut p = vec![0.0; w];
    for t in 0..n {
        for (pi, e) in p.iter_mut().zip(chain.draw("eta", t)?) {
            *pi += std_normal_cdf(*e);
        }
    }
    Ok(p.into_iter().map(|v| v / n as f64).collect())
}

/// Posterior predictive `P(y = 1)` for new subjects.
///
/// For every draw the new subjects' scores are the least-squares
/// coefficients of their blocks on that draw's image-mode factors; they are
/// then standardized and mapped through the factor model like the training
/// features.
pub fn predict_new(chain: &ChainStore, x_new: &DenseTensor, z_new: Option<&DMatrix<f64>>) -> Result<Vec<f64>> {
    let meta = &chain.meta;
    let d = meta.grid.parent_dims().len() - 1;
    if x_new.order() != d + 1 || x_new.dims()[..d] != meta.grid.parent_dims()[..d] {
        return Err(shape_err!(
            "new tensor dims {:?} do not match the fitted image dims {:?}",
            x_new.dims(),
            &meta.grid.parent_dims()[..d]
        ));
    }
    let n = x_new.subject_count();
    if n == 0 {
        return Err(shape_err!("no new subjects"));
    }
    if meta.covariates > 0 && z_new.is_none() {
        return Err(shape_err!("the model was fitted with {} covariates", meta.covariates));
    }
    let z = design(z_new, n, meta.intercept)?;
    if z.ncols() != meta.covariates + usize::from(meta.intercept) {
        return Err(shape_err!("new covariates have {} columns, expected {}", z.ncols() - usize::from(meta.intercept), meta.covariates));
    }
    let mut block = meta.grid.block_dims().to_vec();
    block[d] = n;
    let mut parent = meta.grid.parent_dims().to_vec();
    parent[d] = n;
    let grid = if meta.grid.is_padded() {
        PartitionGrid::with_padding(&parent, &block)?
    } else {
        PartitionGrid::new(&parent, &block)?
    };
    let blocks = partition(x_new, &grid)?;
    let regs = chain.regression_states()?;
    let r = meta.rank;

    let probs = (0..chain.draws())
        .into_par_iter()
        .map(|t| {
            let draws = block_draws(chain, t)?;
            let mut l = DMatrix::zeros(n, meta.feature_count());
            for (u, (&s, bd)) in meta.survivors.iter().zip(&draws).enumerate() {
                let kr = khatri_rao(&bd.lead);
                let m = DMatrix::from_fn(kr.nrows(), r, |i, q| kr[(i, q)] * bd.lambda[q]);
                let xm = mttkrp_last(&blocks[s], &m);
                let gram = m.tr_mul(&m);
                let scale = gram.amax().max(f64::MIN_POSITIVE);
                let pinv = gram
                    .pseudo_inverse(1e-12 * scale)
                    .map_err(|e| numeric_err!("score system: {e}"))?;
                l.columns_mut(u * r, r).copy_from(&(xm * pinv));
            }
            let stdz = Standardization {
                center: chain.draw("l_center", t)?.to_vec(),
                scale: chain.draw("l_scale", t)?.to_vec(),
            };
            let l = stdz.apply(&l);
            let feat = if meta.factor_model {
                let dm = DMatrix::from_column_slice(meta.k, meta.feature_count(), chain.draw("d", t)?);
                scores_for(&dm, chain.draw("tau_psi", t)?[0], meta.n_train, &l)?
            } else {
                l
            };
            let eta = regs[t].linear_predictor(&z, &feat);
            Ok(eta.iter().map(|e| std_normal_cdf(*e)).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;

    let mut p = vec![0.0; n];
    for draw in &probs {
        for (a, v) in p.iter_mut().zip(draw) {
            *a += v;
        }
    }
    let p: Vec<f64> = p.into_iter().map(|v| v / probs.len() as f64).collect();
    if p.iter().any(|v| !v.is_finite()) {
        return Err(numeric_err!("non-finite predictive probability"));
    }
    Ok(p)
}

/// Stratified fold assignment: each class is shuffled and dealt round-robin.
pub fn fold_split(y: &[f64], folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let yb = binary_response(y)?;
    if folds < 2 {
        return Err(param_err!("need at least 2 folds, got {folds}"));
    }
    if y.len() / folds < 2 {
        return Err(param_err!("{} subjects give folds smaller than 2 with {folds} folds", y.len()));
    }
    let mut rng = block_rng(seed, u64::MAX);
    let mut out = vec![Vec::new(); folds];
    let mut next = 0;
    for class in [false, true] {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| yb[i] == class).collect();
        for i in (1..idx.len()).rev() {
            idx.swap(i, rng.random_range(0..=i));
        }
        for i in idx {
            out[next % folds].push(i);
            next += 1;
        }
    }
    for f in &mut out {
        f.sort_unstable();
    }
    Ok(out)
}

fn complement(n: usize, test: &[usize]) -> Vec<usize> {
    let mut keep = vec![true; n];
    for &i in test {
        keep[i] = false;
    }
    (0..n).filter(|&i| keep[i]).collect()
}

fn select_rows(z: Option<&DMatrix<f64>>, rows: &[usize]) -> Option<DMatrix<f64>> {
    z.map(|z| z.select_rows(rows))
}

/// Fits on every subject not listed in `test`. The test subjects never reach
/// the sampler.
pub fn fold_train(
    x: &DenseTensor,
    y: &[f64],
    z: Option<&DMatrix<f64>>,
    cfg: &PipelineConfig,
    test: &[usize],
) -> Result<ChainStore> {
    let train = complement(y.len(), test);
    let xt = x.select_subjects(&train)?;
    let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
    fit(&xt, &yt, select_rows(z, &train).as_ref(), cfg)
}

/// Accuracy of one fold.
pub fn fold_accuracy(
    x: &DenseTensor,
    y: &[f64],
    z: Option<&DMatrix<f64>>,
    cfg: &PipelineConfig,
    test: &[usize],
) -> Result<f64> {
    let chain = fold_train(x, y, z, cfg, test)?;
    let p = predict_new(&chain, &x.select_subjects(test)?, select_rows(z, test).as_ref())?;
    let yt: Vec<f64> = test.iter().map(|&i| y[i]).collect();
    accuracy(&yt, &p)
}

/// Per-fold test accuracies of a stratified `folds`-fold cross-validation.
pub fn cross_validate_folds(
    x: &DenseTensor,
    y: &[f64],
    z: Option<&DMatrix<f64>>,
    cfg: &PipelineConfig,
    folds: usize,
) -> Result<Vec<f64>> {
    if x.subject_count() != y.len() {
        return Err(shape_err!("response has {} entries, tensor has {} subjects", y.len(), x.subject_count()));
    }
    fold_split(y, folds, cfg.seed)?
        .par_iter()
        .map(|test| fold_accuracy(x, y, z, cfg, test))
        .collect()
}

/// Mean test accuracy over the folds.
pub fn cross_validate(
    x: &DenseTensor,
    y: &[f64],
    z: Option<&DMatrix<f64>>,
    cfg: &PipelineConfig,
    folds: usize,
) -> Result<f64> {
    let acc = cross_validate_folds(x, y, z, cfg, folds)?;
    Ok(acc.iter().sum::<f64>() / acc.len() as f64)
}
