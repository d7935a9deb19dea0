//! Block-by-block decomposition of a single tensor.

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rayon::prelude::*;

use crate::als::cp_als_seeded;
use crate::cp_bayes::{CPHyper, CpSampler};
use crate::error::{param_err, Result};
use crate::kruskal::{cp_reconstruct, CPFactors};
use crate::partition::{partition, unpartition, PartitionGrid};
use crate::tensor::DenseTensor;

/// Per-block factors and the reassembled reconstruction.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub grid: PartitionGrid,
    /// One entry per block. Gibbs runs report the last retained draw.
    pub factors: Vec<CPFactors>,
    pub reconstruction: DenseTensor,
}

fn block_rng(seed: u64, s: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(s as u64 + 1);
    rng
}

/// Gibbs sampling on every block; the reconstruction is the posterior mean
/// over the sweeps after `burn_in`.
pub fn gibbs_decompose(
    x: &DenseTensor,
    block_dims: &[usize],
    h: &CPHyper,
    iters: usize,
    burn_in: usize,
    seed: u64,
) -> Result<Decomposition> {
    if burn_in >= iters {
        return Err(param_err!("burn_in {burn_in} must be below iters {iters}"));
    }
    let grid = PartitionGrid::new(x.dims(), block_dims)?;
    let blocks = partition(x, &grid)?;
    let fits = blocks
        .par_iter()
        .enumerate()
        .map(|(s, b)| {
            let mut rng = block_rng(seed, s);
            let mut sampler = CpSampler::new(b, *h, s, &mut rng)?;
            let mut acc = vec![0.0; b.len()];
            for t in 0..iters {
                sampler.sweep(&mut rng)?;
                if t >= burn_in {
                    let rec = cp_reconstruct(&sampler.state().factors)?;
                    for (a, v) in acc.iter_mut().zip(rec.data()) {
                        *a += v;
                    }
                }
            }
            let k = (iters - burn_in) as f64;
            let mean = DenseTensor::new(b.dims().to_vec(), acc.into_iter().map(|a| a / k).collect())?;
            Ok((sampler.into_state().factors, mean))
        })
        .collect::<Result<Vec<_>>>()?;
    assemble(grid, fits)
}

/// CP-ALS on every block.
pub fn als_decompose(
    x: &DenseTensor,
    block_dims: &[usize],
    rank: usize,
    max_iters: usize,
    tol: f64,
    seed: u64,
) -> Result<Decomposition> {
    let grid = PartitionGrid::new(x.dims(), block_dims)?;
    let blocks = partition(x, &grid)?;
    let fits = blocks
        .par_iter()
        .map(|b| {
            let f = cp_als_seeded(b, rank, max_iters, tol, seed)?.factors;
            let rec = cp_reconstruct(&f)?;
            Ok((f, rec))
        })
        .collect::<Result<Vec<_>>>()?;
    assemble(grid, fits)
}

fn assemble(grid: PartitionGrid, fits: Vec<(CPFactors, DenseTensor)>) -> Result<Decomposition> {
    let (factors, recs): (Vec<_>, Vec<_>) = fits.into_iter().unzip();
    let reconstruction = unpartition(&recs, &grid)?;
    Ok(Decomposition { grid, factors, reconstruction })
}
