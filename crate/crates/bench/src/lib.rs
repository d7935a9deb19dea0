//! Fixtures shared by the benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tprm_core::{cp_reconstruct, CPFactors, DenseTensor};

/// Planted low-rank tensor with the given dims.
pub fn planted(dims: &[usize], rank: usize, seed: u64) -> DenseTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = CPFactors::random(dims, rank, &mut rng).expect("valid dims");
    cp_reconstruct(&f).expect("consistent factors")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planted_has_requested_shape() {
        let x = planted(&[4, 5, 6], 2, 1);
        assert_eq!(x.dims(), &[4, 5, 6]);
        assert!(x.frobenius_norm() > 0.0);
    }
}
