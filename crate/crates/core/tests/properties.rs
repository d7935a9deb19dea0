use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tprm_core::factor::{factor_sweep, FactorHyper, FactorState};
use tprm_core::probit::{update_w, RegressionState};
use tprm_core::sim::accuracy;
use tprm_core::*;

fn tensor_strategy() -> impl Strategy<Value = DenseTensor> {
    prop::collection::vec(1usize..5, 1..4).prop_flat_map(|dims| {
        let len: usize = dims.iter().product();
        prop::collection::vec(-10.0f64..10.0, len).prop_map(move |data| DenseTensor::new(dims.clone(), data).unwrap())
    })
}

fn factors(dims: &[usize], rank: usize, seed: u64) -> CPFactors {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = CPFactors::random(dims, rank, &mut rng).unwrap();
    f.weights = DVector::from_fn(rank, |_, _| rng.sample(StandardNormal));
    f
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partition_round_trip(
        counts in prop::collection::vec(1usize..4, 1..4),
        blocks in prop::collection::vec(1usize..4, 3),
        seed in any::<u64>(),
    ) {
        let block: Vec<usize> = blocks[..counts.len()].to_vec();
        let parent: Vec<usize> = counts.iter().zip(&block).map(|(c, b)| c * b).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DenseTensor::from_fn(parent.clone(), |_| rng.sample(StandardNormal)).unwrap();
        let grid = PartitionGrid::new(&parent, &block).unwrap();
        let parts = partition(&x, &grid).unwrap();
        prop_assert_eq!(parts.len(), counts.iter().product::<usize>());
        prop_assert_eq!(unpartition(&parts, &grid).unwrap(), x);
    }

    #[test]
    fn self_inner_product_is_non_negative(x in tensor_strategy()) {
        let ip = inner_product(&x, &x).unwrap();
        prop_assert!(ip >= 0.0);
        prop_assert_eq!(ip == 0.0, x.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn reconstruction_is_linear_in_lambda(
        dims in prop::collection::vec(1usize..5, 2..4),
        rank in 1usize..4,
        seed in any::<u64>(),
    ) {
        let f = factors(&dims, rank, seed);
        let mut g = f.clone();
        g.weights *= 2.0;
        let a = cp_reconstruct(&g).unwrap();
        let b = cp_reconstruct(&f).unwrap().scaled(2.0).unwrap();
        for (u, v) in a.data().iter().zip(b.data()) {
            prop_assert!((u - v).abs() <= 1e-12 * (1.0 + v.abs()));
        }
    }

    #[test]
    fn rank_one_inner_product_separates(
        dims in prop::collection::vec(1usize..6, 2..4),
        s1 in any::<u64>(),
        s2 in any::<u64>(),
    ) {
        let f = factors(&dims, 1, s1);
        let g = factors(&dims, 1, s2);
        let ip = inner_product(&cp_reconstruct(&f).unwrap(), &cp_reconstruct(&g).unwrap()).unwrap();
        let want = f.weights[0]
            * g.weights[0]
            * f.factors.iter().zip(&g.factors).map(|(a, b)| a.column(0).dot(&b.column(0))).product::<f64>();
        prop_assert!((ip - want).abs() <= 1e-10 * (1.0 + want.abs()));
    }

    #[test]
    fn latent_signs_follow_the_response(
        y in prop::collection::vec(any::<bool>(), 1..30),
        shift in -8.0f64..8.0,
        seed in any::<u64>(),
    ) {
        let n = y.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let feat = DMatrix::from_fn(n, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let z = DMatrix::from_element(n, 1, 1.0);
        let mut st = RegressionState::init(n, 3, 1);
        st.b = DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal) * 3.0);
        st.gamma[0] = shift;
        update_w(&mut st, &y, &z, &feat, &mut rng).unwrap();
        for (w, y) in st.w.iter().zip(&y) {
            let ok = if *y { *w >= 0.0 } else { *w <= 0.0 };
            prop_assert!(ok);
        }
    }

    #[test]
    fn accuracy_is_invariant_to_joint_relabeling(
        pairs in prop::collection::vec((any::<bool>(), 0.0f64..1.0), 1..40),
    ) {
        let pairs: Vec<(bool, f64)> = pairs.into_iter().filter(|(_, p)| *p != 0.5).collect();
        prop_assume!(!pairs.is_empty());
        let y: Vec<f64> = pairs.iter().map(|(y, _)| f64::from(u8::from(*y))).collect();
        let p: Vec<f64> = pairs.iter().map(|(_, p)| *p).collect();
        let y2: Vec<f64> = y.iter().map(|v| 1.0 - v).collect();
        let p2: Vec<f64> = p.iter().map(|v| 1.0 - v).collect();
        let a = accuracy(&y, &p).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert_eq!(a, accuracy(&y2, &p2).unwrap());
        let direct = 1.0 - y.iter().zip(&p).map(|(y, p)| (y - f64::from(u8::from(*p > 0.5))).abs()).sum::<f64>() / y.len() as f64;
        prop_assert!((a - direct).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn chain_bookkeeping_is_exact(burn in 0usize..6, extra in 1usize..9, thin in 1usize..4) {
        let iters = burn + extra;
        let n = 10;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        let x = DenseTensor::from_fn(vec![4, 4, n], |_| rng.sample(StandardNormal)).unwrap();
        let cfg = PipelineConfig {
            block_dims: vec![2, 4],
            cp: CPHyper::with_rank(1),
            k: 2,
            iters,
            burn_in: burn,
            thin,
            ..PipelineConfig::default()
        };
        let chain = fit(&x, &y, None, &cfg).unwrap();
        prop_assert_eq!(chain.draws(), extra / thin);
        for name in chain.names() {
            let w = chain.width(name).unwrap();
            prop_assert!(chain.draw(name, chain.draws().saturating_sub(1)).map(|d| d.len() == w).unwrap_or(chain.draws() == 0));
        }
    }
}

#[test]
fn gibbs_cp_is_seed_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = DenseTensor::from_fn(vec![4, 3, 5], |_| rng.sample(StandardNormal)).unwrap();
    let h = CPHyper::with_rank(2);
    let a = gibbs_cp(&x, &h, 30, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let b = gibbs_cp(&x, &h, 30, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert_eq!(a, b);
}

fn corr(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn factor_model_reproduces_correlated_column_groups() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 40;
    let u: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let scales = [1.0, -2.0, 0.5, 1.5, 3.0, -1.0];
    let l = DMatrix::from_fn(n, 6, |i, j| if j < 3 { scales[j] * u[i] } else { scales[j] * v[i] });
    let h = FactorHyper::default();
    let mut st = FactorState::init(n, 6, 2, &mut rng).unwrap();
    let mut mean = DMatrix::zeros(n, 6);
    let (iters, burn) = (3000, 1000);
    for t in 0..iters {
        factor_sweep(&mut st, &l, &h, &mut rng).unwrap();
        if t >= burn {
            mean += &st.g * &st.d;
        }
    }
    mean /= (iters - burn) as f64;
    let col = |m: &DMatrix<f64>, j: usize| m.column(j).iter().copied().collect::<Vec<_>>();
    for a in 0..6 {
        for b in 0..a {
            let want = corr(&col(&l, a), &col(&l, b));
            let got = corr(&col(&mean, a), &col(&mean, b));
            assert!((want - got).abs() < 0.05, "columns {a},{b}: {got} vs {want}");
        }
    }
}
