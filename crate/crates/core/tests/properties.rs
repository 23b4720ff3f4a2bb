use proptest::prelude::*;

use weight_friction::continual::average_accuracy;
use weight_friction::data::{split_indices, SplitSpec};
use weight_friction::linalg::DenseMatrix;
use weight_friction::nn::{mlp_specs, xavier_init, ParamSet};
use weight_friction::optim::{sgd_step, wf_step, FrictionFunction, FrictionKind};
use weight_friction::rng::{fisher_yates_permutation, Prng};

fn matrix(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
    let mut rng = Prng::new(seed);
    DenseMatrix::new(rows, cols, (0..rows * cols).map(|_| rng.uniform(-2.0, 2.0).unwrap()).collect()).unwrap()
}

fn kinds() -> impl Strategy<Value = FrictionKind> {
    prop_oneof![Just(FrictionKind::LogisticBell), Just(FrictionKind::GaussianBell)]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn matmul_is_associative(m in 1usize..6, k in 1usize..6, n in 1usize..6, p in 1usize..6, seed in any::<u64>()) {
        let a = matrix(m, k, seed);
        let b = matrix(k, n, seed ^ 1);
        let c = matrix(n, p, seed ^ 2);
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        for (x, y) in left.data().iter().zip(right.data()) {
            prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn transpose_products_agree(m in 1usize..6, k in 1usize..6, n in 1usize..6, seed in any::<u64>()) {
        let a = matrix(k, m, seed);
        let b = matrix(k, n, seed ^ 7);
        let fast = a.t_matmul(&b).unwrap();
        let slow = a.transpose().matmul(&b).unwrap();
        for (x, y) in fast.data().iter().zip(slow.data()) {
            prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn friction_is_even_bounded_and_peaks_at_zero(kind in kinds(), mu in 0.0f64..50.0, w in -100.0f64..100.0) {
        let f = FrictionFunction::new(kind, mu).unwrap();
        let g = f.factor(w);
        prop_assert!(g > 0.0 && g <= 1.0);
        prop_assert_eq!(g.to_bits(), f.factor(-w).to_bits());
        prop_assert!(g <= f.factor(0.0));
    }

    #[test]
    fn friction_decreases_away_from_zero(kind in kinds(), mu in 0.01f64..20.0, a in 0.0f64..10.0, d in 0.0f64..10.0) {
        let f = FrictionFunction::new(kind, mu).unwrap();
        prop_assert!(f.factor(a + d) <= f.factor(a));
    }

    #[test]
    fn permutations_are_bijections(n in 1usize..300, seed in any::<u64>()) {
        let mut p = fisher_yates_permutation(&mut Prng::new(seed), n).unwrap();
        p.sort_unstable();
        prop_assert_eq!(p, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn splits_partition_the_rows(n in 2usize..500, frac in 0.05f64..0.95, seed in any::<u64>()) {
        let (a, b) = split_indices(n, SplitSpec { train_fraction: frac, seed }).unwrap();
        prop_assert_eq!(a.len(), (frac * n as f64).floor() as usize);
        let mut all: Vec<usize> = a.into_iter().chain(b).collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn zero_mu_friction_step_is_an_sgd_step(seed in any::<u64>(), lr in 1e-4f64..1.0, biases in any::<bool>()) {
        let mut rng = Prng::new(seed);
        let model = xavier_init(&mlp_specs(4, &[3], 2), &mut rng).unwrap();
        let mut grads = ParamSet::zeros_like(model.params());
        grads.zip_apply(model.params(), |g, _, _| *g = rng.normal()).unwrap();
        let mut a = model.clone();
        let mut b = model;
        sgd_step(&mut a, &grads, lr).unwrap();
        wf_step(&mut b, &grads, lr, &FrictionFunction::logistic(0.0).unwrap(), biases).unwrap();
        prop_assert_eq!(a.params().fingerprint(), b.params().fingerprint());
    }

    #[test]
    fn average_accuracy_lies_between_extremes(v in prop::collection::vec(0.0f64..=1.0, 1..20)) {
        let avg = average_accuracy(&v).unwrap();
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(avg >= lo - 1e-15 && avg <= hi + 1e-15);
    }
}
