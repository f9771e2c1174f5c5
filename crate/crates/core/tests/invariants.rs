use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;

use multitask_ucb::confidence::{
    beta_large_b, beta_naive, beta_new, beta_small_b, matched_ridge, select_b_lambda, WidthParams,
};
use multitask_ucb::envs::{generate_synthetic, SyntheticSpec};
use multitask_ucb::posterior::{Observation, PosteriorState};
use multitask_ucb::taskalgebra::{kron_sherman_morrison, mt_feature_map, mt_kernel, BaseKernel, TaskCoupling, TaskPower};

fn log_b() -> impl Strategy<Value = f64> {
    (-6.0f64..6.0).prop_map(|e| 10f64.powf(e))
}

fn b_or_zero() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.0), log_b()]
}

fn point(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, d)
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.amax()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn gram_times_inverse_is_identity(b in b_or_zero(), n in 1usize..8) {
        let c = TaskCoupling::new(b, n).unwrap();
        let prod = c.task_gram() * c.matrix_power(TaskPower::One).unwrap();
        prop_assert!(max_abs(&(prod - DMatrix::identity(n, n))) < 1e-10);
    }

    #[test]
    fn square_roots_square_back(b in b_or_zero(), n in 1usize..8) {
        let c = TaskCoupling::new(b, n).unwrap();
        let half = c.matrix_power(TaskPower::Half).unwrap();
        let one = c.matrix_power(TaskPower::One).unwrap();
        let scale = one.amax().max(1.0);
        prop_assert!(max_abs(&(&half * &half - one)) < 1e-10 * scale);
        let minus_half = c.matrix_power(TaskPower::MinusHalf).unwrap();
        prop_assert!(max_abs(&(&minus_half * &minus_half - c.task_gram())) < 1e-10);
    }

    #[test]
    fn task_gram_spectrum(b in b_or_zero(), n in 1usize..8) {
        let c = TaskCoupling::new(b, n).unwrap();
        let mut e: Vec<f64> = SymmetricEigen::new(c.task_gram()).eigenvalues.iter().cloned().collect();
        e.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let small = 1.0 / (1.0 + b);
        if b > 0.0 {
            prop_assert!((e[n - 1] - 1.0).abs() < 1e-10);
            for v in &e[..n - 1] {
                prop_assert!((v - small).abs() < 1e-10);
            }
        } else {
            prop_assert!(e.iter().all(|v| (v - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn feature_map_reproduces_kernel(
        b in b_or_zero(),
        n in 1usize..6,
        pairs in prop::collection::vec((0usize..6, point(3)), 1..8),
    ) {
        let c = TaskCoupling::new(b, n).unwrap();
        let base = BaseKernel::linear(3);
        let pairs: Vec<(usize, Vec<f64>)> = pairs.into_iter().map(|(i, x)| (i % n, x)).collect();
        for (i, x) in &pairs {
            let fi = mt_feature_map(&c, &base, *i, x).unwrap();
            for (j, y) in &pairs {
                let fj = mt_feature_map(&c, &base, *j, y).unwrap();
                let k = mt_kernel(&c, &base, *i, x, *j, y).unwrap();
                prop_assert!((k - fi.dot(&fj)).abs() < 1e-9 * (1.0 + k.abs()));
            }
        }
    }

    #[test]
    fn kernel_is_symmetric(b in b_or_zero(), i in 0usize..4, j in 0usize..4, x in point(2), y in point(2)) {
        let c = TaskCoupling::new(b, 4).unwrap();
        for base in [BaseKernel::linear(2), BaseKernel::squared_exponential(2, 1.0).unwrap()] {
            let a = mt_kernel(&c, &base, i, &x, j, &y).unwrap();
            let r = mt_kernel(&c, &base, j, &y, i, &x).unwrap();
            prop_assert_eq!(a, r);
            prop_assert!(mt_kernel(&c, &base, i, &x, i, &x).unwrap() >= 0.0);
        }
    }

    #[test]
    fn sherman_morrison_inverts_commuting_blocks(
        n in 1usize..5,
        d in 1usize..4,
        diag in prop::collection::vec(0.5f64..3.0, 16),
        pdiag in prop::collection::vec(0.0f64..2.0, 4),
    ) {
        let blocks: Vec<DMatrix<f64>> = (0..n)
            .map(|l| DMatrix::from_fn(d, d, |r, c| if r == c { diag[l * 4 + r] } else { 0.0 }))
            .collect();
        let p = DMatrix::from_fn(d, d, |r, c| if r == c { pdiag[r] } else { 0.0 });
        let inv = kron_sherman_morrison(&blocks, &p).unwrap();
        let mut full = DMatrix::<f64>::zeros(n * d, n * d);
        for a in 0..n {
            for b in 0..n {
                let mut v = full.view_mut((a * d, b * d), (d, d));
                v += &p;
                if a == b {
                    v += &blocks[a];
                }
            }
        }
        prop_assert!(max_abs(&(inv * full - DMatrix::identity(n * d, n * d))) < 1e-8);
    }

    #[test]
    fn new_width_is_min_and_below_naive(
        bound in 0.1f64..5.0,
        eps in 0.0f64..=2.0,
        delta in 0.001f64..=1.0,
        b in b_or_zero(),
        n in 1usize..30,
        gst in 0.0f64..20.0,
        extra in 0.0f64..20.0,
        t in 1usize..1000,
        frac in 0.0f64..=1.0,
    ) {
        let lo = 1.0 / (1.0 + b);
        let ridge = lo + frac * (1.0 - lo);
        let p = WidthParams::new(bound, eps, delta, TaskCoupling::new(b, n).unwrap(), ridge).unwrap();
        let r = beta_new(&p, gst + extra, gst, t);
        prop_assert_eq!(r.new, r.naive.min(r.small_b).min(r.large_b));
        prop_assert!(r.new <= r.naive);
        prop_assert!(r.naive >= 0.0 && r.small_b >= 0.0 && r.large_b >= 0.0);
    }

    #[test]
    fn widths_are_continuous_in_b(
        b in log_b(),
        eps in 0.0f64..=2.0,
        n in 2usize..10,
        gmt in 0.0f64..10.0,
        t in 1usize..100,
    ) {
        let at = |b: f64| {
            let p = WidthParams::new(1.0, eps, 0.1, TaskCoupling::new(b, n).unwrap(), matched_ridge(b, n)).unwrap();
            [beta_naive(&p, gmt, t), beta_small_b(&p, gmt, t), beta_large_b(&p, gmt, t)]
        };
        let here = at(b);
        let near = at(b * (1.0 + 1e-9));
        for k in 0..3 {
            prop_assert!((here[k] - near[k]).abs() <= 1e-6 * (1.0 + here[k].abs()));
        }
    }

    #[test]
    fn selected_ridge_is_admissible(n in 1usize..50, t in 1usize..10_000, eps in 0.0f64..=2.0) {
        let s = select_b_lambda(n, t, eps).unwrap();
        if s.coupling.is_pooled() {
            prop_assert_eq!(s.ridge, 1.0 / n as f64);
        } else {
            let b = s.b();
            prop_assert!(s.ridge >= 1.0 / (1.0 + b) - 1e-12);
            prop_assert!(s.ridge <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn posterior_variance_is_capped_by_ridge(
        b in b_or_zero(),
        n in 1usize..5,
        obs in prop::collection::vec((0usize..5, point(2), -3.0f64..3.0), 0..20),
        probe in point(2),
    ) {
        let base = BaseKernel::squared_exponential(2, 1.0).unwrap();
        let ridge = matched_ridge(b, n);
        let log: Vec<Observation> = obs
            .into_iter()
            .enumerate()
            .map(|(s, (i, x, y))| Observation::new(i % n, x, y, s as u64 + 1))
            .collect();
        let s = PosteriorState::fit(TaskCoupling::new(b, n).unwrap(), base, ridge, log).unwrap();
        for i in 0..n {
            let v = s.variance(i, &probe).unwrap();
            prop_assert!(v >= 0.0);
            prop_assert!(v <= ridge + 1e-10);
        }
    }

    #[test]
    fn deviation_stays_in_range(seed in 0u64..1000, dev in 0.0f64..=1.0, n in 1usize..6, d in 1usize..6) {
        let spec = SyntheticSpec { pool_size: 5, ..SyntheticSpec::new(d, n, dev) };
        let env = generate_synthetic(&spec, seed).unwrap();
        let eps = env.true_epsilon(1.0).unwrap();
        prop_assert!((0.0..=2.0).contains(&eps));
        for w in env.task_weights().unwrap() {
            prop_assert!(w.iter().map(|v| v * v).sum::<f64>().sqrt() <= 1.0 + 1e-12);
        }
        for x in env.pool(0) {
            prop_assert!((x.iter().map(|v| v * v).sum::<f64>().sqrt() - 10.0).abs() < 1e-9);
        }
    }

    #[test]
    fn synthetic_generation_is_pure(seed in 0u64..1000) {
        let spec = SyntheticSpec { pool_size: 20, ..SyntheticSpec::new(3, 3, 0.4) };
        let a = generate_synthetic(&spec, seed).unwrap();
        let b = generate_synthetic(&spec, seed).unwrap();
        prop_assert_eq!(a.task_weights(), b.task_weights());
        prop_assert_eq!(a.pool(0), b.pool(0));
    }
}
