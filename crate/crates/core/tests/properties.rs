use std::collections::HashSet;

use proptest::prelude::*;

use ccgof::benchmark_tests::{bench_statistic, sample_residuals};
use ccgof::conditional_moments::{bands, benchmark, cond_moments, order_by_benchmark, theoretical_cond_cov};
use ccgof::copulas::sample;
use ccgof::monte_carlo::{p_value, threshold, Statistic};
use ccgof::pipeline::{average_ranks, gaussianize};
use ccgof::rng::stream_id;
use ccgof::test_statistics::{all_statistics, t_stat};
use ccgof::{
    split_constants, BenchKind, BivariateSample, CopulaSpec, LoadingFactor, NullDistribution, QuantileSplit,
    RejectionSide, ReturnPanel,
};

fn any_spec() -> impl Strategy<Value = CopulaSpec> {
    prop_oneof![
        (-0.9f64..0.9).prop_map(|rho| CopulaSpec::Gaussian { rho }),
        (-0.8f64..0.8, 3.0f64..12.0).prop_map(|(rho, nu)| CopulaSpec::StudentT { rho, nu }),
        (0.5f64..10.0).prop_map(|theta| CopulaSpec::Frank { theta }),
        (1.05f64..3.0).prop_map(|theta| CopulaSpec::Gumbel { theta }),
        (1.05f64..4.0).prop_map(|theta| CopulaSpec::Joe { theta }),
        (0.3f64..2.0).prop_map(|theta| CopulaSpec::Galambos { theta }),
        (0.5f64..2.5).prop_map(|theta| CopulaSpec::HuslerReiss { theta }),
    ]
}

fn any_sample(n: std::ops::Range<usize>) -> impl Strategy<Value = BivariateSample> {
    (any_spec(), n, any::<u64>()).prop_map(|(spec, n, seed)| sample(&spec, n, seed).unwrap())
}

fn null_of(mut v: Vec<f64>) -> NullDistribution {
    v.sort_by(f64::total_cmp);
    NullDistribution::from_values(Statistic::Cond(ccgof::StatKind::T), 100, 0, v)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ordering_is_scale_and_shift_invariant(s in any_sample(20..200), lam in 0.01f64..50.0, c in -10.0f64..10.0) {
        let alpha = LoadingFactor::new(1.3, 0.4).unwrap();
        let moved = s.affine(lam, c, lam, -c).unwrap();
        prop_assert_eq!(order_by_benchmark(&s, alpha).perm, order_by_benchmark(&moved, alpha).perm);
        let y = benchmark(&s, alpha);
        let o = order_by_benchmark(&s, alpha);
        prop_assert!(o.perm.windows(2).all(|w| y[w[0]] <= y[w[1]]));
    }

    #[test]
    fn doubling_the_loading_keeps_the_ordering(s in any_sample(20..200)) {
        let a = order_by_benchmark(&s, LoadingFactor::new(1.0, 1.0).unwrap()).perm;
        let b = order_by_benchmark(&s, LoadingFactor::new(2.0, 2.0).unwrap()).perm;
        prop_assert_eq!(a, b);
    }

    #[test]
    fn bands_partition_the_sample(n in 10usize..100_000) {
        let total: usize = bands(split_constants().q_tilde).iter().map(|b| b.index_range(n).len()).sum();
        prop_assert_eq!(total, n);
    }

    #[test]
    fn full_band_is_the_unconditional_covariance(s in any_sample(5..300)) {
        let o = order_by_benchmark(&s, LoadingFactor::default());
        let m = cond_moments(&o, QuantileSplit::new(0.0, 1.0).unwrap()).unwrap();
        let n = s.n() as f64;
        let m1 = s.x1().iter().sum::<f64>() / n;
        let m2 = s.x2().iter().sum::<f64>() / n;
        let r = s.x1().iter().zip(s.x2()).map(|(a, b)| (a - m1) * (b - m2)).sum::<f64>() / n;
        prop_assert!((m.r - r).abs() <= 1e-12 * (1.0 + r.abs()));
    }

    #[test]
    fn theoretical_cond_cov_is_psd(rho in -0.95f64..0.95, s1 in 0.1f64..5.0, s2 in 0.1f64..5.0,
                                   a1 in -3.0f64..3.0, a2 in 0.1f64..3.0, a in 0.0f64..0.9, w in 0.05f64..1.0) {
        let b = (a + w).min(1.0);
        let c = rho * (s1 * s2).sqrt();
        let out = theoretical_cond_cov([0.0; 2], [[s1, c], [c, s2]], LoadingFactor::new(a1, a2).unwrap(),
                                       QuantileSplit::new(a, b).unwrap()).unwrap();
        prop_assert_eq!(out[0][1], out[1][0]);
        prop_assert!(out[0][0] >= -1e-12 && out[1][1] >= -1e-12);
        prop_assert!(out[0][0] * out[1][1] - out[0][1] * out[1][0] >= -1e-9);
    }

    #[test]
    fn swapping_margins_leaves_t_unchanged(s in any_sample(20..400)) {
        let c = split_constants();
        let a = t_stat(&s, LoadingFactor::default(), c).unwrap();
        let b = t_stat(&s.swapped(), LoadingFactor::default(), c).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "{} vs {}", a, b);
    }

    #[test]
    fn statistics_finite_on_nondegenerate_samples(s in any_sample(20..300)) {
        let c = split_constants();
        let v = all_statistics(&s, LoadingFactor::default(), c).unwrap();
        prop_assert!(v.iter().all(|x| x.is_finite()));
        for k in BenchKind::ALL {
            prop_assert!(bench_statistic(k, &s).unwrap().is_finite());
        }
    }

    #[test]
    fn conditional_statistics_invariant_under_common_scaling(s in any_sample(20..300), lam in 0.01f64..100.0,
                                                             t1 in -50.0f64..50.0, t2 in -50.0f64..50.0) {
        let c = split_constants();
        let a = all_statistics(&s, LoadingFactor::default(), c).unwrap();
        let b = all_statistics(&s.affine(lam, t1, lam, t2).unwrap(), LoadingFactor::default(), c).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-8 * (1.0 + x.abs()), "{} vs {}", x, y);
        }
    }

    #[test]
    fn benchmark_statistics_are_permutation_invariant(s in any_sample(20..200), rot in 1usize..19) {
        let (x1, x2) = s.clone().into_parts();
        let n = x1.len();
        let idx: Vec<usize> = (0..n).map(|i| (i * rot + 7) % n).collect();
        let mut seen = vec![false; n];
        idx.iter().for_each(|&i| seen[i] = true);
        prop_assume!(seen.iter().all(|&b| b));
        let p = BivariateSample::new(idx.iter().map(|&i| x1[i]).collect(), idx.iter().map(|&i| x2[i]).collect()).unwrap();
        for k in BenchKind::ALL {
            prop_assert_eq!(bench_statistic(k, &s).unwrap(), bench_statistic(k, &p).unwrap());
        }
    }

    #[test]
    fn ad_cm_depend_only_on_radii(s in any_sample(20..200)) {
        let z = sample_residuals(&s).unwrap();
        // rotate every residual: radii are preserved
        let (c, sn) = (0.6f64, 0.8f64);
        let rows: Vec<Vec<f64>> = (0..z.n()).map(|i| {
            let r = z.row(i);
            vec![c * r[0] - sn * r[1], sn * r[0] + c * r[1]]
        }).collect();
        let w = ccgof::ScaledResiduals::from_rows(&rows).unwrap();
        prop_assert!((z.ad().unwrap() - w.ad().unwrap()).abs() < 1e-9);
        prop_assert!((z.cm().unwrap() - w.cm().unwrap()).abs() < 1e-9);
        prop_assert!(z.cm().unwrap() >= 1.0 / (12.0 * z.n() as f64) - 1e-15);
        prop_assert!(z.ms() >= -1e-12);
        prop_assert!(z.bhep(1.0).unwrap() >= 0.0);
    }

    #[test]
    fn threshold_rejects_at_most_size(v in prop::collection::vec(-1e3f64..1e3, 1000..3000), size in 0.01f64..0.2) {
        let null = null_of(v);
        let n = null.len() as f64;
        for side in [RejectionSide::Right, RejectionSide::Left, RejectionSide::TwoSided, RejectionSide::Symmetric] {
            let t = threshold(&null, size, side).unwrap();
            let frac = null.values.iter().filter(|&&x| t.rejects(x)).count() as f64 / n;
            prop_assert!(frac <= size + 1e-12, "{:?}: {} > {}", side, frac, size);
            prop_assert!(frac >= size - 2.0 / n, "{:?}: {} << {}", side, frac, size);
        }
    }

    #[test]
    fn p_values_are_monotone_and_in_unit_interval(v in prop::collection::vec(-5f64..5.0, 1000..1500),
                                                 a in -6f64..6.0, d in 0.0f64..3.0) {
        let null = null_of(v);
        let b = a + d;
        let (pa, pb) = (p_value(&null, a, RejectionSide::Right), p_value(&null, b, RejectionSide::Right));
        prop_assert!(pb <= pa);
        let (qa, qb) = (p_value(&null, a, RejectionSide::Left), p_value(&null, b, RejectionSide::Left));
        prop_assert!(qa <= qb);
        for side in [RejectionSide::Right, RejectionSide::Left, RejectionSide::TwoSided, RejectionSide::Symmetric] {
            let p = p_value(&null, a, side);
            prop_assert!(p > 0.0 && p <= 1.0);
        }
    }

    #[test]
    fn gaussianize_is_idempotent(x in prop::collection::vec(-100f64..100.0, 20..200),
                                 y in prop::collection::vec(-1f64..1.0, 20..200)) {
        let n = x.len().min(y.len());
        let panel = ReturnPanel {
            dates: Vec::new(),
            names: vec!["a".into(), "b".into()],
            columns: vec![x[..n].to_vec(), y[..n].to_vec()],
        };
        prop_assume!(panel.columns.iter().all(|c| c.iter().any(|v| *v != c[0])));
        let g = gaussianize(&panel).unwrap();
        let gg = gaussianize(&g).unwrap();
        prop_assert_eq!(&g.columns, &gg.columns);
        for (a, b) in panel.columns.iter().zip(&g.columns) {
            prop_assert_eq!(average_ranks(a), average_ranks(b));
        }
    }
}

#[test]
fn stream_identifiers_never_collide() {
    let purposes = ["null", "copula-sample", "fixture", "alt/gaussian(rho=0)/n=100", "alt/gaussian(rho=0)/n=250"];
    let mut seen = HashSet::new();
    for seed in [0u64, 1, 20_240_611, u64::MAX] {
        for p in purposes {
            for i in 0..2000u64 {
                assert!(seen.insert(stream_id(seed, p, i)), "collision at {seed} {p} {i}");
            }
        }
    }
}

#[test]
fn identical_seed_gives_identical_samples() {
    for (spec, _) in ccgof::copulas::table1_grid() {
        let a = sample(&spec, 300, 77).unwrap();
        let b = sample(&spec, 300, 77).unwrap();
        assert_eq!(a, b, "{}", spec.label());
    }
}
