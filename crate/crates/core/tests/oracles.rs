//! Numerical results checked against independent oracles: quadrature,
//! statrs distributions, brute-force sums and direct simulation.

use approx::assert_abs_diff_eq;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal, StudentsT};

use ccgof::benchmark_tests::{sample_residuals, scaled_residuals};
use ccgof::conditional_moments::{
    band_moments, benchmark, cond_moments, conditional_corr_matrices, equilibrium_gap, order_by_benchmark,
    theoretical_cond_cov,
};
use ccgof::constants::{lambda1, lambda2, truncated_moment};
use ccgof::copulas::{conditional_cdf, conditional_quantile, sample};
use ccgof::monte_carlo::{kde, linspace};
use ccgof::pipeline::average_ranks;
use ccgof::special::{chi2_cdf, std_normal_cdf, std_normal_quantile, student_t_cdf, student_t_quantile};
use ccgof::{split_constants, BivariateSample, CopulaSpec, LoadingFactor, QuantileSplit, ScaledResiduals};

fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    quadrature::integrate(f, a, b, 1e-14).integral
}

fn phi(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

#[test]
fn normal_functions_match_oracles() {
    let n = Normal::new(0.0, 1.0).unwrap();
    for i in 1..200 {
        let p = i as f64 / 200.0;
        // statrs' erfc is only good to ~1e-11, so it checks the quantile
        // loosely and quadrature checks the cdf tightly
        assert_abs_diff_eq!(std_normal_quantile(p).unwrap(), n.inverse_cdf(p), epsilon = 1e-9);
        let x = -6.0 + 12.0 * p;
        let want = if x < 0.0 { integrate(phi, -12.0, x) } else { 1.0 - integrate(phi, x, 12.0) };
        assert_abs_diff_eq!(std_normal_cdf(x), want, epsilon = 1e-13);
    }
    for p in [1e-12, 1e-8, 1e-4, 0.5, 1.0 - 1e-4] {
        let x = std_normal_quantile(p).unwrap();
        assert!((std_normal_cdf(x) - p).abs() <= 1e-12 * p.max(1e-3), "p = {p}");
    }
}

#[test]
fn quantile_at_split_probability() {
    assert_abs_diff_eq!(std_normal_quantile(0.19808).unwrap(), -0.848_499_23, epsilon = 1e-8);
    let c = split_constants();
    assert_abs_diff_eq!(std_normal_cdf(c.x_tilde), c.q_tilde, epsilon = 1e-14);
}

#[test]
fn chi2_and_t_match_statrs() {
    for k in [1u32, 2, 5] {
        let d = ChiSquared::new(k as f64).unwrap();
        for x in [0.01, 0.5, 1.0, 3.0, 10.0, 40.0] {
            assert_abs_diff_eq!(chi2_cdf(x, k).unwrap(), d.cdf(x), epsilon = 1e-12);
        }
    }
    for nu in [3.0, 5.0, 10.0] {
        let d = StudentsT::new(0.0, 1.0, nu).unwrap();
        for x in [-8.0, -2.0, -0.3, 0.0, 0.7, 4.0] {
            assert_abs_diff_eq!(student_t_cdf(x, nu), d.cdf(x), epsilon = 1e-11);
        }
        for p in [0.001, 0.1, 0.5, 0.8, 0.999] {
            assert_abs_diff_eq!(student_t_quantile(p, nu).unwrap(), d.inverse_cdf(p), epsilon = 1e-7);
        }
    }
}

#[test]
fn truncated_moments_match_quadrature() {
    for &(a, b) in &[(0.0, 0.2), (0.2, 0.8), (0.8, 1.0), (0.1, 0.35), (0.0, 1.0)] {
        let lo = if a == 0.0 { -12.0 } else { std_normal_quantile(a).unwrap() };
        let hi = if b == 1.0 { 12.0 } else { std_normal_quantile(b).unwrap() };
        for k in 0..=4usize {
            let want = integrate(|v| v.powi(k as i32) * phi(v), lo, hi) / (b - a);
            let got = truncated_moment(k, a, b).unwrap();
            assert!((got - want).abs() <= 1e-10, "k={k} ({a},{b}): {got} vs {want}");
        }
        assert_abs_diff_eq!(lambda1(a, b).unwrap(), truncated_moment(1, a, b).unwrap(), epsilon = 1e-12);
        assert_abs_diff_eq!(lambda2(a, b).unwrap(), truncated_moment(2, a, b).unwrap(), epsilon = 1e-12);
        assert!(lambda2(a, b).unwrap() - lambda1(a, b).unwrap().powi(2) > 0.0);
    }
}

#[test]
fn split_equalises_tail_and_centre_variance() {
    let q = split_constants().q_tilde;
    let tail = lambda2(0.0, q).unwrap() - lambda1(0.0, q).unwrap().powi(2);
    let mid = lambda2(q, 1.0 - q).unwrap();
    assert_abs_diff_eq!(tail, mid, epsilon = 1e-12);
}

#[test]
fn benchmark_hand_arithmetic() {
    let s = BivariateSample::from_pairs(&[(1.0, 2.0), (3.0, -1.0), (0.5, 0.25), (-2.0, 4.0)]).unwrap();
    assert_eq!(benchmark(&s, LoadingFactor::new(1.0, 1.0).unwrap()), vec![3.0, 2.0, 0.75, 2.0]);
    assert_eq!(benchmark(&s, LoadingFactor::new(1.0, 0.0).unwrap()), s.x1());
}

#[test]
fn ordering_matches_naive_sort() {
    let s = sample(&CopulaSpec::Gaussian { rho: 0.4 }, 500, 3).unwrap();
    let alpha = LoadingFactor::new(0.7, -1.2).unwrap();
    let y = benchmark(&s, alpha);
    let mut naive: Vec<(f64, usize)> = y.iter().copied().zip(0..).collect();
    naive.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let o = order_by_benchmark(&s, alpha);
    assert_eq!(o.perm, naive.iter().map(|p| p.1).collect::<Vec<_>>());
}

#[test]
fn small_band_uses_floor_indices() {
    let s = BivariateSample::from_pairs(&[(1.0, 1.0), (2.0, 3.0), (3.0, 2.0), (4.0, 5.0), (5.0, 4.0)]).unwrap();
    let o = order_by_benchmark(&s, LoadingFactor::default());
    let m = cond_moments(&o, QuantileSplit::new(0.0, 0.4).unwrap()).unwrap();
    assert_eq!(m.m, 2);
    // ranked points (1,1) and (2,3)
    assert_abs_diff_eq!(m.mu1, 1.5, epsilon = 1e-15);
    assert_abs_diff_eq!(m.mu2, 2.0, epsilon = 1e-15);
    assert_abs_diff_eq!(m.r, 0.5, epsilon = 1e-15);
}

#[test]
fn conditional_covariance_matches_simulation() {
    let rho = 0.5;
    let s = sample(&CopulaSpec::Gaussian { rho }, 2_000_000, 11).unwrap();
    let alpha = LoadingFactor::default();
    let o = order_by_benchmark(&s, alpha);
    let q = split_constants().q_tilde;
    for (a, b) in [(0.0, q), (q, 1.0 - q), (1.0 - q, 1.0)] {
        let split = QuantileSplit::new(a, b).unwrap();
        let sim = cond_moments(&o, split).unwrap();
        let pop = theoretical_cond_cov([0.0; 2], [[1.0, rho], [rho, 1.0]], alpha, split).unwrap();
        assert_abs_diff_eq!(sim.r, pop[0][1], epsilon = 0.005);
    }
}

#[test]
fn theoretical_cond_cov_edge_cases() {
    let id = [[1.0, 0.0], [0.0, 1.0]];
    let full = QuantileSplit::new(0.0, 1.0).unwrap();
    let s = [[2.0, 0.3], [0.3, 0.5]];
    let out = theoretical_cond_cov([0.0; 2], s, LoadingFactor::new(1.0, 2.0).unwrap(), full).unwrap();
    for i in 0..2 {
        for j in 0..2 {
            assert_abs_diff_eq!(out[i][j], s[i][j], epsilon = 1e-12);
        }
    }
    let q = split_constants().q_tilde;
    let tail = theoretical_cond_cov([0.0; 2], id, LoadingFactor::new(1.0, 0.0).unwrap(), QuantileSplit::new(0.0, q).unwrap())
        .unwrap();
    assert_abs_diff_eq!(tail[0][1], 0.0, epsilon = 1e-15);
    assert_abs_diff_eq!(tail[1][1], 1.0, epsilon = 1e-15);
    assert!(tail[0][0] < 1.0);
}

#[test]
fn t_copula_breaks_the_equilibrium() {
    let s = sample(&CopulaSpec::StudentT { rho: 0.3, nu: 3.0 }, 1_000_000, 5).unwrap();
    let gap = equilibrium_gap(&s, LoadingFactor::default()).unwrap();
    assert!(gap > 0.05, "gap {gap}");
}

#[test]
fn conditional_correlation_k2_matches_bivariate_path() {
    let s = sample(&CopulaSpec::Gaussian { rho: 0.6 }, 5000, 8).unwrap();
    let data = vec![s.x1().to_vec(), s.x2().to_vec()];
    let mats = conditional_corr_matrices(&data, &[1.0, 1.0]).unwrap();
    let bands = band_moments(&s, LoadingFactor::default()).unwrap();
    let o = order_by_benchmark(&s, LoadingFactor::default());
    let q = split_constants().q_tilde;
    for (i, (a, b)) in [(0.0, q), (q, 1.0 - q), (1.0 - q, 1.0)].into_iter().enumerate() {
        let idx = &o.perm[QuantileSplit::new(a, b).unwrap().index_range(s.n())];
        let var = |x: &[f64], mu: f64| idx.iter().map(|&j| (x[j] - mu).powi(2)).sum::<f64>() / idx.len() as f64;
        let corr = bands[i].r / (var(s.x1(), bands[i].mu1) * var(s.x2(), bands[i].mu2)).sqrt();
        assert_abs_diff_eq!(mats[i][0][1], corr, epsilon = 1e-12);
        assert_abs_diff_eq!(mats[i][0][0], 1.0, epsilon = 1e-12);
    }
}

#[test]
fn iid_normal_bands_agree() {
    let cols: Vec<Vec<f64>> = (0..3u64)
        .map(|k| sample(&CopulaSpec::Gaussian { rho: 0.0 }, 100_000, 40 + k).unwrap().x1().to_vec())
        .collect();
    let mats = conditional_corr_matrices(&cols, &[1.0, 1.0, 1.0]).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            assert!((mats[0][i][j] - mats[1][i][j]).abs() < 0.02);
            assert!((mats[2][i][j] - mats[1][i][j]).abs() < 0.02);
        }
    }
}

#[test]
fn comonotone_pair_has_unit_correlation_in_every_band() {
    let x: Vec<f64> = (0..200).map(|i| ((i * 37) % 200) as f64).collect();
    let y: Vec<f64> = x.iter().map(|v| 3.0 * v + 1.0).collect();
    let z: Vec<f64> = (0..200).map(|i| ((i * 91) % 200) as f64).collect();
    let mats = conditional_corr_matrices(&[x, y, z], &[1.0, 1.0, 1.0]).unwrap();
    for m in &mats {
        assert_abs_diff_eq!(m[0][1], 1.0, epsilon = 1e-12);
    }
}

#[test]
fn conditional_sampler_inverts_the_cdf() {
    for spec in [
        CopulaSpec::Frank { theta: 3.7 },
        CopulaSpec::Gumbel { theta: 1.5 },
        CopulaSpec::Joe { theta: 1.9 },
        CopulaSpec::Galambos { theta: 0.8 },
        CopulaSpec::HuslerReiss { theta: 1.2 },
    ] {
        for &u in &[0.05, 0.3, 0.5, 0.9] {
            for &p in &[0.01, 0.2, 0.5, 0.77, 0.99] {
                let v = conditional_quantile(&spec, u, p).unwrap();
                assert_abs_diff_eq!(conditional_cdf(&spec, u, v).unwrap(), p, epsilon = 1e-8);
            }
        }
    }
}

#[test]
fn whitened_residuals_have_identity_covariance() {
    let s = sample(&CopulaSpec::Joe { theta: 1.9 }, 400, 21).unwrap();
    let z = sample_residuals(&s).unwrap();
    let mut mean = [0.0; 2];
    let mut cov = [[0.0; 2]; 2];
    for i in 0..z.n() {
        let r = z.row(i);
        for a in 0..2 {
            mean[a] += r[a] / z.n() as f64;
            for b in 0..2 {
                cov[a][b] += r[a] * r[b] / z.n() as f64;
            }
        }
    }
    for a in 0..2 {
        assert_abs_diff_eq!(mean[a], 0.0, epsilon = 1e-10);
        for b in 0..2 {
            assert_abs_diff_eq!(cov[a][b], if a == b { 1.0 } else { 0.0 }, epsilon = 1e-8);
        }
    }
}

#[test]
fn one_dimensional_residuals_are_standard_scores() {
    let x = [1.0, 4.0, 2.0, 8.0, 5.0];
    let z = scaled_residuals(&[&x]).unwrap();
    let m = x.iter().sum::<f64>() / 5.0;
    let sd = (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 5.0).sqrt();
    let mut got: Vec<f64> = (0..5).map(|i| z.row(i)[0]).collect();
    let mut want: Vec<f64> = x.iter().map(|v| (v - m) / sd).collect();
    got.sort_by(f64::total_cmp);
    want.sort_by(f64::total_cmp);
    for (g, w) in got.iter().zip(&want) {
        assert_abs_diff_eq!(g, w, epsilon = 1e-12);
    }
}

#[test]
fn bhep_symmetric_pair_matches_quadrature() {
    let c = 0.8;
    let z = ScaledResiduals::from_rows(&[vec![c, 0.0], vec![-c, 0.0]]).unwrap();
    // empirical cf is cos(c·t1); weight is the standard normal density
    let w = |t: f64| phi(t);
    let inner = integrate(|t2| (-(t2 * t2)).exp() * w(t2), -12.0, 12.0);
    let want = integrate(
            |t1| {
                let a = (t1 * c).cos();
                let e = (-0.5 * t1 * t1).exp();
                // ∫ (a − e·e2)² w(t2) dt2 = a² − 2ae∫e2·w + e²∫e2²·w
                let i1 = integrate(|t2| (-0.5 * t2 * t2).exp() * w(t2), -12.0, 12.0);
                (a * a - 2.0 * a * e * i1 + e * e * inner) * w(t1)
            },
            -12.0,
            12.0,
        );
    assert_abs_diff_eq!(z.bhep(1.0).unwrap(), want, epsilon = 1e-6);
}

#[test]
fn ad_cm_ms_hand_cases() {
    // radii at chi-square quantiles i/(n+1): AD small and positive
    let n = 30;
    let rows: Vec<Vec<f64>> = (1..=n)
        .map(|i| {
            let r2 = -2.0 * (1.0 - i as f64 / (n + 1) as f64).ln();
            vec![r2.sqrt(), 0.0]
        })
        .collect();
    let z = ScaledResiduals::from_rows(&rows).unwrap();
    let ad = z.ad().unwrap();
    assert!(ad > 0.0 && ad < 0.5, "AD {ad}");
    let inflated: Vec<Vec<f64>> = rows.iter().map(|r| vec![r[0] * 10f64.sqrt(), 0.0]).collect();
    assert!(ScaledResiduals::from_rows(&inflated).unwrap().ad().unwrap() > ad);

    // F values exactly at (2i−1)/(2n)
    let rows: Vec<Vec<f64>> = (1..=n)
        .map(|i| {
            let f = (2 * i - 1) as f64 / (2 * n) as f64;
            vec![(-2.0 * (1.0 - f).ln()).sqrt(), 0.0]
        })
        .collect();
    let cm = ScaledResiduals::from_rows(&rows).unwrap().cm().unwrap();
    assert_abs_diff_eq!(cm, 1.0 / (12.0 * n as f64), epsilon = 1e-12);

    let sym = ScaledResiduals::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]]).unwrap();
    assert_abs_diff_eq!(sym.ms(), 0.0, epsilon = 1e-15);

    let pts: [[f64; 2]; 3] = [[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]];
    let brute: f64 = pts
        .iter()
        .flat_map(|a| pts.iter().map(move |b| (a[0] * b[0] + a[1] * b[1]).powi(3)))
        .sum::<f64>()
        / 9.0;
    let z = ScaledResiduals::from_rows(&pts.iter().map(|p| p.to_vec()).collect::<Vec<_>>()).unwrap();
    assert_abs_diff_eq!(z.ms(), brute, epsilon = 1e-12);
}

#[test]
fn gaussianize_rank_arithmetic() {
    let r = average_ranks(&[5.0, 1.0, 9.0]);
    assert_eq!(r, vec![2.0, 1.0, 3.0]);
    let z: Vec<f64> = r.iter().map(|&k| std_normal_quantile(k / 4.0).unwrap()).collect();
    assert_abs_diff_eq!(z[0], 0.0, epsilon = 1e-15);
    assert_abs_diff_eq!(z[1], std_normal_quantile(0.25).unwrap(), epsilon = 1e-15);
    assert_abs_diff_eq!(z[2], std_normal_quantile(0.75).unwrap(), epsilon = 1e-15);
    assert_eq!(average_ranks(&[2.0, 1.0, 2.0, 3.0]), vec![2.5, 1.0, 2.5, 4.0]);
}

#[test]
fn kde_tracks_the_normal_density() {
    let s = sample(&CopulaSpec::Gaussian { rho: 0.0 }, 100_000, 9).unwrap();
    let grid = linspace(-4.0, 4.0, 161);
    let d = kde(s.x1(), &grid).unwrap();
    let worst = d.iter().map(|&(x, y)| (y - phi(x)).abs()).fold(0.0, f64::max);
    assert!(worst < 0.02, "max deviation {worst}");

    let wide = linspace(-8.0, 8.0, 2001);
    let d = kde(&s.x1()[..1000], &wide).unwrap();
    let area: f64 = d.windows(2).map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0)).sum();
    assert_abs_diff_eq!(area, 1.0, epsilon = 1e-3);

    let shifted: Vec<f64> = s.x1()[..1000].iter().map(|v| v + 2.0).collect();
    let grid2: Vec<f64> = wide.iter().map(|g| g + 2.0).collect();
    let e = kde(&shifted, &grid2).unwrap();
    for (a, b) in d.iter().zip(&e) {
        assert_abs_diff_eq!(a.1, b.1, epsilon = 1e-12);
    }
}
