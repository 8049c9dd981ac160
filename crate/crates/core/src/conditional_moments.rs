//! Benchmark ordering, quantile bands and conditional (band) moments.

use serde::{Deserialize, Serialize};

use crate::constants::{lambda1, lambda2, split_constants};
use crate::copulas::BivariateSample;
use crate::error::{Error, Result};

/// Loading factor `α` of the benchmark `Y = α₁X₁ + α₂X₂`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadingFactor {
    pub alpha1: f64,
    pub alpha2: f64,
}

impl LoadingFactor {
    pub fn new(alpha1: f64, alpha2: f64) -> Result<Self> {
        if !(alpha1.is_finite() && alpha2.is_finite()) || (alpha1 == 0.0 && alpha2 == 0.0) {
            return Err(Error::param(format!(
                "loading factor must be finite and nonzero, got ({alpha1}, {alpha2})"
            )));
        }
        Ok(LoadingFactor { alpha1, alpha2 })
    }
}

impl Default for LoadingFactor {
    fn default() -> Self {
        LoadingFactor {
            alpha1: 1.0,
            alpha2: 1.0,
        }
    }
}

/// Quantile conditioning band `(a, b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileSplit {
    pub a: f64,
    pub b: f64,
}

impl QuantileSplit {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(0.0 <= a && a < b && b <= 1.0) {
            return Err(Error::domain(format!(
                "split requires 0 <= a < b <= 1, got ({a}, {b})"
            )));
        }
        Ok(QuantileSplit { a, b })
    }

    /// Ranked index range `⌊na⌋ .. ⌊nb⌋` (zero-based, half open).
    pub fn index_range(&self, n: usize) -> std::ops::Range<usize> {
        let lo = (n as f64 * self.a).floor() as usize;
        let hi = ((n as f64 * self.b).floor() as usize).min(n);
        lo..hi.max(lo)
    }
}

/// The three 20/60/20 bands `(0, q)`, `(q, 1 - q)`, `(1 - q, 1)`.
pub fn bands(q: f64) -> [QuantileSplit; 3] {
    [
        QuantileSplit { a: 0.0, b: q },
        QuantileSplit { a: q, b: 1.0 - q },
        QuantileSplit { a: 1.0 - q, b: 1.0 },
    ]
}

/// The bands at the exact split `q̃`.
pub fn default_bands() -> [QuantileSplit; 3] {
    bands(split_constants().q_tilde)
}

pub fn benchmark(sample: &BivariateSample, alpha: LoadingFactor) -> Vec<f64> {
    sample
        .x1()
        .iter()
        .zip(sample.x2())
        .map(|(a, b)| alpha.alpha1 * a + alpha.alpha2 * b)
        .collect()
}

/// A sample together with the permutation sorting it by benchmark value.
#[derive(Debug, Clone)]
pub struct OrderedSample<'a> {
    pub sample: &'a BivariateSample,
    /// `perm[i]` is the original index of the `i`-th smallest benchmark.
    pub perm: Vec<usize>,
}

/// Sorts observations by benchmark; ties keep original index order.
pub fn order_by_benchmark(sample: &BivariateSample, alpha: LoadingFactor) -> OrderedSample<'_> {
    let y = benchmark(sample, alpha);
    let mut perm: Vec<usize> = (0..y.len()).collect();
    perm.sort_by(|&i, &j| y[i].total_cmp(&y[j]));
    OrderedSample { sample, perm }
}

/// Sample conditional means and covariance on one band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CondMoments {
    pub mu1: f64,
    pub mu2: f64,
    pub r: f64,
    pub m: usize,
}

/// Means and covariance over `perm[range]`, normalised by `1/m`.
pub(crate) fn moments_over(x1: &[f64], x2: &[f64], idx: &[usize]) -> (f64, f64, f64) {
    let m = idx.len() as f64;
    let (mut s1, mut s2) = (0.0, 0.0);
    for &i in idx {
        s1 += x1[i];
        s2 += x2[i];
    }
    let mu1 = s1 / m;
    let mu2 = s2 / m;
    let mut c = 0.0;
    for &i in idx {
        c += (x1[i] - mu1) * (x2[i] - mu2);
    }
    (mu1, mu2, c / m)
}

pub fn cond_moments(ordered: &OrderedSample<'_>, split: QuantileSplit) -> Result<CondMoments> {
    let n = ordered.perm.len();
    let range = split.index_range(n);
    let m = range.len();
    if m < 2 {
        return Err(Error::SubsampleTooSmall {
            a: split.a,
            b: split.b,
            n,
            m,
            min: 2,
        });
    }
    let (mu1, mu2, r) = moments_over(
        ordered.sample.x1(),
        ordered.sample.x2(),
        &ordered.perm[range],
    );
    Ok(CondMoments { mu1, mu2, r, m })
}

/// Conditional moments on the three 20/60/20 bands.
pub fn band_moments(sample: &BivariateSample, alpha: LoadingFactor) -> Result<[CondMoments; 3]> {
    let ordered = order_by_benchmark(sample, alpha);
    let [a1, a2, a3] = default_bands();
    Ok([
        cond_moments(&ordered, a1)?,
        cond_moments(&ordered, a2)?,
        cond_moments(&ordered, a3)?,
    ])
}

/// `r̂_{A₁} − 2r̂_{A₂} + r̂_{A₃}`.
pub fn equilibrium_gap(sample: &BivariateSample, alpha: LoadingFactor) -> Result<f64> {
    let [a1, a2, a3] = band_moments(sample, alpha)?;
    Ok(a1.r - 2.0 * a2.r + a3.r)
}

/// Population conditional covariance matrix of a normal vector given that
/// the benchmark falls in `split`: `Σ + (Var[Y|A] − Var[Y]) ββᵀ` with
/// `β = Σα / αᵀΣα`.
pub fn theoretical_cond_cov(
    _mu: [f64; 2],
    sigma: [[f64; 2]; 2],
    alpha: LoadingFactor,
    split: QuantileSplit,
) -> Result<[[f64; 2]; 2]> {
    let det = sigma[0][0] * sigma[1][1] - sigma[0][1] * sigma[1][0];
    if sigma[0][1] != sigma[1][0] || !(sigma[0][0] > 0.0) || !(det > 0.0) {
        return Err(Error::degenerate(format!(
            "covariance matrix must be symmetric positive definite: {sigma:?}"
        )));
    }
    let a = [alpha.alpha1, alpha.alpha2];
    let sa = [
        sigma[0][0] * a[0] + sigma[0][1] * a[1],
        sigma[1][0] * a[0] + sigma[1][1] * a[1],
    ];
    let var_y = a[0] * sa[0] + a[1] * sa[1];
    let beta = [sa[0] / var_y, sa[1] / var_y];
    let l1 = lambda1(split.a, split.b)?;
    let l2 = lambda2(split.a, split.b)?;
    let shift = var_y * (l2 - l1 * l1) - var_y;
    let mut out = sigma;
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] += shift * (beta[i] * beta[j]);
        }
    }
    Ok(out)
}

/// Dense row-major square matrix.
pub type Matrix = Vec<Vec<f64>>;

/// Pearson correlation matrices of the columns of `data` on the three
/// benchmark bands, benchmark `Σ_j alpha[j]·data[j]`.
pub fn conditional_corr_matrices(data: &[Vec<f64>], alpha: &[f64]) -> Result<[Matrix; 3]> {
    let k = data.len();
    if k < 2 || alpha.len() != k {
        return Err(Error::param(format!(
            "need k >= 2 columns and a matching loading vector (k = {k}, alpha = {})",
            alpha.len()
        )));
    }
    let n = data[0].len();
    if data.iter().any(|c| c.len() != n) {
        return Err(Error::param("columns differ in length"));
    }
    let q = split_constants().q_tilde;
    if ((n as f64) * q).floor() < (k + 1) as f64 {
        return Err(Error::SubsampleTooSmall {
            a: 0.0,
            b: q,
            n,
            m: ((n as f64) * q).floor() as usize,
            min: k + 1,
        });
    }
    let y: Vec<f64> = (0..n)
        .map(|i| (0..k).map(|j| alpha[j] * data[j][i]).sum())
        .collect();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.sort_by(|&i, &j| y[i].total_cmp(&y[j]));

    let mut out: [Matrix; 3] = Default::default();
    for (slot, split) in out.iter_mut().zip(bands(q)) {
        let idx = &perm[split.index_range(n)];
        let mut cov = vec![vec![0.0; k]; k];
        for a in 0..k {
            for b in a..k {
                let (_, _, c) = moments_over(&data[a], &data[b], idx);
                cov[a][b] = c;
                cov[b][a] = c;
            }
        }
        for (j, row) in cov.iter().enumerate() {
            if !(row[j] > 0.0) {
                return Err(Error::degenerate(format!(
                    "column {j} is constant on band ({}, {})",
                    split.a, split.b
                )));
            }
        }
        let mut corr = vec![vec![0.0; k]; k];
        for a in 0..k {
            for b in 0..k {
                corr[a][b] = if a == b {
                    1.0
                } else {
                    cov[a][b] / (cov[a][a] * cov[b][b]).sqrt()
                };
            }
        }
        *slot = corr;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(pairs: &[(f64, f64)]) -> BivariateSample {
        BivariateSample::from_pairs(pairs).unwrap()
    }

    #[test]
    fn benchmark_arithmetic() {
        let x = s(&[(1.0, 2.0), (3.0, -1.0), (0.0, 0.0), (1.0, 1.0)]);
        let y = benchmark(&x, LoadingFactor::default());
        assert_eq!(y, vec![3.0, 2.0, 0.0, 2.0]);
        assert_eq!(benchmark(&x, LoadingFactor::new(1.0, 0.0).unwrap()), x.x1());
        assert!(LoadingFactor::new(0.0, 0.0).is_err());
    }

    #[test]
    fn ordering_identity_reverse_and_ties() {
        let x = s(&[(1.0, 0.0), (2.0, 0.0), (3.0, 0.0), (4.0, 0.0)]);
        let a = LoadingFactor::new(1.0, 0.0).unwrap();
        assert_eq!(order_by_benchmark(&x, a).perm, vec![0, 1, 2, 3]);
        let r = LoadingFactor::new(-1.0, 0.0).unwrap();
        assert_eq!(order_by_benchmark(&x, r).perm, vec![3, 2, 1, 0]);
        let t = s(&[(1.0, 0.0), (0.0, 0.0), (1.0, 0.0), (0.0, 0.0)]);
        assert_eq!(order_by_benchmark(&t, a).perm, vec![1, 3, 0, 2]);
    }

    #[test]
    fn floor_band_arithmetic() {
        let split = QuantileSplit::new(0.0, 0.4).unwrap();
        assert_eq!(split.index_range(5), 0..2);
        let x = s(&[(5.0, 1.0), (1.0, 2.0), (4.0, 0.0), (2.0, 5.0), (3.0, 3.0)]);
        let o = order_by_benchmark(&x, LoadingFactor::new(1.0, 0.0).unwrap());
        let m = cond_moments(&o, split).unwrap();
        // ranks 1..2 are rows 1 and 3: (1,2), (2,5)
        assert_eq!(m.m, 2);
        assert_eq!((m.mu1, m.mu2), (1.5, 3.5));
        assert!((m.r - 0.75).abs() < 1e-15);
        assert!(matches!(
            cond_moments(&o, QuantileSplit::new(0.0, 0.3).unwrap()),
            Err(Error::SubsampleTooSmall { m: 1, .. })
        ));
    }

    #[test]
    fn full_split_is_unconditional_covariance() {
        let x = s(&[(0.3, 1.0), (1.2, -0.5), (-2.0, 0.7), (0.8, 0.9), (1.1, 2.0)]);
        let o = order_by_benchmark(&x, LoadingFactor::default());
        let m = cond_moments(&o, QuantileSplit::new(0.0, 1.0).unwrap()).unwrap();
        let (_, _, r) = moments_over(x.x1(), x.x2(), &o.perm);
        assert_eq!(m.r, r);
        let n = 5.0;
        let m1: f64 = x.x1().iter().sum::<f64>() / n;
        let m2: f64 = x.x2().iter().sum::<f64>() / n;
        let direct: f64 = x.x1().iter().zip(x.x2()).map(|(a, b)| (a - m1) * (b - m2)).sum::<f64>() / n;
        assert!((m.r - direct).abs() < 1e-15);
    }

    #[test]
    fn bands_partition_sample() {
        let q = split_constants().q_tilde;
        for n in [20usize, 37, 250, 1000, 2527] {
            let total: usize = bands(q).iter().map(|b| b.index_range(n).len()).sum();
            assert_eq!(total, n);
        }
    }

    #[test]
    fn theoretical_cov_special_cases() {
        let q = split_constants().q_tilde;
        let sig = [[1.0, 0.5], [0.5, 2.0]];
        let full = theoretical_cond_cov([0.0; 2], sig, LoadingFactor::default(), QuantileSplit::new(0.0, 1.0).unwrap()).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((full[i][j] - sig[i][j]).abs() < 1e-15);
            }
        }
        let id = [[1.0, 0.0], [0.0, 1.0]];
        let t = theoretical_cond_cov([0.0; 2], id, LoadingFactor::new(1.0, 0.0).unwrap(), QuantileSplit::new(0.0, q).unwrap()).unwrap();
        assert_eq!(t[0][1], 0.0);
        assert_eq!(t[1][1], 1.0);
        assert!(t[0][0] < 1.0);
        assert!(theoretical_cond_cov([0.0; 2], [[1.0, 1.0], [1.0, 1.0]], LoadingFactor::default(), QuantileSplit::new(0.0, q).unwrap()).is_err());
    }

    #[test]
    fn comonotone_columns_have_unit_correlation() {
        let c: Vec<f64> = (0..100).map(|i| ((i * 37) % 100) as f64).collect();
        let d: Vec<f64> = c.iter().map(|v| 2.0 * v + 1.0).collect();
        let e: Vec<f64> = (0..100).map(|i| ((i * 11) % 100) as f64).collect();
        let mats = conditional_corr_matrices(&[c, d, e], &[1.0, 1.0, 1.0]).unwrap();
        for m in &mats {
            assert!((m[0][1] - 1.0).abs() < 1e-12);
        }
    }
}
