//! The conditional-covariance statistics `T`, `L`, `R` and their decorrelated
//! versions `T~`, `L~`, `R~`.

use serde::{Deserialize, Serialize};

use crate::conditional_moments::{band_moments, LoadingFactor};
use crate::constants::SplitConstants;
use crate::copulas::BivariateSample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StatKind {
    T,
    L,
    R,
    #[serde(rename = "T~")]
    Ttilde,
    #[serde(rename = "L~")]
    Ltilde,
    #[serde(rename = "R~")]
    Rtilde,
}

impl StatKind {
    pub const ALL: [StatKind; 6] = [
        StatKind::T,
        StatKind::L,
        StatKind::R,
        StatKind::Ttilde,
        StatKind::Ltilde,
        StatKind::Rtilde,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StatKind::T => "T",
            StatKind::L => "L",
            StatKind::R => "R",
            StatKind::Ttilde => "T~",
            StatKind::Ltilde => "L~",
            StatKind::Rtilde => "R~",
        }
    }

    pub fn is_tilde(self) -> bool {
        matches!(self, StatKind::Ttilde | StatKind::Ltilde | StatKind::Rtilde)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectionSide {
    /// Equal-tail region, `size/2` in each tail.
    TwoSided,
    Left,
    Right,
    /// Reject for large `|x|`.
    Symmetric,
}

/// Unconditional (1/n) moment estimates entering the normalisers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UnconditionalMoments {
    pub sigma1_sq: f64,
    pub sigma2_sq: f64,
    pub r: f64,
    pub r_y1: f64,
    pub r_y2: f64,
    pub sigma_y_sq: f64,
}

impl UnconditionalMoments {
    pub fn estimate(sample: &BivariateSample, alpha: LoadingFactor) -> Self {
        let (s11, s22, s12) = covariance(sample.x1(), sample.x2());
        Self::from_parts(s11, s22, s12, alpha)
    }

    pub fn from_parts(sigma1_sq: f64, sigma2_sq: f64, r: f64, alpha: LoadingFactor) -> Self {
        let (a1, a2) = (alpha.alpha1, alpha.alpha2);
        UnconditionalMoments {
            sigma1_sq,
            sigma2_sq,
            r,
            r_y1: a1 * sigma1_sq + a2 * r,
            r_y2: a1 * r + a2 * sigma2_sq,
            sigma_y_sq: a1 * a1 * sigma1_sq + a2 * a2 * sigma2_sq + 2.0 * a1 * a2 * r,
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.sigma1_sq > 0.0 && self.sigma2_sq > 0.0 && self.sigma_y_sq > 0.0) {
            return Err(Error::degenerate(format!(
                "zero variance: sigma1^2 = {:e}, sigma2^2 = {:e}, sigma_Y^2 = {:e}",
                self.sigma1_sq, self.sigma2_sq, self.sigma_y_sq
            )));
        }
        Ok(())
    }

    /// `(a, b, c)` with normaliser² = `a·K₁ + b·K₂ + c·K₃`.
    fn weights(&self) -> (f64, f64, f64) {
        let p = self.r_y1 * self.r_y2;
        let a = (p / self.sigma_y_sq).powi(2);
        let b = (self.r_y1 * self.r_y1 * self.sigma2_sq + self.r_y2 * self.r_y2 * self.sigma1_sq
            + 2.0 * p * self.r)
            / self.sigma_y_sq;
        let c = self.sigma1_sq * self.sigma2_sq + 2.0 * p * self.r / self.sigma_y_sq;
        (a, b, c)
    }

    pub fn tau_hat_sq(&self, c: &SplitConstants) -> f64 {
        let (a, b, d) = self.weights();
        a * c.k1 + b * c.k2 + d * c.k3
    }

    pub fn eta_hat_sq(&self, c: &SplitConstants) -> f64 {
        let (a, b, d) = self.weights();
        a * c.k1_t + b * c.k2_t + d * c.k3_t
    }
}

/// 1/n variances and covariance of two columns.
pub(crate) fn covariance(x1: &[f64], x2: &[f64]) -> (f64, f64, f64) {
    let n = x1.len() as f64;
    let m1 = x1.iter().sum::<f64>() / n;
    let m2 = x2.iter().sum::<f64>() / n;
    let (mut s11, mut s22, mut s12) = (0.0, 0.0, 0.0);
    for (a, b) in x1.iter().zip(x2) {
        let d1 = a - m1;
        let d2 = b - m2;
        s11 += d1 * d1;
        s22 += d2 * d2;
        s12 += d1 * d2;
    }
    (s11 / n, s22 / n, s12 / n)
}

fn normaliser(
    name: &'static str,
    value_sq: f64,
    n: usize,
    m: &UnconditionalMoments,
) -> Result<f64> {
    if value_sq > 0.0 && value_sq.is_finite() {
        Ok(value_sq.sqrt())
    } else {
        Err(Error::NonPositiveNormaliser {
            statistic: name,
            value: value_sq,
            n,
            sigma1_sq: m.sigma1_sq,
            sigma2_sq: m.sigma2_sq,
            r: m.r,
        })
    }
}

pub fn tau_hat(sample: &BivariateSample, alpha: LoadingFactor, c: &SplitConstants) -> Result<f64> {
    let m = UnconditionalMoments::estimate(sample, alpha);
    m.check()?;
    normaliser("tau", m.tau_hat_sq(c), sample.n(), &m)
}

pub fn eta_hat(sample: &BivariateSample, alpha: LoadingFactor, c: &SplitConstants) -> Result<f64> {
    let m = UnconditionalMoments::estimate(sample, alpha);
    m.check()?;
    normaliser("eta", m.eta_hat_sq(c), sample.n(), &m)
}

/// `T`, `L`, `R` from one benchmark ordering.
pub(crate) fn core_triplet(
    sample: &BivariateSample,
    alpha: LoadingFactor,
    c: &SplitConstants,
) -> Result<[f64; 3]> {
    let m = UnconditionalMoments::estimate(sample, alpha);
    m.check()?;
    let n = sample.n();
    let tau = normaliser("tau", m.tau_hat_sq(c), n, &m)?;
    let eta = normaliser("eta", m.eta_hat_sq(c), n, &m)?;
    let [a1, a2, a3] = band_moments(sample, alpha)?;
    let sn = (n as f64).sqrt();
    Ok([
        sn * (a1.r - 2.0 * a2.r + a3.r) / tau,
        sn * (a1.r - a2.r) / eta,
        sn * (a3.r - a2.r) / eta,
    ])
}

pub fn t_stat(sample: &BivariateSample, alpha: LoadingFactor, c: &SplitConstants) -> Result<f64> {
    let m = UnconditionalMoments::estimate(sample, alpha);
    m.check()?;
    let tau = normaliser("tau", m.tau_hat_sq(c), sample.n(), &m)?;
    let [a1, a2, a3] = band_moments(sample, alpha)?;
    Ok((sample.n() as f64).sqrt() * (a1.r - 2.0 * a2.r + a3.r) / tau)
}

pub fn l_stat(sample: &BivariateSample, alpha: LoadingFactor, c: &SplitConstants) -> Result<f64> {
    Ok(core_triplet(sample, alpha, c)?[1])
}

pub fn r_stat(sample: &BivariateSample, alpha: LoadingFactor, c: &SplitConstants) -> Result<f64> {
    Ok(core_triplet(sample, alpha, c)?[2])
}

/// `((X₁+X₂)/σ̂(X₁+X₂), (X₁−X₂)/σ̂(X₁−X₂))`.
pub fn decorrelate(sample: &BivariateSample) -> Result<BivariateSample> {
    let (s11, s22, s12) = covariance(sample.x1(), sample.x2());
    let sum_var = s11 + s22 + 2.0 * s12;
    let diff_var = s11 + s22 - 2.0 * s12;
    if !(sum_var > 0.0 && diff_var > 0.0) || !(sum_var.is_finite() && diff_var.is_finite()) {
        return Err(Error::degenerate(format!(
            "decorrelation needs non-degenerate sum and difference (var = {sum_var:e}, {diff_var:e})"
        )));
    }
    let sp = sum_var.sqrt();
    let sm = diff_var.sqrt();
    let (x1, x2): (Vec<f64>, Vec<f64>) = sample
        .x1()
        .iter()
        .zip(sample.x2())
        .map(|(a, b)| ((a + b) / sp, (a - b) / sm))
        .unzip();
    BivariateSample::new(x1, x2)
}

pub(crate) fn tilde_triplet(sample: &BivariateSample, c: &SplitConstants) -> Result<[f64; 3]> {
    core_triplet(&decorrelate(sample)?, LoadingFactor::default(), c)
}

pub fn t_tilde(sample: &BivariateSample, c: &SplitConstants) -> Result<f64> {
    t_stat(&decorrelate(sample)?, LoadingFactor::default(), c)
}

pub fn l_tilde(sample: &BivariateSample, c: &SplitConstants) -> Result<f64> {
    Ok(tilde_triplet(sample, c)?[1])
}

pub fn r_tilde(sample: &BivariateSample, c: &SplitConstants) -> Result<f64> {
    Ok(tilde_triplet(sample, c)?[2])
}

/// Any one of the six statistics; `alpha` is ignored by the tilde kinds.
pub fn statistic(
    kind: StatKind,
    sample: &BivariateSample,
    alpha: LoadingFactor,
    c: &SplitConstants,
) -> Result<f64> {
    match kind {
        StatKind::T => t_stat(sample, alpha, c),
        StatKind::L => l_stat(sample, alpha, c),
        StatKind::R => r_stat(sample, alpha, c),
        StatKind::Ttilde => t_tilde(sample, c),
        StatKind::Ltilde => l_tilde(sample, c),
        StatKind::Rtilde => r_tilde(sample, c),
    }
}

/// All six statistics in `StatKind::ALL` order.
pub fn all_statistics(
    sample: &BivariateSample,
    alpha: LoadingFactor,
    c: &SplitConstants,
) -> Result<[f64; 6]> {
    let [t, l, r] = core_triplet(sample, alpha, c)?;
    let [tt, lt, rt] = tilde_triplet(sample, c)?;
    Ok([t, l, r, tt, lt, rt])
}
