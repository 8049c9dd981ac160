//! Seeded synthetic price panels with the shape of a daily metals data set.

use chrono::{Days, NaiveDate, Weekday, Datelike};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::PricePanel;
use crate::error::{Error, Result};
use crate::rng;

pub const FIXTURE_NAMES: [&str; 6] = ["AL", "CU", "NI", "PB", "SN", "ZN"];

/// Correlation matrix used for the shipped fixtures.
pub const FIXTURE_CORR: [[f64; 6]; 6] = [
    [1.00, 0.62, 0.48, 0.45, 0.38, 0.55],
    [0.62, 1.00, 0.52, 0.50, 0.42, 0.60],
    [0.48, 0.52, 1.00, 0.40, 0.36, 0.46],
    [0.45, 0.50, 0.40, 1.00, 0.33, 0.58],
    [0.38, 0.42, 0.36, 0.33, 1.00, 0.37],
    [0.55, 0.60, 0.46, 0.58, 0.37, 1.00],
];

/// Dependence structure of a synthetic return panel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FixtureKind {
    Gaussian,
    StudentT { nu: f64 },
}

/// Prices `100·exp(cumulative returns)` on business days from 2010-01-04,
/// where daily returns are `0.012·X` with `X` multivariate normal or
/// multivariate t (unit scale matrix `corr`).
pub fn synthetic_prices(
    kind: FixtureKind,
    corr: &[Vec<f64>],
    names: &[&str],
    rows: usize,
    seed: u64,
) -> Result<PricePanel> {
    let k = corr.len();
    if k < 2 || names.len() != k || corr.iter().any(|r| r.len() != k) {
        return Err(Error::param("fixture needs a k×k correlation matrix and k names, k >= 2"));
    }
    if rows < 2 {
        return Err(Error::param("fixture needs at least two rows"));
    }
    if let FixtureKind::StudentT { nu } = kind {
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(Error::domain(format!("degrees of freedom must be positive, got {nu}")));
        }
    }
    let m = DMatrix::from_fn(k, k, |i, j| corr[i][j]);
    let chol = m
        .cholesky()
        .ok_or_else(|| Error::domain("fixture correlation matrix is not positive definite"))?;
    let l = chol.l();
    let mut r = rng::stream(seed, "fixture", 0);
    let chi = match kind {
        FixtureKind::StudentT { nu } => Some(ChiSquared::new(nu).map_err(|e| Error::domain(e.to_string()))?),
        FixtureKind::Gaussian => None,
    };
    let mut columns = vec![Vec::with_capacity(rows); k];
    let mut level = vec![0.0f64; k];
    for _ in 0..rows {
        for (c, l) in columns.iter_mut().zip(&level) {
            c.push(100.0 * l.exp());
        }
        let g = DVector::from_fn(k, |_, _| r.sample::<f64, _>(StandardNormal));
        let mut x = &l * g;
        if let (Some(chi), FixtureKind::StudentT { nu }) = (&chi, kind) {
            let w: f64 = chi.sample(&mut r);
            x /= (w / nu).sqrt();
        }
        for (lv, xi) in level.iter_mut().zip(x.iter()) {
            *lv += 0.012 * xi;
        }
    }
    Ok(PricePanel {
        dates: business_days(rows),
        names: names.iter().map(|s| s.to_string()).collect(),
        columns,
    })
}

/// The shipped 2528×6 fixture for `kind`.
pub fn metals_fixture(kind: FixtureKind, seed: u64) -> PricePanel {
    let corr: Vec<Vec<f64>> = FIXTURE_CORR.iter().map(|r| r.to_vec()).collect();
    synthetic_prices(kind, &corr, &FIXTURE_NAMES, 2528, seed).expect("fixture parameters are valid")
}

fn business_days(rows: usize) -> Vec<NaiveDate> {
    let mut d = NaiveDate::from_ymd_opt(2010, 1, 4).expect("valid date");
    let mut out = Vec::with_capacity(rows);
    while out.len() < rows {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d + Days::new(1);
    }
    out
}
