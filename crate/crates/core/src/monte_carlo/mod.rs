//! Monte Carlo engine: simulated null distributions, rejection thresholds,
//! p-values, power and size estimation.
//!
//! Every replication draws from its own counter-based stream
//! ([`crate::rng::stream`]), so results depend only on the master seed and
//! never on the number of worker threads.

mod experiment;

pub use experiment::{
    run_experiment, CellOutcome, ExperimentConfig, ExperimentOutput, TestSpec,
};

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::benchmark_tests::{sample_residuals, BenchKind};
use crate::conditional_moments::LoadingFactor;
use crate::constants::{split_constants, SplitConstants};
use crate::copulas::{sample_with, BivariateSample, CopulaSpec};
use crate::error::{Error, Result};
use crate::rng;
use crate::test_statistics::{core_triplet, tilde_triplet, RejectionSide, StatKind};

/// Minimum number of null replications accepted for threshold estimation.
pub const MIN_NULL_REPLICATIONS: usize = 1000;

/// Minimum sample size for null simulation.
pub const MIN_NULL_N: usize = 20;

/// Maximum tolerated fraction of failed replications.
pub const MAX_FAILURE_RATE: f64 = 0.001;

/// Any of the ten statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Statistic {
    Cond(StatKind),
    Bench(BenchKind),
}

impl Statistic {
    pub const ALL: [Statistic; 10] = [
        Statistic::Cond(StatKind::T),
        Statistic::Cond(StatKind::L),
        Statistic::Cond(StatKind::R),
        Statistic::Cond(StatKind::Ttilde),
        Statistic::Cond(StatKind::Ltilde),
        Statistic::Cond(StatKind::Rtilde),
        Statistic::Bench(BenchKind::Bhep),
        Statistic::Bench(BenchKind::Ad),
        Statistic::Bench(BenchKind::Cm),
        Statistic::Bench(BenchKind::Ms),
    ];

    pub fn name(self) -> &'static str {
        match self {
            Statistic::Cond(k) => k.name(),
            Statistic::Bench(k) => k.name(),
        }
    }

    /// File-name friendly name (`T~` becomes `Ttilde`).
    pub fn slug(self) -> String {
        self.name().replace('~', "tilde")
    }

    /// Two-sided for the conditional-covariance statistics, right-sided for
    /// the benchmarks (large values indicate departure from normality).
    pub fn default_side(self) -> RejectionSide {
        match self {
            Statistic::Cond(_) => RejectionSide::TwoSided,
            Statistic::Bench(_) => RejectionSide::Right,
        }
    }
}

impl fmt::Display for Statistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Statistic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace("TILDE", "~");
        Statistic::ALL
            .into_iter()
            .find(|st| st.name() == norm)
            .ok_or_else(|| Error::param(format!("unknown statistic '{s}'")))
    }
}

impl Serialize for Statistic {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Statistic {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl FromStr for RejectionSide {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "two_sided" | "two" | "both" => Ok(RejectionSide::TwoSided),
            "left" => Ok(RejectionSide::Left),
            "right" => Ok(RejectionSide::Right),
            "symmetric" | "abs" => Ok(RejectionSide::Symmetric),
            _ => Err(Error::param(format!("unknown rejection side '{s}'"))),
        }
    }
}

/// Hex SHA-256 of the compact JSON form of `cfg`; embedded in output
/// artifacts so a run can be matched to its configuration.
pub fn config_digest<T: Serialize>(cfg: &T) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(serde_json::to_vec(cfg).expect("config serializes")))
}

/// Evaluates several statistics on one sample, sharing the benchmark
/// orderings and scaled residuals. Failures are reported per statistic.
pub fn evaluate_many(
    stats: &[Statistic],
    sample: &BivariateSample,
    c: &SplitConstants,
) -> Vec<std::result::Result<f64, String>> {
    let alpha = LoadingFactor::default();
    let need = |pred: fn(&Statistic) -> bool| stats.iter().any(pred);
    let plain = need(|s| matches!(s, Statistic::Cond(k) if !k.is_tilde()))
        .then(|| core_triplet(sample, alpha, c).map_err(|e| e.to_string()));
    let tilde = need(|s| matches!(s, Statistic::Cond(k) if k.is_tilde()))
        .then(|| tilde_triplet(sample, c).map_err(|e| e.to_string()));
    let resid = need(|s| matches!(s, Statistic::Bench(_)))
        .then(|| sample_residuals(sample).map_err(|e| e.to_string()));
    let pick = |t: &Option<std::result::Result<[f64; 3], String>>, i: usize| {
        t.as_ref().expect("computed above").as_ref().map(|v| v[i]).map_err(Clone::clone)
    };
    stats
        .iter()
        .map(|s| match s {
            Statistic::Cond(StatKind::T) => pick(&plain, 0),
            Statistic::Cond(StatKind::L) => pick(&plain, 1),
            Statistic::Cond(StatKind::R) => pick(&plain, 2),
            Statistic::Cond(StatKind::Ttilde) => pick(&tilde, 0),
            Statistic::Cond(StatKind::Ltilde) => pick(&tilde, 1),
            Statistic::Cond(StatKind::Rtilde) => pick(&tilde, 2),
            Statistic::Bench(k) => match resid.as_ref().expect("computed above") {
                Ok(z) => z.statistic(*k).map_err(|e| e.to_string()),
                Err(e) => Err(e.clone()),
            },
        })
        .collect()
}

/// Evaluates one statistic with the default loading factor `(1, 1)`.
pub fn evaluate(stat: Statistic, sample: &BivariateSample, c: &SplitConstants) -> Result<f64> {
    evaluate_many(&[stat], sample, c)
        .pop()
        .expect("one statistic requested")
        .map_err(Error::degenerate)
}

/// Sorted simulated values of a statistic under the independent standard
/// bivariate normal null.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullDistribution {
    pub stat: Statistic,
    pub n: usize,
    /// Replications requested.
    pub replications: usize,
    pub master_seed: u64,
    /// Replications whose statistic could not be evaluated.
    pub failures: usize,
    /// Seconds since the Unix epoch at generation; zero when loaded from a
    /// cache or constructed directly.
    #[serde(skip)]
    pub generated_unix_secs: u64,
    pub values: Vec<f64>,
}

impl NullDistribution {
    /// Wraps precomputed values (sorted here).
    pub fn from_values(stat: Statistic, n: usize, master_seed: u64, mut values: Vec<f64>) -> Self {
        values.sort_by(f64::total_cmp);
        NullDistribution {
            stat,
            n,
            replications: values.len(),
            master_seed,
            failures: 0,
            generated_unix_secs: 0,
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn now_secs() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Draws `reps` samples from `spec` (replication `i` from stream
/// `(seed, purpose, i)`) and evaluates `stats` on each. Returns the value
/// columns in replication order and the failure count per statistic.
fn replicate(
    stats: &[Statistic],
    spec: &CopulaSpec,
    n: usize,
    reps: usize,
    seed: u64,
    purpose: &str,
) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    spec.validate()?;
    let c = split_constants();
    let rows: Vec<Result<Vec<std::result::Result<f64, String>>>> = (0..reps as u64)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, purpose, i);
            let s = sample_with(spec, n, &mut r)?;
            Ok(evaluate_many(stats, &s, c))
        })
        .collect();
    let mut cols = vec![Vec::with_capacity(reps); stats.len()];
    let mut failed = vec![0usize; stats.len()];
    let mut reasons = vec![None; stats.len()];
    for row in rows {
        for (j, v) in row?.into_iter().enumerate() {
            match v {
                Ok(x) if x.is_finite() => cols[j].push(x),
                Ok(x) => {
                    failed[j] += 1;
                    reasons[j].get_or_insert_with(|| format!("non-finite value {x}"));
                }
                Err(e) => {
                    failed[j] += 1;
                    reasons[j].get_or_insert(e);
                }
            }
        }
    }
    for (j, &f) in failed.iter().enumerate() {
        if f as f64 > MAX_FAILURE_RATE * reps as f64 {
            return Err(Error::TooManyFailures {
                failed: f,
                total: reps,
                reason: format!(
                    "{}: {}",
                    stats[j],
                    reasons[j].clone().unwrap_or_default()
                ),
            });
        }
    }
    Ok((cols, failed))
}

/// Null distributions of several statistics computed on common samples.
/// Replication `i` always uses the same sample, so the result for a
/// statistic does not depend on which other statistics are requested.
pub fn simulate_nulls(
    stats: &[Statistic],
    n: usize,
    reps: usize,
    master_seed: u64,
) -> Result<Vec<NullDistribution>> {
    if n < MIN_NULL_N {
        return Err(Error::param(format!("null simulation needs n >= {MIN_NULL_N}, got {n}")));
    }
    if reps < MIN_NULL_REPLICATIONS {
        return Err(Error::param(format!(
            "null simulation needs N >= {MIN_NULL_REPLICATIONS}, got {reps}"
        )));
    }
    let null = CopulaSpec::Gaussian { rho: 0.0 };
    let (cols, failed) = replicate(stats, &null, n, reps, master_seed, "null")?;
    let stamp = now_secs();
    Ok(stats
        .iter()
        .zip(cols)
        .zip(failed)
        .map(|((&stat, mut values), failures)| {
            values.sort_by(f64::total_cmp);
            NullDistribution {
                stat,
                n,
                replications: reps,
                master_seed,
                failures,
                generated_unix_secs: stamp,
                values,
            }
        })
        .collect())
}

pub fn simulate_null(stat: Statistic, n: usize, reps: usize, master_seed: u64) -> Result<NullDistribution> {
    Ok(simulate_nulls(&[stat], n, reps, master_seed)?.remove(0))
}

/// Rejection region: reject when `x < lower` or `x > upper`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub side: RejectionSide,
    pub size: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl Threshold {
    pub fn rejects(&self, x: f64) -> bool {
        self.lower.is_some_and(|l| x < l) || self.upper.is_some_and(|u| x > u)
    }
}

fn tail_count(size: f64, len: usize) -> Result<usize> {
    let k = (size * len as f64 + 1e-9).floor() as usize;
    if k < 1 || k >= len {
        return Err(Error::param(format!(
            "{len} null values cannot resolve a tail of probability {size}"
        )));
    }
    Ok(k)
}

/// Empirical rejection thresholds. With `k = ⌊size·N⌋` exactly `k` null
/// values (absent ties) fall strictly inside the region; two-sided regions
/// put `⌊k/2⌋` values in the lower tail and the rest in the upper.
pub fn threshold(null: &NullDistribution, size: f64, side: RejectionSide) -> Result<Threshold> {
    if !(size > 0.0 && size < 1.0) {
        return Err(Error::domain(format!("test size must lie in (0, 1), got {size}")));
    }
    let v = &null.values;
    let len = v.len();
    let (lower, upper) = match side {
        RejectionSide::Right => {
            let k = tail_count(size, len)?;
            (None, Some(v[len - k - 1]))
        }
        RejectionSide::Left => {
            let k = tail_count(size, len)?;
            (Some(v[k]), None)
        }
        RejectionSide::TwoSided => {
            // split floor(size·N) as evenly as possible, lower tail first
            let k = tail_count(size, len)?;
            let lo = k / 2;
            let hi = k - lo;
            if lo < 1 {
                return Err(Error::param(format!(
                    "{len} null values cannot resolve two tails of total probability {size}"
                )));
            }
            (Some(v[lo]), Some(v[len - hi - 1]))
        }
        RejectionSide::Symmetric => {
            let k = tail_count(size, len)?;
            let c = sorted_abs(v)[len - k - 1];
            (Some(-c), Some(c))
        }
    };
    Ok(Threshold {
        side,
        size,
        lower,
        upper,
    })
}

fn sorted_abs(v: &[f64]) -> Vec<f64> {
    let mut a: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    a.sort_by(f64::total_cmp);
    a
}

/// Add-one Monte Carlo p-value.
pub fn p_value(null: &NullDistribution, observed: f64, side: RejectionSide) -> f64 {
    let v = &null.values;
    let denom = (v.len() + 1) as f64;
    let right = || (1 + v.len() - v.partition_point(|&x| x < observed)) as f64 / denom;
    let left = || (1 + v.partition_point(|&x| x <= observed)) as f64 / denom;
    match side {
        RejectionSide::Right => right(),
        RejectionSide::Left => left(),
        RejectionSide::TwoSided => (2.0 * right().min(left())).min(1.0),
        RejectionSide::Symmetric => {
            let a = sorted_abs(v);
            let obs = observed.abs();
            (1 + a.len() - a.partition_point(|&x| x < obs)) as f64 / denom
        }
    }
}

/// Rejection rate of one test on one alternative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerCell {
    pub copula: CopulaSpec,
    pub n: usize,
    pub replications: usize,
    pub stat: Statistic,
    pub side: RejectionSide,
    pub size: f64,
    pub rejections: usize,
    pub failures: usize,
    pub rejection_rate: f64,
    pub mc_stderr: f64,
}

/// Power of several tests on common samples from `spec`.
pub fn power_cells(
    tests: &[(Statistic, Threshold)],
    spec: &CopulaSpec,
    n: usize,
    reps: usize,
    master_seed: u64,
) -> Result<Vec<PowerCell>> {
    if reps == 0 {
        return Err(Error::param("power needs at least one replication"));
    }
    let mut stats: Vec<Statistic> = tests.iter().map(|t| t.0).collect();
    stats.sort();
    stats.dedup();
    let purpose = format!("alt/{}/n={n}", spec.label());
    let (cols, failed) = replicate(&stats, spec, n, reps, master_seed, &purpose)?;
    Ok(tests
        .iter()
        .map(|(stat, thr)| {
            let j = stats.binary_search(stat).expect("deduplicated above");
            let vals = &cols[j];
            let rejections = vals.iter().filter(|&&x| thr.rejects(x)).count();
            let ok = vals.len().max(1) as f64;
            let rate = rejections as f64 / ok;
            PowerCell {
                copula: *spec,
                n,
                replications: reps,
                stat: *stat,
                side: thr.side,
                size: thr.size,
                rejections,
                failures: failed[j],
                rejection_rate: rate,
                mc_stderr: (rate * (1.0 - rate) / ok).sqrt(),
            }
        })
        .collect())
}

pub fn power(
    stat: Statistic,
    spec: &CopulaSpec,
    n: usize,
    reps: usize,
    thr: &Threshold,
    master_seed: u64,
) -> Result<PowerCell> {
    Ok(power_cells(&[(stat, *thr)], spec, n, reps, master_seed)?.remove(0))
}

/// Empirical size on correlated Gaussian nulls: thresholds come from the
/// independent null (seed `seed`), rejection rates from fresh Gaussian
/// samples with each `rho`.
pub fn type1_sweep(
    rho_grid: &[f64],
    n_grid: &[usize],
    stats: &[Statistic],
    size: f64,
    reps: usize,
    seed: u64,
) -> Result<Vec<PowerCell>> {
    let mut out = Vec::new();
    for &n in n_grid {
        let nulls = simulate_nulls(stats, n, reps, seed)?;
        let tests: Vec<(Statistic, Threshold)> = nulls
            .iter()
            .map(|d| Ok((d.stat, threshold(d, size, d.stat.default_side())?)))
            .collect::<Result<_>>()?;
        for &rho in rho_grid {
            out.extend(power_cells(&tests, &CopulaSpec::Gaussian { rho }, n, reps, seed)?);
        }
    }
    Ok(out)
}

/// Plug-in bandwidth `1.06·σ̂·N^{-1/5}`.
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    1.06 * var.sqrt() * n.powf(-0.2)
}

/// Gaussian kernel density estimate evaluated on `grid`.
pub fn kde(values: &[f64], grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    if values.len() < 100 {
        return Err(Error::param(format!(
            "kde needs at least 100 values, got {}",
            values.len()
        )));
    }
    let h = silverman_bandwidth(values);
    if !(h > 0.0) {
        return Err(Error::degenerate("kde input has zero spread"));
    }
    let norm = 1.0 / (values.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    Ok(grid
        .par_iter()
        .map(|&g| {
            let s: f64 = values
                .iter()
                .map(|v| {
                    let u = (g - v) / h;
                    (-0.5 * u * u).exp()
                })
                .sum();
            (g, s * norm)
        })
        .collect())
}

/// `m` equally spaced points on `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, m: usize) -> Vec<f64> {
    if m == 1 {
        return vec![lo];
    }
    (0..m)
        .map(|i| lo + (hi - lo) * i as f64 / (m - 1) as f64)
        .collect()
}
