//! Empirical workflow: price ingestion, log returns, rank Gaussianization,
//! pairwise p-value reports and band correlation matrices.

mod cache;
mod fixtures;

pub use cache::{NullCache, CACHE_MAGIC};
pub use fixtures::{metals_fixture, synthetic_prices, FixtureKind, FIXTURE_CORR, FIXTURE_NAMES};

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conditional_moments::{conditional_corr_matrices, Matrix};
use crate::constants::split_constants;
use crate::copulas::BivariateSample;
use crate::error::{Error, Result};
use crate::monte_carlo::{config_digest, evaluate_many, p_value, threshold, NullDistribution, Statistic, TestSpec};
use crate::special::std_normal_quantile;

/// Minimum column length accepted by [`gaussianize`].
pub const MIN_GAUSSIANIZE_N: usize = 20;

const DATE_FORMAT: &str = "%Y-%m-%d";

/// Date-aligned price series.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePanel {
    pub dates: Vec<NaiveDate>,
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl PricePanel {
    pub fn rows(&self) -> usize {
        self.dates.len()
    }

    /// Writes the `date,<name1>,...` schema with six decimals.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        let cerr = |e: csv::Error| Error::Serialization(e.to_string());
        let mut header = vec!["date".to_string()];
        header.extend(self.names.iter().cloned());
        csv.write_record(&header).map_err(cerr)?;
        for (i, d) in self.dates.iter().enumerate() {
            let mut rec = vec![d.format(DATE_FORMAT).to_string()];
            rec.extend(self.columns.iter().map(|c| format!("{:.6}", c[i])));
            csv.write_record(&rec).map_err(cerr)?;
        }
        csv.flush().map_err(|e| Error::Serialization(e.to_string()))
    }
}

/// Log returns (or their Gaussianized version) with the date of each
/// return's closing price. Undated observation tables leave `dates` empty.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    pub dates: Vec<NaiveDate>,
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl ReturnPanel {
    pub fn n(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    /// Keeps the first `m` observations.
    pub fn truncate(&mut self, m: usize) {
        self.dates.truncate(m);
        for c in &mut self.columns {
            c.truncate(m);
        }
    }

    pub fn k(&self) -> usize {
        self.columns.len()
    }
}

fn parse_err(location: String, message: impl Into<String>) -> Error {
    Error::Parse {
        location,
        message: message.into(),
    }
}

/// Parses one price CSV. Empty or `NA` cells mark a missing price; rows with
/// any missing price are dropped (inner join across columns). The result
/// is sorted by date.
pub fn parse_prices(text: &str, source: &str) -> Result<PricePanel> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| parse_err(format!("{source}: header"), e.to_string()))?
        .clone();
    if header.len() < 2 || !header[0].eq_ignore_ascii_case("date") {
        return Err(parse_err(
            format!("{source}: header"),
            "expected `date,<name1>,...,<namek>`",
        ));
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut seen = HashSet::new();
    for n in &names {
        if n.is_empty() || !seen.insert(n.as_str()) {
            return Err(parse_err(format!("{source}: header"), format!("empty or duplicate column name '{n}'")));
        }
    }

    let mut rows: BTreeMap<NaiveDate, Vec<Option<f64>>> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(i as u64 + 2);
            parse_err(format!("{source}: line {line}"), e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(i as u64 + 2);
        let date = NaiveDate::parse_from_str(&rec[0], DATE_FORMAT).map_err(|e| {
            parse_err(
                format!("{source}: line {line}, column 'date'"),
                format!("invalid ISO-8601 date '{}': {e}", &rec[0]),
            )
        })?;
        let mut vals = Vec::with_capacity(names.len());
        for (j, cell) in rec.iter().skip(1).enumerate() {
            if cell.is_empty() || cell == "NA" {
                vals.push(None);
                continue;
            }
            let v: f64 = cell
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| {
                    parse_err(
                        format!("{source}: line {line}, column '{}'", names[j]),
                        format!("invalid number '{cell}'"),
                    )
                })?;
            vals.push(Some(v));
        }
        if rows.insert(date, vals).is_some() {
            return Err(parse_err(
                format!("{source}: line {line}, column 'date'"),
                format!("duplicate date {date}"),
            ));
        }
    }

    let mut dates = Vec::new();
    let mut columns = vec![Vec::new(); names.len()];
    for (d, vals) in rows {
        if vals.iter().all(Option::is_some) {
            dates.push(d);
            for (c, v) in columns.iter_mut().zip(vals) {
                c.push(v.expect("checked above"));
            }
        }
    }
    Ok(PricePanel { dates, names, columns })
}

/// Parses a header-plus-numbers CSV without a date column. Every cell must
/// be a finite decimal number.
pub fn parse_table(text: &str, source: &str) -> Result<ReturnPanel> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let names: Vec<String> = rdr
        .headers()
        .map_err(|e| parse_err(format!("{source}: header"), e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut columns = vec![Vec::new(); names.len()];
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(i as u64 + 2);
            parse_err(format!("{source}: line {line}"), e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(i as u64 + 2);
        for (j, cell) in rec.iter().enumerate() {
            let v = cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                parse_err(
                    format!("{source}: line {line}, column '{}'", names[j]),
                    format!("invalid number '{cell}'"),
                )
            })?;
            columns[j].push(v);
        }
    }
    Ok(ReturnPanel {
        dates: Vec::new(),
        names,
        columns,
    })
}

/// Inner join of several panels on their dates.
pub fn join_panels(panels: Vec<PricePanel>) -> Result<PricePanel> {
    let mut it = panels.into_iter();
    let Some(mut acc) = it.next() else {
        return Err(Error::param("no price panels to join"));
    };
    for p in it {
        if let Some(dup) = p.names.iter().find(|n| acc.names.contains(n)) {
            return Err(Error::param(format!("column '{dup}' appears in more than one input")));
        }
        let pos: BTreeMap<NaiveDate, usize> = p.dates.iter().enumerate().map(|(i, d)| (*d, i)).collect();
        let keep: Vec<(usize, usize)> = acc
            .dates
            .iter()
            .enumerate()
            .filter_map(|(i, d)| pos.get(d).map(|&j| (i, j)))
            .collect();
        let mut columns: Vec<Vec<f64>> = acc
            .columns
            .iter()
            .map(|c| keep.iter().map(|&(i, _)| c[i]).collect())
            .collect();
        columns.extend(p.columns.iter().map(|c| keep.iter().map(|&(_, j)| c[j]).collect()));
        acc = PricePanel {
            dates: keep.iter().map(|&(i, _)| acc.dates[i]).collect(),
            names: acc.names.into_iter().chain(p.names).collect(),
            columns,
        };
    }
    Ok(acc)
}

/// Loads and inner-joins one or more price CSV files.
pub fn load_prices(paths: &[&Path]) -> Result<PricePanel> {
    let panels = paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(*p, e))?;
            parse_prices(&text, &p.display().to_string())
        })
        .collect::<Result<Vec<_>>>()?;
    join_panels(panels)
}

/// `r_t = ln(p_t / p_{t-1})`.
pub fn log_returns(prices: &PricePanel) -> Result<ReturnPanel> {
    if prices.rows() < 2 {
        return Err(Error::param("need at least two price rows"));
    }
    for (name, col) in prices.names.iter().zip(&prices.columns) {
        if let Some(i) = col.iter().position(|&p| !(p > 0.0)) {
            return Err(Error::domain(format!(
                "non-positive price {} for '{name}' on {}",
                col[i], prices.dates[i]
            )));
        }
    }
    Ok(ReturnPanel {
        dates: prices.dates[1..].to_vec(),
        names: prices.names.clone(),
        columns: prices
            .columns
            .iter()
            .map(|c| c.windows(2).map(|w| (w[1] / w[0]).ln()).collect())
            .collect(),
    })
}

/// Average ranks (1-based); tied values share the mean of their ranks.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &t in &idx[i..=j] {
            ranks[t] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Maps each column to `Φ⁻¹(rank/(n+1))` using average ranks.
pub fn gaussianize(panel: &ReturnPanel) -> Result<ReturnPanel> {
    gaussianize_columns(&panel.columns, &panel.names).map(|columns| ReturnPanel {
        dates: panel.dates.clone(),
        names: panel.names.clone(),
        columns,
    })
}

fn gaussianize_columns(cols: &[Vec<f64>], names: &[String]) -> Result<Vec<Vec<f64>>> {
    cols.iter()
        .zip(names)
        .map(|(c, name)| {
            let n = c.len();
            if n < MIN_GAUSSIANIZE_N {
                return Err(Error::param(format!(
                    "column '{name}' has {n} values, need at least {MIN_GAUSSIANIZE_N}"
                )));
            }
            if c.iter().all(|&v| v == c[0]) {
                return Err(Error::degenerate(format!("column '{name}' is constant")));
            }
            average_ranks(c)
                .into_iter()
                .map(|r| std_normal_quantile(r / (n + 1) as f64))
                .collect()
        })
        .collect()
}

/// Settings of a pairwise analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub tests: Vec<TestSpec>,
    pub size: f64,
    pub null_replications: usize,
    pub seed: u64,
}

impl AnalysisOptions {
    /// All ten statistics with their default sides.
    pub fn all_tests(size: f64, null_replications: usize, seed: u64) -> Self {
        AnalysisOptions {
            tests: Statistic::ALL.into_iter().map(TestSpec::new).collect(),
            size,
            null_replications,
            seed,
        }
    }

    /// Bonferroni level across the tests applied to each pair.
    pub fn bonferroni_size(&self) -> f64 {
        self.size / self.tests.len() as f64
    }

    pub fn digest(&self) -> String {
        config_digest(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairStat {
    pub test: TestSpec,
    pub value: f64,
    pub p_value: f64,
    pub reject: bool,
    pub reject_bonferroni: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub pair: (String, String),
    pub results: Vec<PairStat>,
}

impl PairReport {
    pub fn p_value(&self, test: &TestSpec) -> Option<f64> {
        self.results.iter().find(|r| r.test == *test).map(|r| r.p_value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairFailure {
    pub pair: (String, String),
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEntry {
    pub test: TestSpec,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

/// The "% rejections" row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionSummary {
    pub test: TestSpec,
    pub rejections: usize,
    pub rejections_bonferroni: usize,
    pub pairs: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub tool_version: String,
    pub seed: u64,
    pub config_sha256: String,
    pub n: usize,
    pub columns: Vec<String>,
    pub size: f64,
    pub bonferroni_size: f64,
    pub null_replications: usize,
    pub thresholds: Vec<ThresholdEntry>,
    pub pairs: Vec<PairReport>,
    pub failed_pairs: Vec<PairFailure>,
    pub rejection_percent: Vec<RejectionSummary>,
}

impl AnalysisReport {
    pub fn summary(&self, test: &TestSpec) -> Option<&RejectionSummary> {
        self.rejection_percent.iter().find(|s| s.test == *test)
    }
}

/// Null distributions for the distinct statistics among `tests`.
pub fn nulls_for(
    tests: &[TestSpec],
    n: usize,
    reps: usize,
    seed: u64,
    cache: &NullCache,
) -> Result<Vec<NullDistribution>> {
    let mut stats: Vec<Statistic> = tests.iter().map(|t| t.stat).collect();
    stats.sort();
    stats.dedup();
    cache.get(&stats, n, reps, seed)
}

/// Runs every requested test on every pair of columns of a (Gaussianized)
/// panel, with p-values from the simulated null at the panel's length.
pub fn pairwise_report(panel: &ReturnPanel, opts: &AnalysisOptions, cache: &NullCache) -> Result<AnalysisReport> {
    if panel.k() < 2 {
        return Err(Error::param("need at least two columns"));
    }
    if opts.tests.is_empty() {
        return Err(Error::param("no tests requested"));
    }
    let n = panel.n();
    let nulls = nulls_for(&opts.tests, n, opts.null_replications, opts.seed, cache)?;
    let null_of = |s: Statistic| nulls.iter().find(|d| d.stat == s).expect("simulated above");
    let thresholds = opts
        .tests
        .iter()
        .map(|t| {
            let th = threshold(null_of(t.stat), opts.size, t.side)?;
            Ok(ThresholdEntry {
                test: *t,
                lower: th.lower,
                upper: th.upper,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let stats: Vec<Statistic> = opts.tests.iter().map(|t| t.stat).collect();
    let c = split_constants();
    let pairs: Vec<(usize, usize)> = (0..panel.k())
        .flat_map(|i| (i + 1..panel.k()).map(move |j| (i, j)))
        .collect();
    let bonf = opts.bonferroni_size();
    let outcomes: Vec<std::result::Result<PairReport, PairFailure>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let names = (panel.names[i].clone(), panel.names[j].clone());
            let fail = |error: String| PairFailure {
                pair: names.clone(),
                error,
            };
            let sample = BivariateSample::new(panel.columns[i].clone(), panel.columns[j].clone())
                .map_err(|e| fail(e.to_string()))?;
            let values = evaluate_many(&stats, &sample, c);
            let mut results = Vec::with_capacity(stats.len());
            for (t, v) in opts.tests.iter().zip(values) {
                let v = v.map_err(|e| fail(format!("{}: {e}", t.stat)))?;
                let p = p_value(null_of(t.stat), v, t.side);
                results.push(PairStat {
                    test: *t,
                    value: v,
                    p_value: p,
                    reject: p <= opts.size,
                    reject_bonferroni: p <= bonf,
                });
            }
            Ok(PairReport {
                pair: names.clone(),
                results,
            })
        })
        .collect();
    let mut reports = Vec::new();
    let mut failed = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => reports.push(r),
            Err(f) => failed.push(f),
        }
    }
    let rejection_percent = opts
        .tests
        .iter()
        .enumerate()
        .map(|(ti, t)| {
            let rej = reports.iter().filter(|r| r.results[ti].reject).count();
            let rej_b = reports.iter().filter(|r| r.results[ti].reject_bonferroni).count();
            RejectionSummary {
                test: *t,
                rejections: rej,
                rejections_bonferroni: rej_b,
                pairs: reports.len(),
                percent: if reports.is_empty() {
                    0.0
                } else {
                    100.0 * rej as f64 / reports.len() as f64
                },
            }
        })
        .collect();
    Ok(AnalysisReport {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: opts.seed,
        config_sha256: opts.digest(),
        n,
        columns: panel.names.clone(),
        size: opts.size,
        bonferroni_size: bonf,
        null_replications: opts.null_replications,
        thresholds,
        pairs: reports,
        failed_pairs: failed,
        rejection_percent,
    })
}

/// Correlation matrix of one benchmark band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub label: String,
    pub lower_quantile: f64,
    pub upper_quantile: f64,
    pub matrix: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandMatrices {
    pub tool_version: String,
    pub columns: Vec<String>,
    pub loading: Vec<f64>,
    pub n: usize,
    pub bands: Vec<Band>,
}

impl BandMatrices {
    /// Mean off-diagonal entry of band `i`.
    pub fn mean_off_diagonal(&self, i: usize) -> f64 {
        let m = &self.bands[i].matrix;
        let k = m.len();
        let s: f64 = (0..k).flat_map(|a| (0..k).filter(move |&b| b != a).map(move |b| m[a][b])).sum();
        s / (k * (k - 1)) as f64
    }
}

/// Conditional correlation matrices on the three benchmark bands, labelled
/// `A1` (lower tail), `A2` (middle) and `A3` (upper tail).
pub fn band_matrices(panel: &ReturnPanel, loading: &[f64]) -> Result<BandMatrices> {
    let q = split_constants().q_tilde;
    let mats = conditional_corr_matrices(&panel.columns, loading)?;
    let limits = [(0.0, q), (q, 1.0 - q), (1.0 - q, 1.0)];
    Ok(BandMatrices {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        columns: panel.names.clone(),
        loading: loading.to_vec(),
        n: panel.n(),
        bands: mats
            .into_iter()
            .zip(limits)
            .enumerate()
            .map(|(i, (matrix, (a, b)))| Band {
                label: format!("A{}", i + 1),
                lower_quantile: a,
                upper_quantile: b,
                matrix,
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn misaligned_date_dropped() {
        let text = "date,a,b\n2020-01-02,1,2\n2020-01-03,,3\n2020-01-06,4,5\n";
        let p = parse_prices(text, "t").unwrap();
        assert_eq!(p.rows(), 2);
        let a = parse_prices("date,a\n2020-01-02,1\n2020-01-03,2\n2020-01-06,3\n", "a").unwrap();
        let b = parse_prices("date,b\n2020-01-02,1\n2020-01-05,2\n2020-01-06,3\n", "b").unwrap();
        let j = join_panels(vec![a, b]).unwrap();
        assert_eq!(j.rows(), 2);
        assert_eq!(j.columns[1], vec![1.0, 3.0]);
    }

    #[test]
    fn strict_parsing() {
        let e = parse_prices("date,a\n2020-01-02,\"1,234.5\"\n", "f.csv").unwrap_err();
        match e {
            Error::Parse { location, .. } => assert_eq!(location, "f.csv: line 2, column 'a'"),
            other => panic!("{other}"),
        }
        assert!(parse_prices("date,a\n2020-01-02,1,234.5\n", "f").is_err());
        assert!(parse_prices("date,a\n2020-01-02,1\n2020-01-02,2\n", "f").is_err());
        assert!(parse_prices("date,a\n02/01/2020,1\n", "f").is_err());
        assert!(parse_prices("day,a\n2020-01-02,1\n", "f").is_err());
        assert!(parse_prices("date,a,a\n2020-01-02,1,1\n", "f").is_err());
    }

    #[test]
    fn returns_basic() {
        let p = PricePanel {
            dates: vec![NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(), NaiveDate::from_ymd_opt(2020, 1, 2).unwrap()],
            names: vec!["x".into(), "y".into()],
            columns: vec![vec![100.0, 110.0], vec![5.0, 5.0]],
        };
        let r = log_returns(&p).unwrap();
        assert_eq!(r.columns[0][0], 1.1f64.ln());
        assert_eq!(r.columns[1][0], 0.0);
        let mut bad = p.clone();
        bad.columns[1][0] = 0.0;
        assert!(log_returns(&bad).is_err());
    }

    #[test]
    fn ranks_with_ties() {
        assert_eq!(average_ranks(&[5.0, 1.0, 9.0]), vec![2.0, 1.0, 3.0]);
        assert_eq!(average_ranks(&[2.0, 1.0, 2.0, 3.0]), vec![2.5, 1.0, 2.5, 4.0]);
    }

    #[test]
    fn gaussianize_small_example_and_guards() {
        let names = vec!["a".to_string()];
        let g = gaussianize_columns(&[vec![5.0, 1.0, 9.0]], &names);
        assert!(g.is_err());
        let col: Vec<f64> = (0..25).map(|i| ((i * 7) % 25) as f64).collect();
        let g = gaussianize_columns(&[col.clone()], &names).unwrap();
        assert_eq!(average_ranks(&g[0]), average_ranks(&col));
        assert_eq!(gaussianize_columns(&g, &names).unwrap(), g);
        assert!(gaussianize_columns(&[vec![1.0; 30]], &names).is_err());
    }
}
