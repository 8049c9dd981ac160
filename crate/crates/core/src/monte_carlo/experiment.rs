//! Power/size sweeps driven by a TOML or JSON configuration file, with
//! per-group completion markers so interrupted runs can resume.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{power_cells, simulate_nulls, threshold, NullDistribution, PowerCell, Statistic, Threshold};
use crate::copulas::CopulaSpec;
use crate::error::{Error, Result};
use crate::test_statistics::RejectionSide;

/// A statistic together with its rejection side, written `NAME[:side]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TestSpec {
    pub stat: Statistic,
    pub side: RejectionSide,
}

impl TestSpec {
    pub fn new(stat: Statistic) -> Self {
        TestSpec {
            stat,
            side: stat.default_side(),
        }
    }
}

fn side_name(side: RejectionSide) -> &'static str {
    match side {
        RejectionSide::TwoSided => "two_sided",
        RejectionSide::Left => "left",
        RejectionSide::Right => "right",
        RejectionSide::Symmetric => "symmetric",
    }
}

impl fmt::Display for TestSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.stat, side_name(self.side))
    }
}

impl FromStr for TestSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            Some((st, side)) => Ok(TestSpec {
                stat: st.parse()?,
                side: side.parse()?,
            }),
            None => Ok(TestSpec::new(s.parse()?)),
        }
    }
}

impl Serialize for TestSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TestSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

fn default_size() -> f64 {
    0.05
}

/// Sweep definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_size")]
    pub size: f64,
    /// Replications per power cell.
    pub replications: usize,
    /// Replications for the null distributions; defaults to `replications`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub null_replications: Option<usize>,
    pub n: Vec<usize>,
    pub stats: Vec<TestSpec>,
    pub copulas: Vec<CopulaSpec>,
}

impl ExperimentConfig {
    /// Parses TOML, falling back to JSON.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = match toml::from_str(text) {
            Ok(c) => c,
            Err(te) => serde_json::from_str(text).map_err(|je| Error::Parse {
                location: "config".into(),
                message: format!("not valid TOML ({}) or JSON ({je})", te.message()),
            })?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::Parse {
                location: path.display().to_string(),
                message,
            },
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.size > 0.0 && self.size < 1.0) {
            return Err(Error::param(format!("size must lie in (0, 1), got {}", self.size)));
        }
        if self.replications == 0 {
            return Err(Error::param("replications must be positive"));
        }
        if self.n.is_empty() || self.stats.is_empty() || self.copulas.is_empty() {
            return Err(Error::param("config needs non-empty n, stats and copulas lists"));
        }
        for c in &self.copulas {
            c.validate()?;
        }
        Ok(())
    }

    pub fn null_reps(&self) -> usize {
        self.null_replications.unwrap_or(self.replications)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        super::config_digest(self)
    }

    /// `(copula index, n)` groups in output order.
    pub fn groups(&self) -> Vec<(usize, usize)> {
        (0..self.copulas.len())
            .flat_map(|c| self.n.iter().map(move |&n| (c, n)))
            .collect()
    }
}

/// Result of one `(copula, n)` group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellOutcome {
    pub copula: CopulaSpec,
    pub n: usize,
    pub cells: Vec<PowerCell>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub config: ExperimentConfig,
    pub groups: Vec<CellOutcome>,
    /// Groups loaded from completion markers rather than simulated.
    pub resumed: usize,
}

impl ExperimentOutput {
    pub fn failed_groups(&self) -> usize {
        self.groups.iter().filter(|g| g.error.is_some()).count()
    }

    /// CSV table, one row per test and group, preceded by `#` comment lines
    /// with the tool version, seed and config digest.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let ser = |e: std::io::Error| Error::Serialization(e.to_string());
        writeln!(w, "# ccgof {}", env!("CARGO_PKG_VERSION")).map_err(ser)?;
        writeln!(w, "# seed={}", self.config.seed).map_err(ser)?;
        writeln!(w, "# config_sha256={}", self.config.digest()).map_err(ser)?;
        let mut csv = csv::Writer::from_writer(w);
        let cerr = |e: csv::Error| Error::Serialization(e.to_string());
        csv.write_record([
            "copula", "n", "replications", "stat", "side", "size", "rejections", "failures",
            "rejection_rate", "mc_stderr", "status",
        ])
        .map_err(cerr)?;
        for g in &self.groups {
            if let Some(err) = &g.error {
                for t in &self.config.stats {
                    csv.write_record([
                        g.copula.label(),
                        g.n.to_string(),
                        self.config.replications.to_string(),
                        t.stat.to_string(),
                        side_name(t.side).to_string(),
                        self.config.size.to_string(),
                        String::new(),
                        String::new(),
                        "NaN".into(),
                        "NaN".into(),
                        format!("failed: {err}"),
                    ])
                    .map_err(cerr)?;
                }
                continue;
            }
            for c in &g.cells {
                csv.write_record([
                    c.copula.label(),
                    c.n.to_string(),
                    c.replications.to_string(),
                    c.stat.to_string(),
                    side_name(c.side).to_string(),
                    c.size.to_string(),
                    c.rejections.to_string(),
                    c.failures.to_string(),
                    format!("{:.6}", c.rejection_rate),
                    format!("{:.6}", c.mc_stderr),
                    "ok".into(),
                ])
                .map_err(cerr)?;
            }
        }
        csv.flush().map_err(ser)?;
        Ok(())
    }
}

type NullSource<'a> = dyn Fn(&[Statistic], usize, usize, u64) -> Result<Vec<NullDistribution>> + Sync + 'a;

fn group_path(dir: &Path, copula: usize, n: usize) -> (PathBuf, PathBuf) {
    let stem = format!("group_{copula:03}_n{n}");
    (dir.join(format!("{stem}.json")), dir.join(format!("{stem}.done")))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn thresholds_for(
    cfg: &ExperimentConfig,
    n: usize,
    nulls: &NullSource<'_>,
) -> Result<Vec<(Statistic, Threshold)>> {
    let mut stats: Vec<Statistic> = cfg.stats.iter().map(|t| t.stat).collect();
    stats.sort();
    stats.dedup();
    let dists = nulls(&stats, n, cfg.null_reps(), cfg.seed)?;
    cfg.stats
        .iter()
        .map(|t| {
            let d = dists.iter().find(|d| d.stat == t.stat).expect("requested above");
            Ok((t.stat, threshold(d, cfg.size, t.side)?))
        })
        .collect()
}

/// Runs every `(copula, n)` group. Thresholds come from the independent
/// Gaussian null at each `n` (seeded with the config seed); Gaussian entries
/// in the copula list therefore estimate the type I error.
///
/// With `state_dir`, each finished group is stored next to a `.done` marker
/// and skipped on the next run. A failed group is reported and the run
/// continues.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    state_dir: Option<&Path>,
    nulls: Option<&NullSource<'_>>,
) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let default_nulls = |s: &[Statistic], n: usize, reps: usize, seed: u64| simulate_nulls(s, n, reps, seed);
    let nulls: &NullSource<'_> = nulls.unwrap_or(&default_nulls);
    if let Some(d) = state_dir {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut thresholds: Vec<(usize, std::result::Result<Vec<(Statistic, Threshold)>, String>)> = Vec::new();
    let mut groups = Vec::new();
    let mut resumed = 0;
    for (ci, n) in cfg.groups() {
        let copula = cfg.copulas[ci];
        if let Some(d) = state_dir {
            let (data, done) = group_path(d, ci, n);
            if done.exists() {
                let text = std::fs::read_to_string(&data).map_err(|e| Error::io(&data, e))?;
                let g: CellOutcome = serde_json::from_str(&text).map_err(|e| Error::Parse {
                    location: data.display().to_string(),
                    message: e.to_string(),
                })?;
                groups.push(g);
                resumed += 1;
                continue;
            }
        }
        if !thresholds.iter().any(|(m, _)| *m == n) {
            thresholds.push((n, thresholds_for(cfg, n, nulls).map_err(|e| e.to_string())));
        }
        let thr = &thresholds.iter().find(|(m, _)| *m == n).expect("inserted above").1;
        let result = thr
            .clone()
            .and_then(|t| power_cells(&t, &copula, n, cfg.replications, cfg.seed).map_err(|e| e.to_string()));
        let outcome = match result {
            Ok(cells) => CellOutcome {
                copula,
                n,
                cells,
                error: None,
            },
            Err(e) => CellOutcome {
                copula,
                n,
                cells: Vec::new(),
                error: Some(e),
            },
        };
        if let (Some(d), None) = (state_dir, &outcome.error) {
            let (data, done) = group_path(d, ci, n);
            let js = serde_json::to_vec_pretty(&outcome).map_err(|e| Error::Serialization(e.to_string()))?;
            write_atomic(&data, &js)?;
            write_atomic(&done, cfg.digest().as_bytes())?;
        }
        groups.push(outcome);
    }
    Ok(ExperimentOutput {
        config: cfg.clone(),
        groups,
        resumed,
    })
}
