//! On-disk cache of simulated null distributions.
//!
//! File layout: `null_<stat>_<n>_<N>_<seed>.bin`, an 8-byte magic header
//! followed by the sorted values as little-endian `f64`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::monte_carlo::{simulate_nulls, NullDistribution, Statistic};

pub const CACHE_MAGIC: &[u8; 8] = b"CCGOFNL1";

/// Null-distribution store. Without a directory every request simulates.
#[derive(Debug, Clone, Default)]
pub struct NullCache {
    dir: Option<PathBuf>,
}

impl NullCache {
    pub fn in_memory() -> Self {
        NullCache { dir: None }
    }

    pub fn at(dir: impl Into<PathBuf>) -> Self {
        NullCache {
            dir: Some(dir.into()),
        }
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn path_for(dir: &Path, stat: Statistic, n: usize, reps: usize, seed: u64) -> PathBuf {
        dir.join(format!("null_{}_{n}_{reps}_{seed}.bin", stat.slug()))
    }

    /// Returns the null distributions for `stats`, reading cached files and
    /// simulating (on common samples) only the missing ones.
    pub fn get(&self, stats: &[Statistic], n: usize, reps: usize, seed: u64) -> Result<Vec<NullDistribution>> {
        let Some(dir) = &self.dir else {
            return simulate_nulls(stats, n, reps, seed);
        };
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut out: Vec<Option<NullDistribution>> = Vec::with_capacity(stats.len());
        let mut missing = Vec::new();
        for &s in stats {
            let p = Self::path_for(dir, s, n, reps, seed);
            if p.exists() {
                out.push(Some(read_null(&p, s, n, reps, seed)?));
            } else {
                out.push(None);
                missing.push(s);
            }
        }
        if !missing.is_empty() {
            let fresh = simulate_nulls(&missing, n, reps, seed)?;
            for d in fresh {
                write_null(&Self::path_for(dir, d.stat, n, reps, seed), &d)?;
                let slot = stats.iter().position(|&s| s == d.stat).expect("requested");
                out[slot] = Some(d);
            }
        }
        Ok(out.into_iter().map(|d| d.expect("filled above")).collect())
    }
}

fn read_null(path: &Path, stat: Statistic, n: usize, reps: usize, seed: u64) -> Result<NullDistribution> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::Parse {
        location: path.display().to_string(),
        message: msg.to_string(),
    };
    let body = bytes
        .strip_prefix(CACHE_MAGIC.as_slice())
        .ok_or_else(|| bad("missing cache header"))?;
    if body.len() % 8 != 0 {
        return Err(bad("truncated cache file"));
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    if values.windows(2).any(|w| w[0] > w[1]) || values.iter().any(|v| !v.is_finite()) {
        return Err(bad("cached values are not sorted finite numbers"));
    }
    Ok(NullDistribution {
        stat,
        n,
        replications: reps,
        master_seed: seed,
        failures: reps.saturating_sub(values.len()),
        generated_unix_secs: 0,
        values,
    })
}

/// Writes through a temporary file and links it into place without
/// overwriting; a concurrent writer producing the same key wins harmlessly
/// because the contents are identical.
fn write_null(path: &Path, d: &NullDistribution) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    let mut buf = Vec::with_capacity(8 + 8 * d.values.len());
    buf.extend_from_slice(CACHE_MAGIC);
    for v in &d.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    tmp.write_all(&buf).map_err(|e| Error::io(path, e))?;
    match tmp.persist_noclobber(path) {
        Ok(_) => Ok(()),
        Err(e) if e.error.kind() == std::io::ErrorKind::AlreadyExists => Ok(()),
        Err(e) => Err(Error::io(path, e.error)),
    }
}
