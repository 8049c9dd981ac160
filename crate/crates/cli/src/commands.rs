use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ccgof::constants::{compute_constants, printed_c1_formulas, residual_checks, SplitConstants};
use ccgof::monte_carlo::{
    config_digest, evaluate, kde, linspace, p_value, run_experiment, silverman_bandwidth, threshold,
    ExperimentConfig, Statistic, TestSpec,
};
use ccgof::pipeline::{
    band_matrices, gaussianize, load_prices, log_returns, metals_fixture, parse_prices, parse_table,
    pairwise_report, AnalysisOptions, FixtureKind, NullCache, ReturnPanel,
};
use ccgof::{split_constants, BivariateSample, Error, Result};
use serde::Serialize;
use serde_json::json;

use crate::{AnalyzeArgs, ConstantsArgs, GenFixtureArgs, NulldistArgs, PowerArgs, SeedArg, TestArgs};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CHECK_FAILED: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_PARSE: u8 = 4;
pub const EXIT_DEGENERATE: u8 = 5;

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Serialization(_) => EXIT_IO,
        Error::Parse { .. } => EXIT_PARSE,
        Error::Domain(_) | Error::InvalidParameter(_) => EXIT_USAGE,
        Error::Degenerate(_)
        | Error::NonPositiveNormaliser { .. }
        | Error::SubsampleTooSmall { .. }
        | Error::TooManyFailures { .. } => EXIT_DEGENERATE,
        _ => EXIT_CHECK_FAILED,
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn resolve_seed(s: &SeedArg) -> u64 {
    s.seed.unwrap_or_else(|| {
        let seed = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_nanos() as u64)
            .unwrap_or(0);
        eprintln!("seed: {seed}");
        seed
    })
}

fn cache_of(dir: &Option<PathBuf>) -> NullCache {
    dir.as_ref().map(NullCache::at).unwrap_or_default()
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn write_out(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => fs::write(p, bytes).map_err(io_err(p)),
        None => std::io::stdout()
            .write_all(bytes)
            .map_err(io_err(Path::new("<stdout>"))),
    }
}

fn artifact_header(seed: u64, digest: &str) -> String {
    format!(
        "# ccgof {}\n# seed={seed}\n# config_sha256={digest}\n",
        env!("CARGO_PKG_VERSION")
    )
}

pub fn constants(a: ConstantsArgs) -> Result<u8> {
    let mut c = compute_constants()?;
    for p in &a.perturb {
        c = perturb(c, p)?;
    }
    let checks = residual_checks(&c, a.tolerance);
    let pass = checks.iter().all(|r| r.pass);
    let (pc1, pc1_t) = printed_c1_formulas(c.q_tilde)?;
    let out = json!({
        "tool_version": env!("CARGO_PKG_VERSION"),
        "constants": c,
        "checks": checks,
        "all_checks_pass": pass,
        "rounded_split": SplitConstants::at_split(0.19808)?,
        "printed_c1_formula": { "c1": pc1, "c1_t": pc1_t },
    });
    write_out(None, to_json(&out).as_bytes())?;
    Ok(if pass { EXIT_OK } else { EXIT_CHECK_FAILED })
}

fn perturb(c: SplitConstants, spec: &str) -> Result<SplitConstants> {
    let bad = || Error::InvalidParameter(format!("--perturb expects NAME=DELTA, got '{spec}'"));
    let (name, delta) = spec.split_once('=').ok_or_else(bad)?;
    let delta: f64 = delta.parse().map_err(|_| bad())?;
    let mut v = serde_json::to_value(c).expect("serializable");
    let field = v
        .get_mut(name)
        .and_then(|f| f.as_f64().map(|x| (f, x)))
        .ok_or_else(|| Error::InvalidParameter(format!("unknown constant '{name}'")))?;
    *field.0 = json!(field.1 + delta);
    Ok(serde_json::from_value(v).expect("same shape"))
}

fn is_price_file(text: &str) -> bool {
    text.lines()
        .find(|l| !l.trim_start().starts_with('#') && !l.trim().is_empty())
        .and_then(|l| l.split(',').next())
        .is_some_and(|f| f.trim().eq_ignore_ascii_case("date"))
}

fn load_observations(path: &Path, limit: Option<usize>, gauss_table: bool) -> Result<ReturnPanel> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let src = path.display().to_string();
    let mut panel = if is_price_file(&text) {
        log_returns(&parse_prices(&text, &src)?)?
    } else {
        parse_table(&text, &src)?
    };
    if let Some(m) = limit {
        panel.truncate(m);
    }
    if is_price_file(&text) || gauss_table {
        panel = gaussianize(&panel)?;
    }
    Ok(panel)
}

pub fn test(a: TestArgs) -> Result<u8> {
    let seed = resolve_seed(&a.seed);
    let stat: Statistic = a.stat.parse()?;
    let side = match &a.side {
        Some(s) => s.parse()?,
        None => stat.default_side(),
    };
    let panel = load_observations(&a.input, a.limit, a.gaussianize)?;
    let pick = |name: &str| {
        panel
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::InvalidParameter(format!("no column '{name}' in {}", a.input.display())))
    };
    let (i, j) = match &a.columns {
        Some(c) if c.len() == 2 => (pick(&c[0])?, pick(&c[1])?),
        Some(c) => {
            return Err(Error::InvalidParameter(format!(
                "--columns needs exactly two names, got {}",
                c.len()
            )))
        }
        None if panel.k() >= 2 => (0, 1),
        None => return Err(Error::InvalidParameter("input needs at least two columns".into())),
    };
    let sample = BivariateSample::new(panel.columns[i].clone(), panel.columns[j].clone())?;
    let value = evaluate(stat, &sample, split_constants())?;
    let dist = cache_of(&a.cache).get(&[stat], sample.n(), a.null_reps, seed)?.remove(0);
    let th = threshold(&dist, a.size, side)?;
    let p = p_value(&dist, value, side);
    let out = json!({
        "tool_version": env!("CARGO_PKG_VERSION"),
        "seed": seed,
        "input": a.input.display().to_string(),
        "columns": [panel.names[i], panel.names[j]],
        "n": sample.n(),
        "test": TestSpec { stat, side },
        "value": value,
        "size": a.size,
        "null_replications": a.null_reps,
        "null_failures": dist.failures,
        "threshold": { "lower": th.lower, "upper": th.upper },
        "p_value": p,
        "reject": th.rejects(value),
    });
    write_out(None, to_json(&out).as_bytes())?;
    Ok(EXIT_OK)
}

pub fn power(a: PowerArgs) -> Result<u8> {
    let cfg = ExperimentConfig::from_path(&a.config)?;
    if a.dry_run {
        let mut buf = artifact_header(cfg.seed, &cfg.digest()).into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            let cerr = |e: csv::Error| Error::Serialization(e.to_string());
            w.write_record(["copula", "n", "replications", "null_replications", "test", "size"])
                .map_err(cerr)?;
            for (ci, n) in cfg.groups() {
                for t in &cfg.stats {
                    w.write_record([
                        cfg.copulas[ci].label(),
                        n.to_string(),
                        cfg.replications.to_string(),
                        cfg.null_reps().to_string(),
                        t.to_string(),
                        cfg.size.to_string(),
                    ])
                    .map_err(cerr)?;
                }
            }
            w.flush().map_err(io_err(Path::new("<buffer>")))?;
        }
        write_out(None, &buf)?;
        return Ok(EXIT_OK);
    }
    let cache = cache_of(&a.cache);
    let nulls = |s: &[Statistic], n: usize, r: usize, seed: u64| cache.get(s, n, r, seed);
    let start = Instant::now();
    let out = run_experiment(&cfg, a.state_dir.as_deref(), Some(&nulls))?;
    let elapsed = start.elapsed().as_secs_f64();
    let mut csv = Vec::new();
    out.write_csv(&mut csv)?;
    write_out(a.out.as_deref(), &csv)?;
    if let Some(p) = &a.out {
        let meta = json!({
            "tool_version": env!("CARGO_PKG_VERSION"),
            "seed": cfg.seed,
            "config_sha256": cfg.digest(),
            "groups": out.groups.len(),
            "failed_groups": out.failed_groups(),
            "resumed_groups": out.resumed,
            "elapsed_secs": elapsed,
        });
        let mp = PathBuf::from(format!("{}.meta.json", p.display()));
        fs::write(&mp, to_json(&meta)).map_err(io_err(&mp))?;
    }
    for g in out.groups.iter().filter(|g| g.error.is_some()) {
        eprintln!(
            "group {} n={} failed: {}",
            g.copula.label(),
            g.n,
            g.error.as_deref().unwrap_or_default()
        );
    }
    Ok(if out.failed_groups() == 0 { EXIT_OK } else { EXIT_CHECK_FAILED })
}

pub fn analyze(a: AnalyzeArgs) -> Result<u8> {
    let seed = resolve_seed(&a.seed);
    let tests = match &a.stats {
        Some(list) => list.iter().map(|s| s.parse()).collect::<Result<Vec<TestSpec>>>()?,
        None => Statistic::ALL.into_iter().map(TestSpec::new).collect(),
    };
    let opts = AnalysisOptions {
        tests,
        size: a.size,
        null_replications: a.null_reps,
        seed,
    };
    let paths: Vec<&Path> = a.input.iter().map(PathBuf::as_path).collect();
    let returns = log_returns(&load_prices(&paths)?)?;
    let panel = gaussianize(&returns)?;
    let report = pairwise_report(&panel, &opts, &cache_of(&a.cache))?;
    let loading = a.loading.clone().unwrap_or_else(|| vec![1.0; panel.k()]);
    let bands = band_matrices(&panel, &loading)?;
    fs::create_dir_all(&a.out_dir).map_err(io_err(&a.out_dir))?;
    let rp = a.out_dir.join("report.json");
    fs::write(&rp, to_json(&report)).map_err(io_err(&rp))?;
    let bp = a.out_dir.join("bands.json");
    fs::write(&bp, to_json(&bands)).map_err(io_err(&bp))?;

    let mut s = String::from("test,rejections,pairs,percent\n");
    for r in &report.rejection_percent {
        s.push_str(&format!("{},{},{},{:.1}\n", r.test, r.rejections, r.pairs, r.percent));
    }
    write_out(None, s.as_bytes())?;
    for f in &report.failed_pairs {
        eprintln!("pair {}/{} skipped: {}", f.pair.0, f.pair.1, f.error);
    }
    Ok(EXIT_OK)
}

pub fn nulldist(a: NulldistArgs) -> Result<u8> {
    let seed = resolve_seed(&a.seed);
    let stat: Statistic = a.stat.parse()?;
    let d = cache_of(&a.cache).get(&[stat], a.n, a.reps, seed)?.remove(0);
    let digest = config_digest(&json!({ "stat": stat, "n": a.n, "reps": a.reps }));
    let mut s = artifact_header(seed, &digest);
    s.push_str("value\n");
    for v in &d.values {
        s.push_str(&format!("{v}\n"));
    }
    write_out(a.out.as_deref(), s.as_bytes())?;
    if let Some(p) = &a.kde {
        let h = silverman_bandwidth(&d.values);
        let lo = d.values[0] - 3.0 * h;
        let hi = d.values[d.values.len() - 1] + 3.0 * h;
        let curve = kde(&d.values, &linspace(lo, hi, a.kde_points.max(2)))?;
        let mut k = artifact_header(seed, &digest);
        k.push_str("x,density\n");
        for (x, y) in curve {
            k.push_str(&format!("{x},{y}\n"));
        }
        fs::write(p, k).map_err(io_err(p))?;
    }
    if d.failures > 0 {
        eprintln!("{} of {} replications failed", d.failures, d.replications);
    }
    Ok(EXIT_OK)
}

pub fn gen_fixture(a: GenFixtureArgs) -> Result<u8> {
    let kind = match a.kind.as_str() {
        "gaussian" => FixtureKind::Gaussian,
        k => match k.strip_prefix('t').and_then(|v| v.parse().ok()) {
            Some(nu) => FixtureKind::StudentT { nu },
            None => return Err(Error::InvalidParameter(format!("unknown fixture kind '{k}'"))),
        },
    };
    let mut panel = metals_fixture(kind, a.seed);
    panel.dates.truncate(a.rows);
    for c in &mut panel.columns {
        c.truncate(a.rows);
    }
    let mut buf = Vec::new();
    panel.write_csv(&mut buf)?;
    fs::write(&a.out, buf).map_err(io_err(&a.out))?;
    Ok(EXIT_OK)
}
