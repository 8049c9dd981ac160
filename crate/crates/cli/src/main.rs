use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

/// Goodness-of-fit tests for Gaussian dependence based on conditional
/// covariances on benchmark quantile bands.
#[derive(Debug, Parser)]
#[command(name = "ccgof", version, about)]
struct Cli {
    /// Worker threads (default: all available cores). Results do not depend
    /// on this setting.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the split constants and internal consistency checks as JSON.
    Constants(ConstantsArgs),
    /// Test one bivariate sample.
    Test(TestArgs),
    /// Run a power / size sweep from a TOML or JSON config.
    Power(PowerArgs),
    /// Pairwise analysis of a multi-asset price file.
    Analyze(AnalyzeArgs),
    /// Simulate a null distribution and optionally its kernel density.
    Nulldist(NulldistArgs),
    /// Write a synthetic 2528x6 price fixture.
    #[command(hide = true)]
    GenFixture(GenFixtureArgs),
}

#[derive(Debug, Args)]
struct ConstantsArgs {
    /// Absolute tolerance of the consistency checks.
    #[arg(long, default_value_t = 1e-10)]
    tolerance: f64,
    /// Add DELTA to constant NAME before checking (testing hook).
    #[arg(long, value_name = "NAME=DELTA", hide = true)]
    perturb: Vec<String>,
}

#[derive(Debug, Args)]
struct SeedArg {
    /// Master seed; generated and echoed when omitted.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct TestArgs {
    /// CSV with a header. A leading `date` column marks a price file, which
    /// is turned into Gaussianized log returns.
    #[arg(long)]
    input: PathBuf,
    /// Two column names, `a,b` (default: the first two data columns).
    #[arg(long, value_delimiter = ',', num_args = 1..=2)]
    columns: Option<Vec<String>>,
    /// Statistic: T, L, R, T~, L~, R~, BHEP, AD, CM or MS.
    #[arg(long, default_value = "T")]
    stat: String,
    /// Rejection side: two_sided, left or right (default depends on stat).
    #[arg(long)]
    side: Option<String>,
    #[arg(long, default_value_t = 0.05)]
    size: f64,
    /// Null replications.
    #[arg(long = "null-reps", default_value_t = 20_000)]
    null_reps: usize,
    /// Use only the first N observations.
    #[arg(long)]
    limit: Option<usize>,
    /// Gaussianize the margins of an undated table as well.
    #[arg(long)]
    gaussianize: bool,
    /// Null-distribution cache directory.
    #[arg(long)]
    cache: Option<PathBuf>,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Debug, Args)]
struct PowerArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output CSV (default: stdout). Metadata goes to `<out>.meta.json`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory holding per-group results and completion markers.
    #[arg(long)]
    state_dir: Option<PathBuf>,
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Print the cell grid without simulating.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// One or more price CSV files, inner-joined on dates.
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Comma-separated tests `NAME[:side]` (default: all ten).
    #[arg(long, value_delimiter = ',')]
    stats: Option<Vec<String>>,
    #[arg(long, default_value_t = 0.05)]
    size: f64,
    #[arg(long = "null-reps", default_value_t = 20_000)]
    null_reps: usize,
    /// Comma-separated loading vector for the band matrices (default: ones).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    loading: Option<Vec<f64>>,
    #[arg(long)]
    cache: Option<PathBuf>,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Debug, Args)]
struct NulldistArgs {
    #[arg(long)]
    stat: String,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 20_000)]
    reps: usize,
    /// Values CSV (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write a kernel density curve to this CSV.
    #[arg(long)]
    kde: Option<PathBuf>,
    #[arg(long, default_value_t = 512)]
    kde_points: usize,
    #[arg(long)]
    cache: Option<PathBuf>,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Debug, Args)]
struct GenFixtureArgs {
    /// `gaussian` or `t<nu>` (e.g. `t3`).
    #[arg(long)]
    kind: String,
    #[arg(long, default_value_t = 2528)]
    rows: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: cannot configure {t} threads: {e}");
            return ExitCode::from(commands::EXIT_USAGE);
        }
    }
    let res = match cli.command {
        Command::Constants(a) => commands::constants(a),
        Command::Test(a) => commands::test(a),
        Command::Power(a) => commands::power(a),
        Command::Analyze(a) => commands::analyze(a),
        Command::Nulldist(a) => commands::nulldist(a),
        Command::GenFixture(a) => commands::gen_fixture(a),
    };
    match res {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
