//! `hknn` — pipeline driver for the kNN-MT retrieval engine.
//!
//! Subcommands: `gen` (synthetic corpus), `build` (store binaries),
//! `cluster` (type cluster store), `translate` (decode a test set),
//! `bench` (timing/space sweep), `ablate` (five-strategy comparison).
//!
//! Exit codes: 0 success, 2 missing input or bad usage, 3 format error,
//! 4 benchmark threshold violation.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};

use config::ConfigFile;

#[derive(Parser)]
#[command(
    name = "hknn",
    version,
    about = "Hierarchical kNN-MT retrieval pipeline"
)]
struct Cli {
    /// Line-oriented key=value config file; flags take precedence
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Cap worker threads for parallel build phases (0 = automatic)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Increase log verbosity (-v info, -vv debug)
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic parallel corpus with gold alignments
    Gen(GenArgs),
    /// Build a datastore binary of one flavor
    Build(BuildArgs),
    /// Fit per-type k-means clusters and persist the cluster store
    Cluster(ClusterArgs),
    /// Translate a test set and report token accuracy against references
    Translate(TranslateArgs),
    /// Run the timing/space sweep and emit a report
    Bench(BenchArgs),
    /// Compare accuracy and speed across all five strategies
    Ablate(AblateArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Output corpus file
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    src_vocab: Option<usize>,
    #[arg(long)]
    tgt_vocab: Option<usize>,
    /// Probability that a target token deviates from the dictionary image
    #[arg(long)]
    noise: Option<f64>,
    /// Zipf exponent of the source token distribution
    #[arg(long)]
    zipf: Option<f64>,
}

#[derive(Args)]
struct BuildArgs {
    /// Training corpus file
    #[arg(long)]
    corpus: PathBuf,
    /// Output store binary
    #[arg(long)]
    out: PathBuf,
    /// Store flavor: vanilla, fast or faster
    #[arg(long, default_value = "vanilla")]
    flavor: String,
    /// Test corpus (required for the per-sentence fast/faster flavors)
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    c: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    freq_threshold: Option<usize>,
    #[arg(long)]
    nlist: Option<usize>,
    #[arg(long)]
    nprobe: Option<usize>,
    /// Compress vanilla keys with product quantization
    #[arg(long)]
    pq: bool,
    #[arg(long)]
    pq_m: Option<usize>,
    #[arg(long)]
    pq_ksub: Option<usize>,
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Cluster divisor: each type gets max(1, floor(freq / m)) clusters
    #[arg(long)]
    m: Option<usize>,
}

#[derive(Args)]
struct TranslateArgs {
    /// Training corpus file
    #[arg(long)]
    corpus: PathBuf,
    /// Test corpus file (references included)
    #[arg(long)]
    test: PathBuf,
    /// Hypotheses output file
    #[arg(long)]
    out: Option<PathBuf>,
    /// vanilla, fast, faster, fast_with_faster_source or faster_no_cache
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    temp: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    c: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    /// Load a prebuilt cluster store instead of fitting one
    #[arg(long)]
    clusters: Option<PathBuf>,
    #[arg(long)]
    beam: Option<usize>,
    /// Decode step cap (default: source length + 4)
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    freq_threshold: Option<usize>,
    #[arg(long)]
    nlist: Option<usize>,
    #[arg(long)]
    nprobe: Option<usize>,
    /// Memory-constrained vanilla mode: compress the store with product
    /// quantization and search asymmetric distances
    #[arg(long)]
    pq: bool,
    #[arg(long)]
    pq_m: Option<usize>,
    #[arg(long)]
    pq_ksub: Option<usize>,
}

#[derive(Args)]
struct BenchArgs {
    /// Report output file
    #[arg(long)]
    out: Option<PathBuf>,
    /// csv or json
    #[arg(long)]
    format: Option<String>,
    /// Datastore sizes to sweep (total target tokens), comma separated
    #[arg(long)]
    sizes: Option<String>,
    #[arg(long)]
    c_sweep: Option<String>,
    #[arg(long)]
    n_sweep: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    sentences: Option<usize>,
    #[arg(long)]
    src_vocab: Option<usize>,
    #[arg(long)]
    tgt_vocab: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    freq_threshold: Option<usize>,
    #[arg(long)]
    nlist: Option<usize>,
    #[arg(long)]
    nprobe: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    temp: Option<f64>,
    /// Comma-separated strategy list (default vanilla,fast,faster)
    #[arg(long)]
    strategies: Option<String>,
    /// Fail (exit 4) unless median wall clock orders vanilla > fast > faster
    #[arg(long)]
    check_ordering: bool,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Optional table output file
    #[arg(long)]
    out: Option<PathBuf>,
    /// csv or json (table prints to stdout either way)
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    temp: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    c: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    freq_threshold: Option<usize>,
    #[arg(long)]
    nlist: Option<usize>,
    #[arg(long)]
    nprobe: Option<usize>,
}

enum RunError {
    Core(hknn::Error),
    /// Benchmark acceptance-threshold violations.
    Violations(usize),
}

impl From<hknn::Error> for RunError {
    fn from(e: hknn::Error) -> Self {
        RunError::Core(e)
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Core(e) => write!(f, "{e}"),
            RunError::Violations(n) => write!(f, "{n} benchmark threshold violation(s)"),
        }
    }
}

fn exit_code(e: &RunError) -> u8 {
    match e {
        RunError::Core(hknn::Error::Io(io)) if io.kind() == std::io::ErrorKind::NotFound => 2,
        RunError::Core(hknn::Error::Config(_) | hknn::Error::Usage(_)) => 2,
        RunError::Core(hknn::Error::Format(_)) => 3,
        RunError::Core(hknn::Error::Io(_)) => 1,
        RunError::Violations(_) => 4,
    }
}

fn run(cli: Cli) -> Result<(), RunError> {
    let cfg = ConfigFile::load(cli.config.as_deref())?;
    let threads = cfg.resolve(cli.threads, "threads", 0usize)?;
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| hknn::Error::Config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Gen(args) => commands::gen(args, &cfg)?,
        Command::Build(args) => commands::build(args, &cfg)?,
        Command::Cluster(args) => commands::cluster(args, &cfg)?,
        Command::Translate(args) => commands::translate(args, &cfg)?,
        Command::Bench(args) => return commands::bench(args, &cfg),
        Command::Ablate(args) => commands::ablate(args, &cfg)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
