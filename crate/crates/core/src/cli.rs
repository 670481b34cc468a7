//! `fedcloud` command-line interface.

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::he::{
    self, decrypt_vector, encrypt_vector_blocked, with_workers, BlockSpec, FixedPointCodec,
    Headroom,
};
use crate::metrics;
use crate::rng::{self, Purpose};
use crate::runtime::{self, RunOptions, Scenario};
use crate::sync::{self, SyncPlan, WeightPolicy};
use crate::vector::GradientVector;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub const PUBLIC_KEY_FILE: &str = "fedcloud_pk.json";
pub const SECRET_KEY_FILE: &str = "fedcloud_sk.json";
pub const REPORT_FILE: &str = "report.json";
pub const METRICS_FILE: &str = "metrics.csv";

#[derive(Debug, Parser)]
#[command(name = "fedcloud", version, about = "Cross-cloud federated learning simulator")]
pub struct Cli {
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a key pair as two versioned JSON documents.
    Keygen(KeygenArgs),
    /// Run a scenario and write report.json and metrics.csv.
    Run(RunArgs),
    /// Time blocked encryption across block and worker counts.
    BenchEncrypt(BenchArgs),
    /// Derive sync weights and delays from a network trace.
    SyncPlan(SyncPlanArgs),
}

#[derive(Debug, Args)]
pub struct KeygenArgs {
    /// Modulus size in bits.
    #[arg(long, default_value_t = 64)]
    pub bits: u32,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, env = "FEDCLOUD_SEED")]
    pub seed: Option<u64>,
    /// Overwrite existing key files.
    #[arg(long)]
    pub force: bool,
    /// Refuse keys too small to aggregate this many clients.
    #[arg(long)]
    pub max_clients: Option<usize>,
    #[arg(long, default_value_t = FixedPointCodec::default().frac_bits)]
    pub frac_bits: u32,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, env = "FEDCLOUD_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Network trace CSV driving the sync weights.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Record wall-clock in the outputs (makes them run-dependent).
    #[arg(long)]
    pub timings: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub dim: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,16")]
    pub blocks: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,4")]
    pub workers: Vec<usize>,
    #[arg(long, default_value_t = 64)]
    pub bits: u32,
    #[arg(long, env = "FEDCLOUD_SEED")]
    pub seed: Option<u64>,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SyncPlanArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long)]
    pub platforms: PathBuf,
    #[arg(long, default_value_t = WeightPolicy::default().staleness_window_s)]
    pub staleness_window: f64,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeygenOutput {
    pub public_path: PathBuf,
    pub secret_path: PathBuf,
    pub fingerprint: String,
    pub toy: bool,
}

pub fn cmd_keygen(args: &KeygenArgs) -> Result<KeygenOutput> {
    let public_path = args.out.join(PUBLIC_KEY_FILE);
    let secret_path = args.out.join(SECRET_KEY_FILE);
    if !args.force {
        for p in [&public_path, &secret_path] {
            if p.exists() {
                return Err(Error::WouldOverwrite(p.clone()));
            }
        }
    }
    let headroom = args
        .max_clients
        .map(|k| Headroom::new(FixedPointCodec::with_frac_bits(args.frac_bits), k));
    let seed = args.seed.unwrap_or_else(rand::random);
    let kp = he::keygen(args.bits, headroom, seed)?;
    fs::create_dir_all(&args.out)?;
    fs::write(&public_path, serde_json::to_string_pretty(&kp.public.to_doc())? + "\n")?;
    fs::write(&secret_path, serde_json::to_string_pretty(&kp.secret.to_doc())? + "\n")?;
    Ok(KeygenOutput {
        public_path,
        secret_path,
        fingerprint: kp.public.fingerprint(),
        toy: kp.is_toy(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOutput {
    pub report_path: PathBuf,
    pub metrics_path: PathBuf,
    pub rounds: usize,
}

pub fn cmd_run(args: &RunArgs) -> Result<RunOutput> {
    let mut scenario = Scenario::load(&args.scenario)?;
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    let trace = args.trace.as_deref().map(sync::ingest_trace).transpose()?;
    let opts = RunOptions {
        record_timings: args.timings,
        workers: args.workers,
    };
    let run = runtime::run_experiment_with(&scenario, &opts, trace)?;
    fs::create_dir_all(&args.out)?;
    let report_path = args.out.join(REPORT_FILE);
    let metrics_path = args.out.join(METRICS_FILE);
    fs::write(&report_path, run.report.to_json()? + "\n")?;
    let mut csv = Vec::new();
    metrics::write_metrics_csv(&mut csv, &run.report.rounds)?;
    fs::write(&metrics_path, csv)?;
    Ok(RunOutput {
        report_path,
        metrics_path,
        rounds: run.report.rounds.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub n_blocks: usize,
    pub workers: usize,
    pub wall_clock_ms: f64,
    pub encrypt_ops: u64,
    #[serde(skip)]
    pub decrypted: GradientVector,
}

/// Encrypt one seeded random vector for every (blocks, workers) pair.
/// Fails if any row decrypts differently from the first.
pub fn cmd_bench_encrypt(args: &BenchArgs) -> Result<Vec<BenchRow>> {
    if args.dim == 0 {
        return Err(Error::config("dim", "must be positive"));
    }
    if args.blocks.is_empty() || args.blocks.contains(&0) {
        return Err(Error::config("blocks", "need positive block counts"));
    }
    if args.workers.is_empty() || args.workers.contains(&0) {
        return Err(Error::config("workers", "need positive worker counts"));
    }
    let seed = args.seed.unwrap_or(0);
    let codec = FixedPointCodec::default();
    let kp = he::keygen(args.bits, None, seed)?;
    let v = {
        use rand::Rng;
        let mut r = rng::stream(seed, Purpose::Bench, 0);
        GradientVector((0..args.dim).map(|_| r.random_range(-1.0..1.0)).collect())
    };

    let mut rows = Vec::new();
    for &n_blocks in &args.blocks {
        let spec = BlockSpec::for_dim(args.dim, n_blocks)?;
        for &workers in &args.workers {
            let t = Instant::now();
            let cv = with_workers(workers, || encrypt_vector_blocked(&kp.public, &v, &codec, spec, seed))??;
            let wall_clock_ms = t.elapsed().as_secs_f64() * 1e3;
            let decrypted = decrypt_vector(&kp.secret, &cv)?;
            rows.push(BenchRow {
                n_blocks,
                workers,
                wall_clock_ms,
                encrypt_ops: cv.iter().count() as u64,
                decrypted,
            });
        }
    }
    if let Some(first) = rows.first() {
        if rows.iter().any(|r| r.decrypted != first.decrypted) {
            return Err(Error::Wire("bench rows decrypt to different vectors".into()));
        }
    }
    Ok(rows)
}

pub fn write_bench_csv<W: Write>(out: W, rows: &[BenchRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_sync_plan(args: &SyncPlanArgs) -> Result<SyncPlan> {
    let samples = sync::ingest_trace(&args.trace)?;
    let platforms = sync::load_platforms(&args.platforms)?;
    sync::plan(
        &platforms,
        &samples,
        &WeightPolicy {
            staleness_window_s: args.staleness_window,
        },
    )
}

fn print_sync_plan(plan: &SyncPlan, json: bool) -> Result<()> {
    if json {
        println!("{}", serde_json::to_string_pretty(plan)?);
        return Ok(());
    }
    println!("platform          weight");
    for (id, w) in plan.weights.platform_ids.iter().zip(&plan.weights.weights) {
        println!("{id:<16} {w:.6}");
    }
    println!("T_total           {} s", plan.total_delay_s);
    println!("T_sync,weighted   {} s", plan.weighted_sync_delay_s);
    Ok(())
}

/// Dispatch a parsed command line. Returns the process exit code.
pub fn execute(cli: Cli) -> i32 {
    let started = Instant::now();
    let result = match &cli.command {
        Command::Keygen(a) => cmd_keygen(a).map(|o| {
            println!("{}", o.fingerprint);
            eprintln!("wrote {} and {}", o.public_path.display(), o.secret_path.display());
            if o.toy {
                eprintln!("warning: {}", he::TOY_KEY_WARNING);
            }
        }),
        Command::Run(a) => cmd_run(a).map(|o| {
            eprintln!(
                "{} rounds -> {} , {}",
                o.rounds,
                o.report_path.display(),
                o.metrics_path.display()
            );
        }),
        Command::BenchEncrypt(a) => cmd_bench_encrypt(a).and_then(|rows| match &a.out {
            Some(p) => write_bench_csv(fs::File::create(p)?, &rows),
            None => write_bench_csv(std::io::stdout().lock(), &rows),
        }),
        Command::SyncPlan(a) => cmd_sync_plan(a).and_then(|p| print_sync_plan(&p, a.json)),
    };
    log::info!("finished in {:.1} ms", started.elapsed().as_secs_f64() * 1e3);
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                EXIT_USAGE
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

pub fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp_millis()
        .try_init();
}

