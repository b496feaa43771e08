//! `sst` — command-line frontend for the sparse spatiotemporal attention
//! toolkit: cost tables, reachability reports, toy segmentation, gradient
//! checks, and micro-benchmarks.
//!
//! Exit codes: 0 success, 1 usage error (usage on stderr), 2 data or
//! validation error. All reports are deterministic given identical flags and
//! seed; benchmark wall-clock timings go to stderr so stdout stays
//! byte-reproducible.

mod bench;
mod config;
mod cost;
mod gradcheck;
mod reach;
mod segment;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sst_core::tensor::{Coord3, Dims3};

#[derive(Parser, Debug)]
#[command(
    name = "sst",
    version,
    about = "sparse spatiotemporal attention toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Analytic MAC and parameter counts per attention variant
    Cost(cost::CostArgs),
    /// Multi-layer reachability closure report for a variant
    Reach(reach::ReachArgs),
    /// Toy video object segmentation over synthetic or file inputs
    Segment(segment::SegmentArgs),
    /// Verify analytic attention gradients against finite differences
    Gradcheck(gradcheck::GradcheckArgs),
    /// Time attention or encoder forwards (timings on stderr)
    Bench(bench::BenchArgs),
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// Seed for every random choice
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Report format on stdout
    #[arg(long, value_parser = ["text", "json"], default_value = "text")]
    pub format: String,
    /// Also write the report to this path
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Worker thread cap (default: SST_THREADS or all cores)
    #[arg(long)]
    pub threads: Option<usize>,
    /// Config file (JSON or key=value) for encoder settings; flags win
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl CommonArgs {
    fn file_config(&self) -> Result<config::FileConfig, String> {
        match &self.config {
            Some(path) => config::FileConfig::load(path),
            None => Ok(config::FileConfig::default()),
        }
    }
}

/// Renders `report` as text or JSON, prints it, and copies it to the
/// `--output` path when given.
pub fn emit(common: &CommonArgs, report: &impl Serialize, text: String) -> Result<(), String> {
    let body = match common.format.as_str() {
        "json" => {
            let mut s = serde_json::to_string_pretty(report).map_err(|e| e.to_string())?;
            s.push('\n');
            s
        }
        _ => text,
    };
    print!("{body}");
    if let Some(path) = &common.output {
        std::fs::write(path, body.as_bytes())
            .map_err(|e| format!("cannot write {}: {e}", path.display()))?;
    }
    Ok(())
}

pub fn parse_dims(s: &str) -> Result<Dims3, String> {
    let parts: Vec<&str> = s.split('x').collect();
    if parts.len() != 3 {
        return Err(format!("dims '{s}' must be TxHxW"));
    }
    let nums: Vec<usize> = parts
        .iter()
        .map(|p| p.parse().map_err(|_| format!("bad dims component '{p}'")))
        .collect::<Result<_, _>>()?;
    if nums.contains(&0) {
        return Err("dims components must be >= 1".into());
    }
    Ok(Dims3::new(nums[0], nums[1], nums[2]))
}

pub fn parse_coord(s: &str) -> Result<Coord3, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("coordinate '{s}' must be t,y,x"));
    }
    let nums: Vec<usize> = parts
        .iter()
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| format!("bad coordinate '{p}'"))
        })
        .collect::<Result<_, _>>()?;
    Ok(Coord3::new(nums[0], nums[1], nums[2]))
}

fn init_threads(requested: Option<usize>) -> Result<(), String> {
    let threads = requested.or_else(|| {
        std::env::var("SST_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = threads {
        if n == 0 {
            return Err("--threads must be >= 1".into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| format!("thread pool: {e}"))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };

    let common = match &cli.command {
        Command::Cost(a) => &a.common,
        Command::Reach(a) => &a.common,
        Command::Segment(a) => &a.common,
        Command::Gradcheck(a) => &a.common,
        Command::Bench(a) => &a.common,
    };
    if let Err(msg) = init_threads(common.threads) {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }

    let result = match cli.command {
        Command::Cost(args) => cost::run(&args),
        Command::Reach(args) => reach::run(&args),
        Command::Segment(args) => segment::run(&args),
        Command::Gradcheck(args) => gradcheck::run(&args),
        Command::Bench(args) => bench::run(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
