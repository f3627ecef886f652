//! `gtm`: train, evaluate and analyze trend-aware new-product forecasters.

mod commands;
mod config;
mod convert;
mod error;
mod run;
mod svg;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use gtm_core::baselines::{KnnMode, DEFAULT_K};
use gtm_core::first_order::{DEFAULT_UNIT_COST, FIRST_ORDER_WEEKS};

use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "gtm", version, about = "Trend-aware new-product sales forecasting")]
struct Cli {
    /// Parent directory of the timestamped run directories.
    #[arg(long, global = true, default_value = "runs")]
    runs_dir: PathBuf,
    /// Write into exactly this run directory instead (must not hold a manifest yet).
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Dataset directory with products.csv, sales.csv, trends.csv [features/].
    #[arg(long, env = "GTM_DATA_ROOT")]
    pub data: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset with trends that echo sales at a planted lag.
    Synth {
        /// SynthConfig JSON; flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        n_products: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Convert a VISUELLE-layout directory (train.csv, test.csv, gtrends.csv).
    Convert {
        #[arg(long)]
        visuelle: PathBuf,
        /// Multiplies every sales value (VISUELLE ships normalized sales).
        #[arg(long, default_value_t = 1.0)]
        sales_scale: f64,
    },
    /// Train a forecaster; writes model/, loss.csv, train_report.json.
    Train {
        /// RunConfig JSON; flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        test_size: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Train the encoder-less variant that ignores trends.
        #[arg(long)]
        no_encoder: bool,
    },
    /// Metrics per horizon for a model or a forecast file.
    Evaluate {
        #[arg(long, conflicts_with = "forecasts", required_unless_present = "forecasts")]
        model: Option<PathBuf>,
        /// Forecast CSV (product_id,week_index,prediction).
        #[arg(long)]
        forecasts: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
        /// Evaluate only the N most recent products (0 = all).
        #[arg(long, default_value_t = 0)]
        test_size: usize,
        #[arg(long, value_delimiter = ',', default_value = "6")]
        horizons: Vec<usize>,
    },
    /// Write forecasts (and cross-attention maps) for a dataset.
    Forecast {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 0)]
        test_size: usize,
    },
    /// Trend/sales correlation study, plus attention lags when given a model.
    Analyze {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Weeks of trend history to correlate against (suffix of the 52).
        #[arg(long, default_value_t = 52)]
        trend_len: usize,
        /// Attention lags for the N most recent products only (0 = all).
        #[arg(long, default_value_t = 0)]
        test_size: usize,
    },
    /// First-order simulation of forecast files against the 60% policy.
    FirstOrder {
        #[command(flatten)]
        data: DataArgs,
        /// NAME=PATH or PATH (named after the file stem); repeatable.
        #[arg(long = "forecasts", required = true)]
        forecasts: Vec<String>,
        #[arg(long, default_value_t = DEFAULT_UNIT_COST)]
        unit_cost: f64,
        #[arg(long, default_value_t = FIRST_ORDER_WEEKS)]
        weeks: usize,
    },
    /// k-nearest-neighbor baseline: index the older products, forecast the newest.
    Knn {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        test_size: usize,
        #[arg(long, default_value = "attribute+image")]
        mode: KnnMode,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
        /// Weight neighbors by distance instead of similarity.
        #[arg(long)]
        distance_weighting: bool,
    },
}

/// The autodiff graph frees and reallocates many multi-megabyte buffers per
/// step; glibc's default thresholds turn each into an mmap/munmap pair.
#[cfg(all(target_os = "linux", target_env = "gnu"))]
fn tune_allocator() {
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 32 << 20);
        libc::mallopt(libc::M_TRIM_THRESHOLD, i32::MAX);
    }
}

#[cfg(not(all(target_os = "linux", target_env = "gnu")))]
fn tune_allocator() {}

fn main() {
    tune_allocator();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let argv: Vec<String> = std::env::args().collect();
    let cli = Cli::parse();
    let code = match run(cli, argv) {
        Ok(dir) => {
            println!("{}", dir.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli, argv: Vec<String>) -> Result<PathBuf, CliError> {
    let prepared = commands::prepare(cli.command)?;
    let mut dir = run::RunDir::create(&cli.runs_dir, cli.run_dir.as_deref(), prepared.seed)?;
    dir.config = prepared.config.clone();
    let result = (prepared.exec)(&mut dir);
    let path = dir.path.clone();
    dir.finish(prepared.name, argv, &result)?;
    result.map(|()| path)
}
