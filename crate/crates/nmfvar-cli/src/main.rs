//! nmfvar: low-rank non-negative VAR fitting, model selection, and
//! forecasting over tidy CSV time series.
//!
//! Exit codes: 0 success, 2 input error, 3 configuration/feasibility error,
//! 4 numeric error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "nmfvar", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct CommonOpts {
    /// Input CSV: header row, first column time labels, remaining columns
    /// numeric variables, no missing cells.
    #[arg(long, short = 'i')]
    pub input: PathBuf,

    /// Directory for emitted files (created if absent).
    #[arg(long, short = 'o', default_value = "nmfvar-out")]
    pub output_dir: PathBuf,

    /// Comma-separated preprocessing steps: log, log1p, ma<k>, diff, minmax.
    #[arg(long, default_value = "")]
    pub transform: String,

    /// RNG seed for initialization and fold shuffling.
    #[arg(long, env = "NMFVAR_SEED", default_value_t = 20240601)]
    pub seed: u64,

    /// Maximum multiplicative-update iterations per fit.
    #[arg(long, default_value_t = 5000)]
    pub max_iter: usize,

    /// Relative objective-change tolerance.
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a factor model and emit model, fitted values, residuals,
    /// memberships, and diagnostics.
    Fit {
        #[command(flatten)]
        common: CommonOpts,

        /// Number of latent bases Q.
        #[arg(long, short = 'q', visible_alias = "rank")]
        rank: usize,

        /// Lag order D (lagged-observation covariates).
        #[arg(long, short = 'd', visible_alias = "lags")]
        lags: Option<usize>,

        /// Gaussian-kernel covariates with this bandwidth instead of lags.
        #[arg(long, conflicts_with = "lags")]
        kernel_beta: Option<f64>,

        /// Identity covariates (standard NMF) instead of lags.
        #[arg(long, conflicts_with_all = ["lags", "kernel_beta"])]
        identity: bool,

        /// Fix the basis: "scalar" for the 1x1 basis [1], or a path to a
        /// headerless CSV with P rows and Q columns.
        #[arg(long)]
        fix_basis: Option<String>,

        /// Comma-separated names for the bases in membership files.
        #[arg(long)]
        basis_names: Option<String>,
    },

    /// Cross-validate lag order (and optionally rank) candidates.
    Cv {
        #[command(flatten)]
        common: CommonOpts,

        /// Rank Q used when --q-candidates is not given.
        #[arg(long, short = 'q', visible_alias = "rank")]
        rank: Option<usize>,

        /// Lag-order candidates, e.g. "1,2,3" or "1..14".
        #[arg(long)]
        d_candidates: String,

        /// Rank candidates, e.g. "2,4" or "2..6".
        #[arg(long)]
        q_candidates: Option<String>,

        /// Number of folds.
        #[arg(long, default_value_t = 10)]
        folds: usize,

        /// Contiguous time blocks instead of shuffled round-robin folds.
        #[arg(long)]
        blocked_folds: bool,
    },

    /// Forecast from a fitted model, reporting original units.
    Forecast {
        #[command(flatten)]
        common: CommonOpts,

        /// model.json produced by fit (lag mode).
        #[arg(long, short = 'm')]
        model: PathBuf,

        /// Number of forecast steps.
        #[arg(long, short = 'n')]
        horizon: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit {
            common,
            rank,
            lags,
            kernel_beta,
            identity,
            fix_basis,
            basis_names,
        } => commands::cmd_fit(commands::FitConfig {
            common,
            rank,
            lags,
            kernel_beta,
            identity,
            fix_basis,
            basis_names,
        }),
        Command::Cv {
            common,
            rank,
            d_candidates,
            q_candidates,
            folds,
            blocked_folds,
        } => commands::cmd_cv(commands::CvConfig {
            common,
            rank,
            d_candidates,
            q_candidates,
            folds,
            blocked_folds,
        }),
        Command::Forecast {
            common,
            model,
            horizon,
        } => commands::cmd_forecast(commands::ForecastConfig {
            common,
            model,
            horizon,
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(commands::exit_code(&err))
        }
    }
}
