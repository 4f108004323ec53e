//! Command-line flags and the matching config-file sections.
//!
//! Every subcommand's flags are `Option`s so that a TOML config file can fill
//! whatever the command line leaves unset. Flags win over the file.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

#[derive(Debug, Parser)]
#[command(
    name = "emacv",
    version,
    about = "EMA covariance estimation with cross-validated shrinkage"
)]
pub struct Cli {
    /// TOML file with a top-level `seed`/`threads` and one table per subcommand.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Root seed for every random substream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Directory for artifacts.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate a covariance matrix from a returns CSV.
    Estimate(EstimateArgs),
    /// Evaluate the limiting spectral density of the EMA sample covariance.
    Lsd(LsdArgs),
    /// Fit the effective concentration (and hence beta) to a returns panel.
    Calibrate(CalibrateArgs),
    /// Monte Carlo experiments on synthetic Gaussian data.
    Simulate {
        #[command(subcommand)]
        mode: SimulateMode,
    },
    /// Rolling-window minimum-variance backtest.
    Backtest(BacktestArgs),
    /// Write a synthetic regime-switching panel (returns, volumes, caps).
    SynthPanel(SynthPanelArgs),
}

#[derive(Debug, Subcommand)]
pub enum SimulateMode {
    /// SEPRIAL as N grows at fixed q.
    Convergence(ConvergenceArgs),
    /// Sample vs shrunk eigenvalues for one replication.
    Response(ResponseArgs),
    /// SEPRIAL across concentration ratios at fixed N*T.
    Concentration(ConcentrationArgs),
}

/// Fills unset fields of `self` from `file`.
pub trait Overlay: Sized {
    fn overlay(self, file: Self) -> Self;
}

macro_rules! overlay_fields {
    ($ty:ident { $($field:ident),* $(,)? }) => {
        impl Overlay for $ty {
            fn overlay(self, file: Self) -> Self {
                Self { $($field: self.$field.or(file.$field)),* }
            }
        }
    };
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct EstimateArgs {
    /// Returns CSV (`date,<asset>...`, oldest row first).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// One of EMA, EMA-LS, EMA-NL, EMA-CV, SCM, SCM-LS, SCM-NL, SCM-CV.
    #[arg(long)]
    pub estimator: Option<String>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Use only the most recent rows.
    #[arg(long)]
    pub window: Option<usize>,
}
overlay_fields!(EstimateArgs {
    input,
    estimator,
    beta,
    folds,
    window
});

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct LsdArgs {
    /// Concentration ratio N/T.
    #[arg(long)]
    pub q: Option<f64>,
    /// Effective concentration N(1 - beta).
    #[arg(long)]
    pub qe: Option<f64>,
    #[arg(long)]
    pub sigma2: Option<f64>,
    /// Imaginary offset of the evaluation points.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Grid points.
    #[arg(long)]
    pub points: Option<usize>,
}
overlay_fields!(LsdArgs {
    q,
    qe,
    sigma2,
    eta,
    points
});

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct CalibrateArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Use only the most recent rows.
    #[arg(long)]
    pub window: Option<usize>,
    /// Winsorize and normalize each row before fitting.
    #[arg(long)]
    pub preprocess: Option<bool>,
    #[arg(long)]
    pub qe_min: Option<f64>,
    #[arg(long)]
    pub qe_max: Option<f64>,
    #[arg(long)]
    pub candidates: Option<usize>,
    /// `auto` or a fixed number of top eigenvalues to discard.
    #[arg(long)]
    pub outliers: Option<String>,
    /// `auto` (Silverman) or a fixed kernel bandwidth.
    #[arg(long)]
    pub bandwidth: Option<String>,
    #[arg(long)]
    pub grid_size: Option<usize>,
    /// Smooth the theoretical density with the same kernel.
    #[arg(long)]
    pub smooth_theory: Option<bool>,
}
overlay_fields!(CalibrateArgs {
    input,
    window,
    preprocess,
    qe_min,
    qe_max,
    candidates,
    outliers,
    bandwidth,
    grid_size,
    smooth_theory,
});

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ConvergenceArgs {
    /// Dimensions to sweep.
    #[arg(long, value_delimiter = ',')]
    pub ns: Option<Vec<usize>>,
    #[arg(long)]
    pub q: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Reject designs whose EMA time-scale exceeds T.
    #[arg(long)]
    pub enforce_timescale: Option<bool>,
}
overlay_fields!(ConvergenceArgs {
    ns,
    q,
    beta,
    reps,
    folds,
    enforce_timescale
});

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ConcentrationArgs {
    /// Concentration ratios to sweep.
    #[arg(long, value_delimiter = ',')]
    pub qs: Option<Vec<f64>>,
    /// Fixed product N*T.
    #[arg(long)]
    pub nt: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub enforce_timescale: Option<bool>,
}
overlay_fields!(ConcentrationArgs {
    qs,
    nt,
    beta,
    reps,
    folds,
    enforce_timescale
});

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ResponseArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub t: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub enforce_timescale: Option<bool>,
}
overlay_fields!(ResponseArgs {
    n,
    t,
    beta,
    folds,
    enforce_timescale
});

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct BacktestArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Comma-separated estimator names, e.g. `1/N,EMA-CV,SCM`.
    #[arg(long, value_delimiter = ',')]
    pub estimators: Option<Vec<String>>,
    #[arg(long)]
    pub n_universe: Option<usize>,
    #[arg(long)]
    pub t_in: Option<usize>,
    #[arg(long)]
    pub t_out: Option<usize>,
    /// A fixed decay rate, or `calibrated` to refit it every window.
    #[arg(long)]
    pub beta: Option<String>,
    #[arg(long)]
    pub corr_threshold: Option<f64>,
    #[arg(long)]
    pub winsor_low: Option<f64>,
    #[arg(long)]
    pub winsor_high: Option<f64>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub max_windows: Option<usize>,
}
overlay_fields!(BacktestArgs {
    input,
    estimators,
    n_universe,
    t_in,
    t_out,
    beta,
    corr_threshold,
    winsor_low,
    winsor_high,
    folds,
    max_windows,
});

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct SynthPanelArgs {
    #[arg(long)]
    pub assets: Option<usize>,
    #[arg(long)]
    pub days: Option<usize>,
    #[arg(long)]
    pub sectors: Option<usize>,
    /// Mean number of days between volatility regime switches.
    #[arg(long)]
    pub regime_length: Option<f64>,
    #[arg(long)]
    pub daily_vol: Option<f64>,
}
overlay_fields!(SynthPanelArgs {
    assets,
    days,
    sectors,
    regime_length,
    daily_vol
});

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct SimulateFile {
    pub convergence: ConvergenceArgs,
    pub response: ResponseArgs,
    pub concentration: ConcentrationArgs,
}

/// Contents of a `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub estimate: EstimateArgs,
    pub lsd: LsdArgs,
    pub calibrate: CalibrateArgs,
    pub simulate: SimulateFile,
    pub backtest: BacktestArgs,
    pub synth_panel: SynthPanelArgs,
}
