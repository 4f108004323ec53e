//! Rolling-window global minimum-variance backtests.
//!
//! Each month (21 trading days) the universe is rebuilt, the in-sample window
//! is cleaned, a covariance estimate is formed and the GMV portfolio is held
//! over the following out-of-sample days.

mod panel;
mod preprocess;
mod synthetic;

pub use panel::{load_returns, read_returns, save_panel, write_returns, ReturnPanel};
pub use preprocess::{
    build_universe, column_correlations, normalize_cross_section, winsorize, UniverseRule,
    WindowSpan,
};
pub use synthetic::{business_days, regime_panel, RegimePanelConfig};

use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::calibration::{calibrate_returns, CalibrationConfig};
use crate::cv::{apply_positivity_floor, cv_eigenvalues_for, CvConfig};
use crate::error::{Error, Result};
use crate::estimators::{
    ema_weights, estimate_ls_intensity, linear_shrinkage, nonlinear_shrinkage, scale_rows,
};
use crate::rng::substream;
use crate::spectral::{eigh_matrix, CovarianceMatrix};

pub const TRADING_DAYS_PER_YEAR: f64 = 252.0;
pub const MONTH: usize = 21;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PortfolioEstimator {
    EqualWeight,
    Ema,
    EmaLs,
    EmaNl,
    EmaCv,
    Scm,
    ScmLs,
    ScmNl,
    ScmCv,
}

impl PortfolioEstimator {
    pub const ALL: [PortfolioEstimator; 9] = [
        PortfolioEstimator::EqualWeight,
        PortfolioEstimator::Ema,
        PortfolioEstimator::EmaLs,
        PortfolioEstimator::EmaNl,
        PortfolioEstimator::EmaCv,
        PortfolioEstimator::Scm,
        PortfolioEstimator::ScmLs,
        PortfolioEstimator::ScmNl,
        PortfolioEstimator::ScmCv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PortfolioEstimator::EqualWeight => "1/N",
            PortfolioEstimator::Ema => "EMA",
            PortfolioEstimator::EmaLs => "EMA-LS",
            PortfolioEstimator::EmaNl => "EMA-NL",
            PortfolioEstimator::EmaCv => "EMA-CV",
            PortfolioEstimator::Scm => "SCM",
            PortfolioEstimator::ScmLs => "SCM-LS",
            PortfolioEstimator::ScmNl => "SCM-NL",
            PortfolioEstimator::ScmCv => "SCM-CV",
        }
    }

    /// Whether the estimator uses exponential weights (and hence a `β`).
    pub fn is_weighted(self) -> bool {
        matches!(
            self,
            PortfolioEstimator::Ema
                | PortfolioEstimator::EmaLs
                | PortfolioEstimator::EmaNl
                | PortfolioEstimator::EmaCv
        )
    }

    /// Covariance estimate from cleaned data with the most recent row first.
    /// Returns `None` for the equal-weight portfolio, which needs none.
    pub fn estimate(
        self,
        x: &DMatrix<f64>,
        beta: f64,
        folds: usize,
        seed: u64,
    ) -> Result<Option<CovarianceMatrix>> {
        use PortfolioEstimator::*;
        if self == EqualWeight {
            return Ok(None);
        }
        let (t, n) = x.shape();
        if t < 2 {
            return Err(Error::InsufficientData(format!(
                "estimation needs T >= 2, got {t}"
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite("estimation window"));
        }
        let weights = if self.is_weighted() {
            ema_weights(beta, t)?.weights().to_vec()
        } else {
            vec![1.0; t]
        };
        let x_tilde = scale_rows(x, &weights);
        let e_hat = x_tilde.tr_mul(&x_tilde) / t as f64;
        if matches!(self, Ema | Scm) {
            return Ok(Some(CovarianceMatrix::new(e_hat)?));
        }
        let spectrum = eigh_matrix(&e_hat)?;
        let eigenvalues = match self {
            EmaLs | ScmLs => {
                linear_shrinkage(spectrum.eigenvalues(), estimate_ls_intensity(&x_tilde)?)?
            }
            EmaNl | ScmNl => {
                let clipped: Vec<f64> = spectrum.eigenvalues().iter().map(|v| v.max(0.0)).collect();
                let mut xi = nonlinear_shrinkage(&clipped, n as f64 / t as f64)?;
                apply_positivity_floor(&mut xi);
                xi
            }
            EmaCv | ScmCv => {
                let config = CvConfig::new(folds, seed);
                cv_eigenvalues_for(&x_tilde, &spectrum, Some(&weights), &config)?.isotonic
            }
            EqualWeight | Ema | Scm => unreachable!("handled above"),
        };
        Ok(Some(spectrum.reconstruct(&eigenvalues)?))
    }
}

impl fmt::Display for PortfolioEstimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PortfolioEstimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_uppercase().replace('_', "-");
        Self::ALL
            .into_iter()
            .find(|e| e.name() == key || (key == "EW" && *e == Self::EqualWeight))
            .ok_or_else(|| {
                let names: Vec<&str> = Self::ALL.iter().map(|e| e.name()).collect();
                Error::invalid(
                    "estimator",
                    s,
                    format!("expected one of {}", names.join(", ")),
                )
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaPolicy {
    Fixed(f64),
    /// Recalibrated on each window's sample covariance spectrum.
    CalibratedMonthly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestConfig {
    pub n_universe: usize,
    pub t_in: usize,
    pub t_out: usize,
    pub estimator: PortfolioEstimator,
    pub beta_policy: BetaPolicy,
    pub corr_threshold: f64,
    pub winsor_quantiles: (f64, f64),
    pub folds: usize,
    pub seed: u64,
    /// Cap on the number of windows (all that fit when `None`).
    pub max_windows: Option<usize>,
    pub calibration: CalibrationConfig,
}

impl BacktestConfig {
    pub fn new(n_universe: usize, estimator: PortfolioEstimator) -> Self {
        Self {
            n_universe,
            t_in: 1250,
            t_out: MONTH,
            estimator,
            beta_policy: BetaPolicy::Fixed(0.996),
            corr_threshold: 0.95,
            winsor_quantiles: (0.005, 0.995),
            folds: 10,
            seed: 0,
            max_windows: None,
            calibration: CalibrationConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_universe < 2 {
            return Err(Error::invalid(
                "n_universe",
                self.n_universe,
                "need at least 2 assets",
            ));
        }
        if self.t_in < 2 || self.t_out < 1 {
            return Err(Error::invalid(
                "window",
                format!("T_in={}, T_out={}", self.t_in, self.t_out),
                "need T_in >= 2 and T_out >= 1",
            ));
        }
        let (lo, hi) = self.winsor_quantiles;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo >= hi {
            return Err(Error::invalid(
                "winsor quantiles",
                format!("({lo}, {hi})"),
                "need 0 <= low < high <= 1",
            ));
        }
        if !(self.corr_threshold.is_finite()
            && self.corr_threshold > -1.0
            && self.corr_threshold <= 1.0)
        {
            return Err(Error::invalid(
                "corr_threshold",
                self.corr_threshold,
                "must lie in (-1, 1]",
            ));
        }
        if self.estimator.is_cv() && (self.folds < 2 || self.folds > self.t_in) {
            return Err(Error::invalid(
                "K",
                self.folds,
                format!("need 2 <= K <= T_in = {}", self.t_in),
            ));
        }
        if let BetaPolicy::Fixed(b) = self.beta_policy {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::invalid("beta", b, "decay rate must lie in (0, 1)"));
            }
        }
        Ok(())
    }

    /// Number of windows that fit in a panel of `t` rows.
    pub fn window_count(&self, t: usize) -> usize {
        let fit = if t >= self.t_in + self.t_out {
            (t - self.t_in - self.t_out) / self.t_out + 1
        } else {
            0
        };
        self.max_windows.map_or(fit, |m| m.min(fit))
    }
}

impl PortfolioEstimator {
    fn is_cv(self) -> bool {
        matches!(self, PortfolioEstimator::EmaCv | PortfolioEstimator::ScmCv)
    }
}

/// `w = Σ⁻¹1 / (1'Σ⁻¹1)` via a Cholesky solve.
pub fn gmv_weights(sigma: &CovarianceMatrix) -> Result<Vec<f64>> {
    let n = sigma.dim();
    let chol = sigma
        .as_matrix()
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite)?;
    let y = chol.solve(&DVector::from_element(n, 1.0));
    let total = y.sum();
    if !(total.is_finite() && total != 0.0) {
        return Err(Error::NotPositiveDefinite);
    }
    let w: Vec<f64> = y.iter().map(|v| v / total).collect();
    let budget = w.iter().sum::<f64>();
    if (budget - 1.0).abs() > 1e-12 {
        return Err(Error::NonConvergence {
            iterations: 1,
            residual: (budget - 1.0).abs(),
            at: "GMV budget constraint".into(),
        });
    }
    Ok(w)
}

/// Annualized performance of a daily return series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    /// `252 μ̂`
    pub av: f64,
    /// `√252 σ̂`, with `σ̂` using the `n − 1` denominator.
    pub sd: f64,
    /// `AV/SD`, undefined when `SD = 0`.
    pub ir: Option<f64>,
}

pub fn performance_metrics(returns: &[f64]) -> Result<Metrics> {
    let n = returns.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "metrics need at least 2 returns, got {n}"
        )));
    }
    if returns.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("portfolio returns"));
    }
    let mean = returns.iter().sum::<f64>() / n as f64;
    let constant = returns.iter().all(|&r| r == returns[0]);
    let var = if constant {
        0.0
    } else {
        returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    };
    let av = TRADING_DAYS_PER_YEAR * mean;
    let sd = TRADING_DAYS_PER_YEAR.sqrt() * var.sqrt();
    Ok(Metrics {
        av,
        sd,
        ir: (sd > 0.0).then(|| av / sd),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowRecord {
    pub index: usize,
    /// First and last in-sample dates.
    pub in_sample: (NaiveDate, NaiveDate),
    /// First and last held-out dates.
    pub out_of_sample: (NaiveDate, NaiveDate),
    pub beta: Option<f64>,
    pub assets: Vec<String>,
    pub weights: Vec<f64>,
    pub returns: Vec<f64>,
    /// `w'Σ̂w` and the same for the equal-weight portfolio.
    pub in_sample_variance: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestReport {
    pub estimator: PortfolioEstimator,
    pub windows: Vec<WindowRecord>,
    pub metrics: Metrics,
}

impl BacktestReport {
    pub fn daily_returns(&self) -> Vec<f64> {
        self.windows
            .iter()
            .flat_map(|w| w.returns.iter().copied())
            .collect()
    }
}

fn run_window(panel: &ReturnPanel, config: &BacktestConfig, index: usize) -> Result<WindowRecord> {
    let span = WindowSpan {
        start: index * config.t_out,
        t_in: config.t_in,
        t_out: config.t_out,
    };
    let rule = UniverseRule {
        size: config.n_universe,
        corr_threshold: config.corr_threshold,
    };
    let assets = build_universe(panel, span, rule)?;

    let in_rows: Vec<usize> = span.in_sample().collect();
    let out_rows: Vec<usize> = span.out_of_sample().collect();
    // estimation sees rows strictly before the first held-out row
    let last_used = *in_rows.last().expect("T_in >= 2");
    assert!(
        panel.dates[last_used] < panel.dates[out_rows[0]],
        "look-ahead: estimation date {} is not before {}",
        panel.dates[last_used],
        panel.dates[out_rows[0]]
    );

    let raw_in = panel
        .returns
        .select_rows(in_rows.iter())
        .select_columns(assets.iter());
    let (lo, hi) = config.winsor_quantiles;
    let cleaned = normalize_cross_section(&winsorize(&raw_in, lo, hi)?)?;
    // estimators expect the most recent observation first
    let recent_first = cleaned.select_rows((0..cleaned.nrows()).rev().collect::<Vec<_>>().iter());

    let beta = if config.estimator.is_weighted() {
        Some(match config.beta_policy {
            BetaPolicy::Fixed(b) => b,
            BetaPolicy::CalibratedMonthly => {
                calibrate_returns(&recent_first, &config.calibration)?.beta_hat
            }
        })
    } else {
        None
    };
    let n = assets.len();
    let fold_seed = substream(config.seed, "folds", index as u64);
    let sigma =
        config
            .estimator
            .estimate(&recent_first, beta.unwrap_or(0.5), config.folds, fold_seed)?;
    let (weights, in_sample_variance) = match &sigma {
        None => (vec![1.0 / n as f64; n], None),
        Some(s) => {
            let w = gmv_weights(s)?;
            let wv = DVector::from_column_slice(&w);
            let ew = DVector::from_element(n, 1.0 / n as f64);
            let m = s.as_matrix();
            (w, Some((wv.dot(&(m * &wv)), ew.dot(&(m * &ew)))))
        }
    };

    let raw_out = panel
        .returns
        .select_rows(out_rows.iter())
        .select_columns(assets.iter());
    let returns = (0..raw_out.nrows())
        .map(|r| {
            raw_out
                .row(r)
                .iter()
                .zip(&weights)
                .map(|(x, w)| x * w)
                .sum()
        })
        .collect();
    Ok(WindowRecord {
        index,
        in_sample: (panel.dates[in_rows[0]], panel.dates[last_used]),
        out_of_sample: (
            panel.dates[out_rows[0]],
            panel.dates[*out_rows.last().expect("T_out >= 1")],
        ),
        beta,
        assets: assets.iter().map(|&j| panel.assets[j].clone()).collect(),
        weights,
        returns,
        in_sample_variance,
    })
}

/// Runs every window (in parallel) and aggregates in window order.
pub fn rolling_backtest(panel: &ReturnPanel, config: &BacktestConfig) -> Result<BacktestReport> {
    config.validate()?;
    panel.validate()?;
    let count = config.window_count(panel.t());
    if count == 0 {
        return Err(Error::InsufficientData(format!(
            "panel has {} rows, one window needs {}",
            panel.t(),
            config.t_in + config.t_out
        )));
    }
    let windows: Vec<WindowRecord> = (0..count)
        .into_par_iter()
        .map(|i| {
            run_window(panel, config, i).map_err(|e| Error::Window {
                window: i,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let daily: Vec<f64> = windows
        .iter()
        .flat_map(|w| w.returns.iter().copied())
        .collect();
    Ok(BacktestReport {
        estimator: config.estimator,
        windows,
        metrics: performance_metrics(&daily)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn gmv_examples() {
        let w = gmv_weights(&CovarianceMatrix::identity(4)).unwrap();
        assert_eq!(w, vec![0.25; 4]);
        let w = gmv_weights(&CovarianceMatrix::from_diagonal(&[1.0, 4.0]).unwrap()).unwrap();
        assert!((w[0] - 0.8).abs() < 1e-12 && (w[1] - 0.2).abs() < 1e-12);
        let bad = CovarianceMatrix::from_diagonal(&[1.0, 0.0]).unwrap();
        assert!(matches!(gmv_weights(&bad), Err(Error::NotPositiveDefinite)));
    }

    #[test]
    fn gmv_beats_random_feasible_portfolios() {
        let mut rng = rng_from_seed(3);
        let a = DMatrix::from_fn(8, 8, |_, _| rng.sample::<f64, _>(StandardNormal));
        let sigma =
            CovarianceMatrix::new(&a * a.transpose() + DMatrix::identity(8, 8) * 0.1).unwrap();
        let w = DVector::from_vec(gmv_weights(&sigma).unwrap());
        let m = sigma.as_matrix();
        let best = w.dot(&(m * &w));
        for _ in 0..1000 {
            let mut v = DVector::from_fn(8, |_, _| rng.sample::<f64, _>(StandardNormal));
            let s = v.sum();
            if s.abs() < 1e-3 {
                continue;
            }
            v /= s;
            assert!(best <= v.dot(&(m * &v)) + 1e-12);
        }
    }

    #[test]
    fn metrics_examples() {
        let m = performance_metrics(&[0.001; 10]).unwrap();
        assert!((m.av - 0.252).abs() < 1e-15);
        assert_eq!(m.sd, 0.0);
        assert_eq!(m.ir, None);

        let alt: Vec<f64> = (0..20)
            .map(|i| if i % 2 == 0 { 0.01 } else { -0.01 })
            .collect();
        let m = performance_metrics(&alt).unwrap();
        assert_eq!(m.av, 0.0);
        assert_eq!(m.ir, Some(0.0));
        assert!(performance_metrics(&[0.1]).is_err());
    }

    #[test]
    fn metrics_match_direct_evaluation() {
        let r: Vec<f64> = (0..42)
            .map(|i| ((i * 37 % 11) as f64 - 5.0) * 1e-3 + (i as f64).sin() * 1e-4)
            .collect();
        let m = performance_metrics(&r).unwrap();
        // straightforward spreadsheet-style formulas
        let mut sum = 0.0;
        for x in &r {
            sum += x;
        }
        let mu = sum / 42.0;
        let mut ss = 0.0;
        for x in &r {
            ss += (x - mu) * (x - mu);
        }
        let av = 252.0 * mu;
        let sd = (252.0f64).sqrt() * (ss / 41.0).sqrt();
        assert!((m.av - av).abs() < 1e-12);
        assert!((m.sd - sd).abs() < 1e-12);
        assert!((m.ir.unwrap() - av / sd).abs() < 1e-12);
        assert_eq!(m.ir.unwrap(), m.av / m.sd);
    }

    #[test]
    fn estimator_names_round_trip() {
        for e in PortfolioEstimator::ALL {
            assert_eq!(e.name().parse::<PortfolioEstimator>().unwrap(), e);
        }
        assert_eq!(
            "ema_cv".parse::<PortfolioEstimator>().unwrap(),
            PortfolioEstimator::EmaCv
        );
        assert!("GARCH".parse::<PortfolioEstimator>().is_err());
    }

    fn small_panel(seed: u64) -> ReturnPanel {
        let mut c = RegimePanelConfig::new(14, 160);
        c.mean_regime_length = 60.0;
        regime_panel(&c, seed).unwrap()
    }

    fn small_config(estimator: PortfolioEstimator) -> BacktestConfig {
        BacktestConfig {
            t_in: 100,
            t_out: 20,
            ..BacktestConfig::new(10, estimator)
        }
    }

    #[test]
    fn window_layout() {
        let c = small_config(PortfolioEstimator::EqualWeight);
        assert_eq!(c.window_count(160), 3);
        assert_eq!(c.window_count(119), 0);
        let p = small_panel(1);
        let r = rolling_backtest(&p, &c).unwrap();
        assert_eq!(r.windows.len(), 3);
        for w in &r.windows {
            assert_eq!(w.weights, vec![0.1; 10]);
            assert!(w.in_sample.1 < w.out_of_sample.0);
            assert_eq!(w.returns.len(), 20);
        }
        assert_eq!(r.windows[1].in_sample.0, p.dates[20]);
    }

    #[test]
    fn every_estimator_runs_with_budget_and_dominance() {
        let p = small_panel(2);
        for e in PortfolioEstimator::ALL {
            let c = small_config(e);
            let r = rolling_backtest(&p, &c).unwrap();
            for w in &r.windows {
                assert!((w.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12, "{e}");
                if let Some((gmv, ew)) = w.in_sample_variance {
                    assert!(gmv <= ew * (1.0 + 1e-12), "{e}: {gmv} > {ew}");
                }
            }
            assert_eq!(r, rolling_backtest(&p, &c).unwrap());
        }
    }

    #[test]
    fn calibrated_policy_records_beta() {
        let p = small_panel(3);
        let c = BacktestConfig {
            beta_policy: BetaPolicy::CalibratedMonthly,
            ..small_config(PortfolioEstimator::EmaCv)
        };
        let r = rolling_backtest(&p, &c).unwrap();
        assert!(r
            .windows
            .iter()
            .all(|w| w.beta.is_some_and(|b| b > 0.0 && b < 1.0)));
    }

    #[test]
    fn window_errors_carry_index() {
        let mut p = small_panel(4);
        // a row of identical returns cannot be normalized in window 2 only
        for j in 0..p.n() {
            p.returns[(130, j)] = 0.0;
        }
        let err = rolling_backtest(&p, &small_config(PortfolioEstimator::Scm)).unwrap_err();
        match err {
            Error::Window { window, .. } => assert_eq!(window, 2),
            other => panic!("{other:?}"),
        }
    }
}
