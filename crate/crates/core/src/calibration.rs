//! Selecting the decay rate by matching the limiting density to the sample
//! spectrum.
//!
//! For each candidate `q_e`, the theoretical density of the
//! exponentially-weighted law is compared with a Gaussian kernel estimate of
//! the bulk of the sample spectrum through the Jensen–Shannon divergence. The
//! candidate with the smallest divergence gives `β̂ = 1 − q̂_e/N`.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimators::sample_covariance;
use crate::rmt::{default_grid, lsd_density, spectral_edges, DensityGrid, LsdParams, DEFAULT_ETA};
use crate::spectral::eigh;

pub const DEFAULT_QE_RANGE: (f64, f64) = (0.05, 5.0);
pub const DEFAULT_QE_CANDIDATES: usize = 60;

/// How many top eigenvalues to discard before smoothing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OutlierRule {
    /// Count of eigenvalues above the upper edge of each candidate's density.
    Auto,
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    /// Silverman's rule on the eigenvalues that survive outlier removal.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationConfig {
    pub outliers: OutlierRule,
    pub bandwidth: Bandwidth,
    pub grid_size: usize,
    pub qe_grid: Vec<f64>,
    /// Smooth the theoretical density with the same kernel as the sample
    /// spectrum before comparing, so that the kernel's own spread does not
    /// favour wider candidate densities.
    pub smooth_theory: bool,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            outliers: OutlierRule::Auto,
            bandwidth: Bandwidth::Auto,
            grid_size: 512,
            qe_grid: log_grid(
                DEFAULT_QE_RANGE.0,
                DEFAULT_QE_RANGE.1,
                DEFAULT_QE_CANDIDATES,
            ),
            smooth_theory: true,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if let OutlierRule::Fixed(p) = self.outliers {
            if p >= n {
                return Err(Error::invalid("p", p, format!("must be below N = {n}")));
            }
        }
        if let Bandwidth::Fixed(h) = self.bandwidth {
            if !(h.is_finite() && h > 0.0) {
                return Err(Error::invalid("h", h, "bandwidth must be positive"));
            }
        }
        if self.grid_size < 8 {
            return Err(Error::invalid(
                "grid_size",
                self.grid_size,
                "need at least 8 points",
            ));
        }
        if self.qe_grid.is_empty() {
            return Err(Error::invalid(
                "qe_grid",
                "[]",
                "need at least one candidate",
            ));
        }
        if self.qe_grid.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid(
                "qe_grid",
                format!("{:?}", self.qe_grid),
                "candidates must be positive",
            ));
        }
        if self.qe_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid(
                "qe_grid",
                format!("{:?}", self.qe_grid),
                "must be strictly increasing",
            ));
        }
        Ok(())
    }
}

/// `m` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, m: usize) -> Vec<f64> {
    if m == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..m)
        .map(|i| (a + (b - a) * i as f64 / (m - 1) as f64).exp())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub qe_hat: f64,
    pub beta_hat: f64,
    /// `(q_e, JSD)` for every candidate that could be evaluated.
    pub divergences: Vec<(f64, f64)>,
    /// Outlier count and bandwidth at the selected candidate.
    pub p_used: usize,
    pub h_used: f64,
    /// Candidates skipped because their density could not be computed.
    pub failures: Vec<(f64, String)>,
}

impl CalibrationResult {
    pub fn timescale(&self) -> f64 {
        -1.0 / self.beta_hat.ln()
    }
}

/// Drops the `p` largest values; the rest keep their order.
pub fn remove_outliers(eigenvalues: &[f64], p: usize) -> Result<Vec<f64>> {
    if p >= eigenvalues.len() {
        return Err(Error::invalid(
            "p",
            p,
            format!("must be below N = {}", eigenvalues.len()),
        ));
    }
    let mut idx: Vec<usize> = (0..eigenvalues.len()).collect();
    idx.sort_by(|&a, &b| eigenvalues[b].total_cmp(&eigenvalues[a]).then(b.cmp(&a)));
    let mut drop = vec![false; eigenvalues.len()];
    for &i in &idx[..p] {
        drop[i] = true;
    }
    Ok(eigenvalues
        .iter()
        .zip(&drop)
        .filter(|(_, &d)| !d)
        .map(|(&v, _)| v)
        .collect())
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// `0.9 · min(sd, IQR/1.34) · N^(−1/5)`; falls back to `sd` when the IQR is zero.
pub fn silverman_bandwidth(eigenvalues: &[f64]) -> Result<f64> {
    let n = eigenvalues.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "bandwidth needs N >= 2, got {n}"
        )));
    }
    if eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("eigenvalues"));
    }
    let mean = eigenvalues.iter().sum::<f64>() / n as f64;
    let sd = (eigenvalues.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let mut sorted = eigenvalues.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    if !(spread > 0.0) {
        return Err(Error::ZeroDispersion("eigenvalues are all equal".into()));
    }
    Ok(0.9 * spread * (n as f64).powf(-0.2))
}

/// Gaussian kernel density evaluated on `grid`.
pub fn kde_on_grid(eigenvalues: &[f64], h: f64, grid: &[f64]) -> Result<DensityGrid> {
    if eigenvalues.is_empty() {
        return Err(Error::InsufficientData("empty spectrum".into()));
    }
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::invalid("h", h, "bandwidth must be positive"));
    }
    let norm = 1.0 / (eigenvalues.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let densities = grid
        .iter()
        .map(|&x| {
            eigenvalues
                .iter()
                .map(|&l| (-0.5 * ((x - l) / h).powi(2)).exp())
                .sum::<f64>()
                * norm
        })
        .collect();
    Ok(DensityGrid {
        lambdas: grid.to_vec(),
        densities,
        point_mass: 0.0,
    })
}

/// Kernel density on `m` points spanning the eigenvalues ± 4h.
pub fn kde_spectrum_with(eigenvalues: &[f64], h: f64, m: usize) -> Result<DensityGrid> {
    if eigenvalues.is_empty() {
        return Err(Error::InsufficientData("empty spectrum".into()));
    }
    let lo = eigenvalues.iter().copied().fold(f64::INFINITY, f64::min) - 4.0 * h;
    let hi = eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
        + 4.0 * h;
    kde_on_grid(eigenvalues, h, &linspace(lo, hi, m.max(2)))
}

pub fn kde_spectrum(eigenvalues: &[f64], h: f64) -> Result<DensityGrid> {
    kde_spectrum_with(eigenvalues, h, 512)
}

fn linspace(a: f64, b: f64, m: usize) -> Vec<f64> {
    (0..m)
        .map(|i| a + (b - a) * i as f64 / (m - 1) as f64)
        .collect()
}

/// Convolution of a density sampled on a uniform grid with a Gaussian kernel.
fn gaussian_smooth(grid: &[f64], values: &[f64], h: f64) -> Vec<f64> {
    let step = grid[1] - grid[0];
    let norm = step / (h * (2.0 * std::f64::consts::PI).sqrt());
    grid.iter()
        .map(|&x| {
            grid.iter()
                .zip(values)
                .map(|(&y, &v)| v * (-0.5 * ((x - y) / h).powi(2)).exp())
                .sum::<f64>()
                * norm
        })
        .collect()
}

/// Jensen–Shannon divergence (natural log) between two densities on the same
/// grid, each renormalized to a discrete distribution over grid points.
pub fn jsd(p: &DensityGrid, q: &DensityGrid) -> Result<f64> {
    if p.lambdas != q.lambdas {
        return Err(Error::mismatch(
            "JSD grids",
            p.lambdas.len(),
            q.lambdas.len(),
        ));
    }
    jsd_discrete(&p.densities, &q.densities)
}

/// JSD between two nonnegative weight vectors after normalization.
pub fn jsd_discrete(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::mismatch("JSD cells", p.len(), q.len()));
    }
    if p.iter().chain(q).any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::invalid(
            "density",
            "negative or non-finite",
            "JSD needs nonnegative masses",
        ));
    }
    let sp: f64 = p.iter().sum();
    let sq: f64 = q.iter().sum();
    if sp <= 0.0 || sq <= 0.0 {
        return Err(Error::ZeroDispersion("density with zero total mass".into()));
    }
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let (a, b) = (a / sp, b / sq);
        let m = 0.5 * (a + b);
        if a > 0.0 {
            total += 0.5 * a * (a / m).ln();
        }
        if b > 0.0 {
            total += 0.5 * b * (b / m).ln();
        }
    }
    Ok(total.clamp(0.0, std::f64::consts::LN_2))
}

pub fn beta_from_qe(q_e: f64, n: usize) -> Result<f64> {
    if !(q_e.is_finite() && q_e > 0.0 && q_e < n as f64) {
        return Err(Error::invalid(
            "q_e",
            q_e,
            format!("must lie in (0, N = {n})"),
        ));
    }
    Ok(1.0 - q_e / n as f64)
}

struct Candidate {
    divergence: f64,
    p: usize,
    h: f64,
}

fn evaluate_candidate(
    eigenvalues: &[f64],
    q: f64,
    q_e: f64,
    config: &CalibrationConfig,
) -> Result<Candidate> {
    let params = LsdParams::standard(q, q_e)?;
    let p = match config.outliers {
        OutlierRule::Fixed(p) => p,
        OutlierRule::Auto => {
            let (_, upper) = spectral_edges(&params)?;
            let above = eigenvalues.iter().filter(|&&v| v > upper).count();
            above.min(eigenvalues.len() - 2)
        }
    };
    let bulk = remove_outliers(eigenvalues, p)?;
    let h = match config.bandwidth {
        Bandwidth::Fixed(h) => h,
        Bandwidth::Auto => silverman_bandwidth(&bulk)?,
    };
    let lsd = lsd_density(
        &default_grid(&params, config.grid_size)?,
        &params,
        DEFAULT_ETA,
    )?;

    let kde_lo = bulk.iter().copied().fold(f64::INFINITY, f64::min) - 4.0 * h;
    let kde_hi = bulk.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 4.0 * h;
    let margin = if config.smooth_theory { 4.0 * h } else { 0.0 };
    let lo = kde_lo.min(lsd.lambdas[0] - margin);
    let hi = kde_hi.max(lsd.lambdas[lsd.lambdas.len() - 1] + margin);
    let grid = linspace(lo, hi, config.grid_size);
    let kde = kde_on_grid(&bulk, h, &grid)?;
    let mut theory: Vec<f64> = grid.iter().map(|&x| lsd.interpolate(x)).collect();
    if config.smooth_theory {
        theory = gaussian_smooth(&grid, &theory, h);
    }
    Ok(Candidate {
        divergence: jsd_discrete(&theory, &kde.densities)?,
        p,
        h,
    })
}

/// Picks `q_e` minimizing the divergence between the limiting density and the
/// smoothed bulk of `eigenvalues` (sample covariance spectrum, `q = N/T`).
///
/// `n` is the dimension used to convert `q̂_e` into `β̂`; when `q > 1` the
/// caller passes only the `T` nonzero eigenvalues.
pub fn calibrate_qe(
    eigenvalues: &[f64],
    q: f64,
    n: usize,
    config: &CalibrationConfig,
) -> Result<CalibrationResult> {
    if eigenvalues.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "calibration needs at least 2 eigenvalues, got {}",
            eigenvalues.len()
        )));
    }
    if eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("eigenvalues"));
    }
    if !(q.is_finite() && q > 0.0) {
        return Err(Error::invalid("q", q, "must be finite and positive"));
    }
    config.validate(eigenvalues.len())?;

    let outcomes: Vec<Result<Candidate>> = config
        .qe_grid
        .par_iter()
        .map(|&q_e| evaluate_candidate(eigenvalues, q, q_e, config))
        .collect();

    let mut divergences = Vec::new();
    let mut failures = Vec::new();
    let mut best: Option<(f64, &Candidate)> = None;
    for (&q_e, outcome) in config.qe_grid.iter().zip(&outcomes) {
        match outcome {
            Ok(c) => {
                divergences.push((q_e, c.divergence));
                // strict comparison keeps the smallest q_e on ties
                if best.is_none_or(|(_, b)| c.divergence < b.divergence) {
                    best = Some((q_e, c));
                }
            }
            Err(e) => failures.push((q_e, e.to_string())),
        }
    }
    let Some((qe_hat, chosen)) = best else {
        let listing: Vec<String> = failures
            .iter()
            .map(|(q, e)| format!("q_e={q}: {e}"))
            .collect();
        return Err(Error::CalibrationFailed(listing.join("; ")));
    };
    Ok(CalibrationResult {
        qe_hat,
        beta_hat: beta_from_qe(qe_hat, n)?,
        divergences,
        p_used: chosen.p,
        h_used: chosen.h,
        failures,
    })
}

/// Calibrates on the sample covariance spectrum of a `T×N` return matrix.
pub fn calibrate_returns(
    x: &DMatrix<f64>,
    config: &CalibrationConfig,
) -> Result<CalibrationResult> {
    let (t, n) = x.shape();
    let spectrum = eigh(&sample_covariance(x)?)?;
    let eigs = spectrum.eigenvalues();
    // with N > T only the T largest eigenvalues carry information
    let informative = if n > t { &eigs[n - t..] } else { eigs };
    calibrate_qe(informative, n as f64 / t as f64, n, config)
}
