//! Monte Carlo comparison of rotation-equivariant estimators against the
//! finite-sample optimum.
//!
//! Every estimator here keeps the eigenvectors of the exponentially-weighted
//! covariance `Ê`, so losses are computed on eigenvalues:
//! `‖U diag(a) U' − U diag(b) U'‖_F² = Σ (a_i − b_i)²`.

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::cv::{apply_positivity_floor, cv_eigenvalues_for, CvConfig, DEFAULT_FOLDS};
use crate::error::{Error, Result};
use crate::estimators::{
    auxiliary_transform, characteristic_timescale, ema_weights, estimate_ls_intensity,
    fsopt_oracle, linear_shrinkage, nonlinear_shrinkage,
};
use crate::rng::{rng_from_seed, substream};
use crate::spectral::{eigh_matrix, CovarianceMatrix};

pub const DEFAULT_EIGEN_SPEC: [(f64, f64); 3] = [(1.0, 0.2), (3.0, 0.4), (10.0, 0.4)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Estimator {
    Fsopt,
    EmaScm,
    EmaCv,
    EmaNl,
    EmaLs,
}

impl Estimator {
    pub const ALL: [Estimator; 5] = [
        Estimator::Fsopt,
        Estimator::EmaScm,
        Estimator::EmaCv,
        Estimator::EmaNl,
        Estimator::EmaLs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Fsopt => "FSOPT",
            Estimator::EmaScm => "EMA-SCM",
            Estimator::EmaCv => "EMA-CV",
            Estimator::EmaNl => "EMA-NL",
            Estimator::EmaLs => "EMA-LS",
        }
    }
}

impl std::fmt::Display for Estimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimDesign {
    pub n: usize,
    pub t: usize,
    pub beta: f64,
    /// `(eigenvalue, proportion)` blocks of the population spectrum.
    pub eigen_spec: Vec<(f64, f64)>,
    pub reps: usize,
    pub seed: u64,
    /// Reject designs whose characteristic time-scale exceeds `T`.
    pub enforce_timescale: bool,
    pub folds: usize,
}

impl SimDesign {
    pub fn new(n: usize, t: usize, beta: f64, reps: usize, seed: u64) -> Self {
        Self {
            n,
            t,
            beta,
            eigen_spec: DEFAULT_EIGEN_SPEC.to_vec(),
            reps,
            seed,
            enforce_timescale: true,
            folds: DEFAULT_FOLDS,
        }
    }

    pub fn q(&self) -> f64 {
        self.n as f64 / self.t as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::invalid("N", self.n, "need N >= 1"));
        }
        if self.t < 2 {
            return Err(Error::invalid("T", self.t, "need T >= 2"));
        }
        if self.reps < 1 {
            return Err(Error::invalid(
                "reps",
                self.reps,
                "need at least one replication",
            ));
        }
        if self.folds < 2 || self.folds > self.t {
            return Err(Error::invalid(
                "K",
                self.folds,
                format!("need 2 <= K <= T = {}", self.t),
            ));
        }
        let te = characteristic_timescale(self.beta)?;
        if self.enforce_timescale && te > self.t as f64 {
            return Err(Error::invalid(
                "beta",
                self.beta,
                format!("time-scale T_e = {te:.1} exceeds T = {}", self.t),
            ));
        }
        block_counts(self.n, &self.eigen_spec)?;
        Ok(())
    }
}

/// Eigenvalue multiplicities: `round(N·p)` per block, remainder to the block
/// with the largest eigenvalue.
pub fn block_counts(n: usize, spec: &[(f64, f64)]) -> Result<Vec<usize>> {
    if spec.is_empty() {
        return Err(Error::invalid(
            "eigen_spec",
            "[]",
            "need at least one block",
        ));
    }
    if spec
        .iter()
        .any(|&(v, p)| !(v.is_finite() && v > 0.0 && p.is_finite() && p >= 0.0))
    {
        return Err(Error::invalid(
            "eigen_spec",
            format!("{spec:?}"),
            "values must be positive, proportions nonnegative",
        ));
    }
    let total: f64 = spec.iter().map(|b| b.1).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(
            "eigen_spec",
            format!("{spec:?}"),
            format!("proportions sum to {total}, not 1"),
        ));
    }
    let largest = (0..spec.len())
        .max_by(|&a, &b| spec[a].0.total_cmp(&spec[b].0))
        .unwrap_or(0);
    let mut counts: Vec<usize> = spec
        .iter()
        .map(|b| (n as f64 * b.1).round() as usize)
        .collect();
    let others: usize = counts
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != largest)
        .map(|(_, c)| c)
        .sum();
    if others > n {
        return Err(Error::invalid(
            "eigen_spec",
            format!("{spec:?}"),
            format!("rounded counts exceed N = {n}"),
        ));
    }
    counts[largest] = n - others;
    Ok(counts)
}

/// Diagonal population covariance with the design's eigenvalue blocks.
pub fn generate_population(design: &SimDesign) -> Result<CovarianceMatrix> {
    let counts = block_counts(design.n, &design.eigen_spec)?;
    let mut diag = Vec::with_capacity(design.n);
    for (&(value, _), &count) in design.eigen_spec.iter().zip(&counts) {
        diag.extend(std::iter::repeat_n(value, count));
    }
    CovarianceMatrix::from_diagonal(&diag)
}

/// `T` i.i.d. rows from `N(0, C)`, drawn as `Z L'` with `C = L L'`.
pub fn simulate_returns(c: &CovarianceMatrix, t: usize, seed: u64) -> Result<DMatrix<f64>> {
    let chol = c
        .as_matrix()
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite)?;
    let mut rng = rng_from_seed(seed);
    let n = c.dim();
    let mut z = DMatrix::<f64>::zeros(t, n);
    for r in 0..t {
        for col in 0..n {
            z[(r, col)] = rng.sample(StandardNormal);
        }
    }
    Ok(z * chol.l().transpose())
}

/// `(1 − ‖Σ̂ − Σ*‖²/‖Ê − Σ*‖²)·100`.
pub fn seprial(
    sigma_hat: &CovarianceMatrix,
    fsopt: &CovarianceMatrix,
    ema_scm: &CovarianceMatrix,
) -> Result<f64> {
    let n = fsopt.dim();
    for (m, what) in [(sigma_hat, "estimate"), (ema_scm, "EMA-SCM")] {
        if m.dim() != n {
            return Err(Error::mismatch(format!("SEPRIAL {what}"), n, m.dim()));
        }
    }
    let num = (sigma_hat.as_matrix() - fsopt.as_matrix()).norm_squared();
    let den = (ema_scm.as_matrix() - fsopt.as_matrix()).norm_squared();
    ratio_to_seprial(num, den)
}

/// SEPRIAL for estimators sharing the sample eigenbasis.
pub fn seprial_spectral(estimate: &[f64], fsopt: &[f64], sample: &[f64]) -> Result<f64> {
    if estimate.len() != fsopt.len() || sample.len() != fsopt.len() {
        return Err(Error::mismatch(
            "SEPRIAL eigenvalues",
            fsopt.len(),
            estimate.len().min(sample.len()),
        ));
    }
    let sq = |a: &[f64]| {
        a.iter()
            .zip(fsopt)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
    };
    ratio_to_seprial(sq(estimate), sq(sample))
}

fn ratio_to_seprial(num: f64, den: f64) -> Result<f64> {
    if den == 0.0 {
        return Err(Error::ZeroDispersion(
            "EMA-SCM coincides with the FSOPT oracle".into(),
        ));
    }
    Ok((1.0 - num / den) * 100.0)
}

/// Eigenvalues of every estimator for one simulated sample.
#[derive(Debug, Clone)]
pub struct ReplicationSpectra {
    /// Sample eigenvalues of `Ê`, ascending.
    pub sample: Vec<f64>,
    pub fsopt: Vec<f64>,
    pub cv: Vec<f64>,
    pub nl: Vec<f64>,
    pub ls: Vec<f64>,
    pub ls_intensity: f64,
}

impl ReplicationSpectra {
    pub fn eigenvalues(&self, estimator: Estimator) -> &[f64] {
        match estimator {
            Estimator::Fsopt => &self.fsopt,
            Estimator::EmaScm => &self.sample,
            Estimator::EmaCv => &self.cv,
            Estimator::EmaNl => &self.nl,
            Estimator::EmaLs => &self.ls,
        }
    }

    pub fn seprial(&self, estimator: Estimator) -> Result<f64> {
        seprial_spectral(self.eigenvalues(estimator), &self.fsopt, &self.sample)
    }
}

/// Simulates replication `rep` of `design` and applies every estimator.
pub fn run_replication(
    design: &SimDesign,
    population: &CovarianceMatrix,
    rep: u64,
) -> Result<ReplicationSpectra> {
    let x = simulate_returns(
        population,
        design.t,
        substream(design.seed, "simulation", rep),
    )?;
    let x_tilde = auxiliary_transform(&x, design.beta)?;
    let e_hat = x_tilde.tr_mul(&x_tilde) / design.t as f64;
    let spectrum = eigh_matrix(&e_hat)?;
    let sample = spectrum.eigenvalues().to_vec();

    let fsopt = fsopt_oracle(population, &spectrum)?;
    let weights = ema_weights(design.beta, design.t)?;
    let cv_config = CvConfig::new(design.folds, substream(design.seed, "folds", rep));
    let cv = cv_eigenvalues_for(&x_tilde, &spectrum, Some(weights.weights()), &cv_config)?.isotonic;

    let clipped: Vec<f64> = sample.iter().map(|v| v.max(0.0)).collect();
    let mut nl = nonlinear_shrinkage(&clipped, design.q())?;
    apply_positivity_floor(&mut nl);

    let rho = estimate_ls_intensity(&x_tilde)?;
    let ls = linear_shrinkage(&sample, rho)?;
    Ok(ReplicationSpectra {
        sample,
        fsopt,
        cv,
        nl,
        ls,
        ls_intensity: rho,
    })
}

/// One SEPRIAL value for one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationRecord {
    pub estimator: Estimator,
    pub n: usize,
    pub t: usize,
    pub beta: f64,
    pub rep: usize,
    pub seprial: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeprialReport {
    pub estimator: Estimator,
    pub n: usize,
    pub t: usize,
    pub beta: f64,
    pub reps: usize,
    pub mean: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub records: Vec<ReplicationRecord>,
    pub reports: Vec<SeprialReport>,
}

/// Mean and standard error (sample standard deviation over `√n`).
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Runs all replications of one design; parallel over replications with
/// results gathered in replication order.
pub fn run_design(design: &SimDesign) -> Result<ExperimentOutput> {
    design.validate()?;
    let population = generate_population(design)?;
    let per_rep: Vec<Vec<f64>> = (0..design.reps)
        .into_par_iter()
        .map(|rep| -> Result<Vec<f64>> {
            let spectra = run_replication(design, &population, rep as u64)?;
            Estimator::ALL.iter().map(|&e| spectra.seprial(e)).collect()
        })
        .collect::<Result<_>>()?;

    let mut records = Vec::with_capacity(design.reps * Estimator::ALL.len());
    let mut reports = Vec::with_capacity(Estimator::ALL.len());
    for (k, &estimator) in Estimator::ALL.iter().enumerate() {
        let values: Vec<f64> = per_rep.iter().map(|r| r[k]).collect();
        for (rep, &seprial) in values.iter().enumerate() {
            records.push(ReplicationRecord {
                estimator,
                n: design.n,
                t: design.t,
                beta: design.beta,
                rep,
                seprial,
            });
        }
        let (mean, std_error) = mean_and_se(&values);
        reports.push(SeprialReport {
            estimator,
            n: design.n,
            t: design.t,
            beta: design.beta,
            reps: design.reps,
            mean,
            std_error,
        });
    }
    Ok(ExperimentOutput { records, reports })
}

fn concat(outputs: Vec<ExperimentOutput>) -> ExperimentOutput {
    let mut all = ExperimentOutput {
        records: Vec::new(),
        reports: Vec::new(),
    };
    for o in outputs {
        all.records.extend(o.records);
        all.reports.extend(o.reports);
    }
    all
}

/// SEPRIAL over a sweep of designs (typically fixed `q`, growing `N`).
pub fn convergence_experiment(designs: &[SimDesign]) -> Result<ExperimentOutput> {
    Ok(concat(
        designs.iter().map(run_design).collect::<Result<_>>()?,
    ))
}

/// Designs for the convergence sweep at fixed `q`: `T = round(N/q)`.
pub fn convergence_designs(
    ns: &[usize],
    q: f64,
    beta: f64,
    reps: usize,
    seed: u64,
) -> Result<Vec<SimDesign>> {
    if !(q.is_finite() && q > 0.0) {
        return Err(Error::invalid("q", q, "must be positive"));
    }
    Ok(ns
        .iter()
        .map(|&n| SimDesign::new(n, (n as f64 / q).round() as usize, beta, reps, seed))
        .collect())
}

/// `N = round(√(q·NT))`, `T = round(NT/N)` for each `q`.
pub fn concentration_designs(
    q_grid: &[f64],
    nt_product: usize,
    beta: f64,
    reps: usize,
    seed: u64,
) -> Result<Vec<SimDesign>> {
    q_grid
        .iter()
        .map(|&q| {
            if !(q.is_finite() && q > 0.0) {
                return Err(Error::invalid("q", q, "must be positive"));
            }
            let n = (q * nt_product as f64).sqrt().round().max(1.0) as usize;
            let t = (nt_product as f64 / n as f64).round() as usize;
            Ok(SimDesign::new(n, t, beta, reps, seed))
        })
        .collect()
}

pub fn concentration_experiment(designs: &[SimDesign]) -> Result<ExperimentOutput> {
    convergence_experiment(designs)
}

/// One point of the shrinkage response scatter.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponsePoint {
    /// `"EMA-SCM"` rows are the 45-degree reference.
    pub estimator: Estimator,
    pub index: usize,
    pub sample: f64,
    pub estimate: f64,
}

/// Sample vs estimated eigenvalues for the first replication of `design`.
pub fn shrinkage_response(design: &SimDesign) -> Result<(Vec<ResponsePoint>, f64)> {
    design.validate()?;
    let population = generate_population(design)?;
    let spectra = run_replication(design, &population, 0)?;
    let mut points = Vec::with_capacity(Estimator::ALL.len() * design.n);
    for estimator in Estimator::ALL {
        for (index, (&sample, &estimate)) in spectra
            .sample
            .iter()
            .zip(spectra.eigenvalues(estimator))
            .enumerate()
        {
            points.push(ResponsePoint {
                estimator,
                index,
                sample,
                estimate,
            });
        }
    }
    Ok((points, spectra.ls_intensity))
}
