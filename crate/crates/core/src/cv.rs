//! K-fold cross-validated eigenvalue correction.
//!
//! For each fold `k` the eigenvectors of the covariance built without the
//! fold's rows are projected onto the held-out rows; averaging the squared
//! projections over folds gives an out-of-sample variance estimate for each
//! eigen-direction. Running this on the auxiliary (weight-scaled) data turns
//! the exponentially-weighted covariance into an ordinary Gram matrix, which
//! is what makes the folds exchangeable after shuffling.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimators::{ema_weights, scale_rows};
use crate::rng::rng_from_seed;
use crate::spectral::{eigh_matrix, CovarianceMatrix, SymmetricSpectrum};

pub const DEFAULT_FOLDS: usize = 10;

/// Isotonic eigenvalues are floored at this fraction of the largest one.
pub const POSITIVITY_FLOOR: f64 = 1e-10;

/// Assignment of `T` row indices to `K` folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    folds: usize,
    /// Zero-based fold index of every row.
    assignments: Vec<usize>,
    seed: u64,
}

impl FoldPlan {
    /// Builds a plan from explicit zero-based labels.
    pub fn from_assignments(folds: usize, assignments: Vec<usize>, seed: u64) -> Result<Self> {
        if folds < 1 {
            return Err(Error::invalid("K", folds, "need at least one fold"));
        }
        if let Some(bad) = assignments.iter().find(|&&a| a >= folds) {
            return Err(Error::invalid(
                "fold label",
                bad,
                format!("labels must be < {folds}"),
            ));
        }
        Ok(Self {
            folds,
            assignments,
            seed,
        })
    }

    pub fn folds(&self) -> usize {
        self.folds
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    /// Row indices of each fold, in ascending row order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.folds];
        for (row, &f) in self.assignments.iter().enumerate() {
            out[f].push(row);
        }
        out
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        self.members().iter().map(Vec::len).collect()
    }
}

/// Shuffles `0..T` with a ChaCha8 Fisher–Yates pass, then cuts the permutation
/// into `K` contiguous chunks (the first `T mod K` chunks get one extra row).
pub fn kfold_partition(t: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 || k > t {
        return Err(Error::invalid("K", k, format!("need 2 <= K <= T = {t}")));
    }
    let mut perm: Vec<usize> = (0..t).collect();
    perm.shuffle(&mut rng_from_seed(seed));
    let base = t / k;
    let extra = t % k;
    let mut assignments = vec![0; t];
    let mut pos = 0;
    for fold in 0..k {
        let size = base + usize::from(fold < extra);
        for &row in &perm[pos..pos + size] {
            assignments[row] = fold;
        }
        pos += size;
    }
    FoldPlan::from_assignments(k, assignments, seed)
}

/// Raw cross-validated eigenvalues of `X̃'X̃/T`.
///
/// `fold_weights`, when given, enables fold renormalization: each fold's
/// contribution is divided by the mean weight of its rows.
pub fn cv_eigenvalues(
    x_tilde: &DMatrix<f64>,
    plan: &FoldPlan,
    fold_weights: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let (t, n) = x_tilde.shape();
    if plan.len() != t {
        return Err(Error::mismatch("fold plan rows", t, plan.len()));
    }
    if let Some(w) = fold_weights {
        if w.len() != t {
            return Err(Error::mismatch("fold weights", t, w.len()));
        }
    }
    if x_tilde.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("cross-validation data"));
    }
    let members = plan.members();
    for (k, rows) in members.iter().enumerate() {
        if t - rows.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "training complement of fold {k} has {} rows",
                t - rows.len()
            )));
        }
    }
    let gram = x_tilde.tr_mul(x_tilde);
    let active = members.iter().filter(|m| !m.is_empty()).count();

    let per_fold: Vec<Vec<f64>> = members
        .par_iter()
        .filter(|rows| !rows.is_empty())
        .map(|rows| -> Result<Vec<f64>> {
            let test = x_tilde.select_rows(rows.iter());
            let train = &gram - test.tr_mul(&test);
            let spectrum = eigh_matrix(&train)?;
            let proj = &test * spectrum.eigenvectors();
            let scale = match fold_weights {
                Some(w) => {
                    let mean_w = rows.iter().map(|&r| w[r]).sum::<f64>() / rows.len() as f64;
                    1.0 / (rows.len() as f64 * mean_w)
                }
                None => 1.0 / rows.len() as f64,
            };
            Ok((0..n)
                .map(|i| proj.column(i).norm_squared() * scale)
                .collect())
        })
        .collect::<Result<_>>()?;

    let mut xi = vec![0.0; n];
    for contribution in &per_fold {
        for (acc, c) in xi.iter_mut().zip(contribution) {
            *acc += c;
        }
    }
    for v in &mut xi {
        *v /= active as f64;
    }
    if xi.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("cross-validated projections"));
    }
    Ok(xi)
}

/// Least-squares projection of `values` onto sequences that are nondecreasing
/// in `order_keys` (pool-adjacent-violators).
pub fn isotonic_regression(values: &[f64], order_keys: &[f64]) -> Result<Vec<f64>> {
    if values.len() != order_keys.len() {
        return Err(Error::mismatch(
            "isotonic order keys",
            values.len(),
            order_keys.len(),
        ));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("isotonic values"));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| order_keys[a].total_cmp(&order_keys[b]).then(a.cmp(&b)));
    let sorted: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    let fitted = pava(&sorted);
    let mut out = vec![0.0; values.len()];
    for (pos, &i) in order.iter().enumerate() {
        out[i] = fitted[pos];
    }
    Ok(out)
}

fn pava(y: &[f64]) -> Vec<f64> {
    // (sum, count) per block
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(y.len());
    for &v in y {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (s1, c1) = blocks[blocks.len() - 1];
            let (s0, c0) = blocks[blocks.len() - 2];
            if s0 / c0 as f64 > s1 / c1 as f64 {
                blocks.pop();
                let last = blocks.len() - 1;
                blocks[last] = (s0 + s1, c0 + c1);
            } else {
                break;
            }
        }
    }
    let mut out = Vec::with_capacity(y.len());
    for (s, c) in blocks {
        out.extend(std::iter::repeat_n(s / c as f64, c));
    }
    out
}

/// Floors every value at [`POSITIVITY_FLOOR`] times the largest value.
pub fn apply_positivity_floor(values: &mut [f64]) {
    let top = values.iter().copied().fold(0.0_f64, f64::max);
    let floor = if top > 0.0 {
        POSITIVITY_FLOOR * top
    } else {
        f64::MIN_POSITIVE
    };
    for v in values.iter_mut() {
        if *v < floor {
            *v = floor;
        }
    }
}

/// Cross-validated eigenvalues before and after the isotonic step.
#[derive(Debug, Clone, PartialEq)]
pub struct CvEigenvalues {
    pub raw: Vec<f64>,
    /// Isotonic fit of `raw`, floored for positivity.
    pub isotonic: Vec<f64>,
    /// Decay rate of the weighting, `None` for the unweighted estimator.
    pub beta: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvConfig {
    pub folds: usize,
    pub seed: u64,
    pub renormalize_folds: bool,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            folds: DEFAULT_FOLDS,
            seed: 0,
            renormalize_folds: false,
        }
    }
}

impl CvConfig {
    pub fn new(folds: usize, seed: u64) -> Self {
        Self {
            folds,
            seed,
            ..Self::default()
        }
    }
}

/// Output of the full cross-validation pipeline.
#[derive(Debug, Clone)]
pub struct CvFit {
    /// Spectrum of the in-sample (weighted) covariance.
    pub spectrum: SymmetricSpectrum,
    pub eigenvalues: CvEigenvalues,
    pub covariance: CovarianceMatrix,
}

/// Runs the CV pipeline on data whose rows carry observation `weights`.
pub fn weighted_cv_fit(x: &DMatrix<f64>, weights: &[f64], config: &CvConfig) -> Result<CvFit> {
    if weights.len() != x.nrows() {
        return Err(Error::mismatch(
            "observation weights",
            x.nrows(),
            weights.len(),
        ));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("data matrix"));
    }
    let x_tilde = scale_rows(x, weights);
    let t = x.nrows() as f64;
    let spectrum = eigh_matrix(&(x_tilde.tr_mul(&x_tilde) / t))?;
    let eigenvalues = cv_eigenvalues_for(&x_tilde, &spectrum, Some(weights), config)?;
    let covariance = spectrum.reconstruct(&eigenvalues.isotonic)?;
    Ok(CvFit {
        spectrum,
        eigenvalues,
        covariance,
    })
}

/// Cross-validated, isotonic and floored eigenvalues for auxiliary data whose
/// in-sample spectrum has already been computed.
pub fn cv_eigenvalues_for(
    x_tilde: &DMatrix<f64>,
    spectrum: &SymmetricSpectrum,
    weights: Option<&[f64]>,
    config: &CvConfig,
) -> Result<CvEigenvalues> {
    if spectrum.dim() != x_tilde.ncols() {
        return Err(Error::mismatch(
            "spectrum dimension",
            x_tilde.ncols(),
            spectrum.dim(),
        ));
    }
    let plan = kfold_partition(x_tilde.nrows(), config.folds, config.seed)?;
    let renorm = if config.renormalize_folds {
        weights
    } else {
        None
    };
    let raw = cv_eigenvalues(x_tilde, &plan, renorm)?;
    let mut isotonic = isotonic_regression(&raw, spectrum.eigenvalues())?;
    apply_positivity_floor(&mut isotonic);
    Ok(CvEigenvalues {
        raw,
        isotonic,
        beta: None,
    })
}

/// Cross-validated shrinkage of the exponentially-weighted covariance.
pub fn ema_cv_fit(x: &DMatrix<f64>, beta: f64, config: &CvConfig) -> Result<CvFit> {
    let profile = ema_weights(beta, x.nrows().max(1))?;
    let mut fit = weighted_cv_fit(x, profile.weights(), config)?;
    fit.eigenvalues.beta = Some(beta);
    Ok(fit)
}

pub fn ema_cv_estimate(
    x: &DMatrix<f64>,
    beta: f64,
    folds: usize,
    seed: u64,
) -> Result<CovarianceMatrix> {
    Ok(ema_cv_fit(x, beta, &CvConfig::new(folds, seed))?.covariance)
}

/// Cross-validated shrinkage of the equally-weighted sample covariance.
pub fn scm_cv_fit(x: &DMatrix<f64>, config: &CvConfig) -> Result<CvFit> {
    weighted_cv_fit(x, &vec![1.0; x.nrows()], config)
}

pub fn scm_cv_estimate(x: &DMatrix<f64>, folds: usize, seed: u64) -> Result<CovarianceMatrix> {
    Ok(scm_cv_fit(x, &CvConfig::new(folds, seed))?.covariance)
}
