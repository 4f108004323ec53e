//! Sample and exponentially-weighted covariance estimators, plus the
//! eigenvalue-shrinkage benchmarks they are compared against.
//!
//! Data matrices are `T × N` with one observation per row. Row 0 is the
//! **most recent** observation: it receives the largest exponential weight.
//! Nothing here demeans the data; call [`demean_columns`] first if needed.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::spectral::{CovarianceMatrix, SymmetricSpectrum};

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::invalid(
            "beta",
            beta,
            "decay rate must lie in (0, 1)",
        ));
    }
    Ok(())
}

fn check_finite(x: &DMatrix<f64>, context: &str) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite(context));
    }
    Ok(())
}

/// Diagonal observation weights of an exponentially-weighted window.
///
/// `weights[t] = T (1-β)/(1-β^T) β^t` for `t = 0..T` (index 0 = most recent),
/// so the weights average to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightProfile {
    beta: f64,
    weights: Vec<f64>,
}

impl WeightProfile {
    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Per-observation probability masses `weights[t] / T`.
    pub fn masses(&self) -> Vec<f64> {
        let t = self.weights.len() as f64;
        self.weights.iter().map(|w| w / t).collect()
    }
}

pub fn ema_weights(beta: f64, t: usize) -> Result<WeightProfile> {
    check_beta(beta)?;
    if t == 0 {
        return Err(Error::invalid("T", t, "window length must be at least 1"));
    }
    let norm = t as f64 * (1.0 - beta) / (1.0 - beta.powi(t as i32));
    let weights = (0..t).map(|k| norm * beta.powi(k as i32)).collect();
    Ok(WeightProfile { beta, weights })
}

/// Derived scale parameters of an exponentially-weighted window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmaParams {
    pub beta: f64,
    pub t: usize,
    pub n: usize,
    /// Characteristic time-scale `-1/ln β`, in observations.
    pub timescale: f64,
    /// Concentration ratio `N/T`.
    pub q: f64,
    /// Effective concentration `N(1-β)`.
    pub q_e: f64,
}

impl EmaParams {
    pub fn new(beta: f64, t: usize, n: usize) -> Result<Self> {
        if t == 0 || n == 0 {
            return Err(Error::invalid(
                "T/N",
                format!("{t}/{n}"),
                "dimensions must be positive",
            ));
        }
        Ok(Self {
            beta,
            t,
            n,
            timescale: characteristic_timescale(beta)?,
            q: n as f64 / t as f64,
            q_e: effective_concentration(n, beta)?,
        })
    }
}

pub fn characteristic_timescale(beta: f64) -> Result<f64> {
    check_beta(beta)?;
    Ok(-1.0 / beta.ln())
}

pub fn effective_concentration(n: usize, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    if n == 0 {
        return Err(Error::invalid("N", n, "dimension must be at least 1"));
    }
    Ok(n as f64 * (1.0 - beta))
}

/// Subtracts each column's sample mean.
pub fn demean_columns(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    out
}

/// `X'X / T`.
pub fn sample_covariance(x: &DMatrix<f64>) -> Result<CovarianceMatrix> {
    if x.nrows() < 2 {
        return Err(Error::InsufficientData(format!(
            "sample covariance needs T >= 2, got {}",
            x.nrows()
        )));
    }
    check_finite(x, "data matrix")?;
    let t = x.nrows() as f64;
    Ok(CovarianceMatrix::from_symmetric(x.tr_mul(x) / t))
}

/// `X' diag(w) X / T` for arbitrary nonnegative observation weights.
pub fn weighted_covariance(x: &DMatrix<f64>, weights: &[f64]) -> Result<CovarianceMatrix> {
    if weights.len() != x.nrows() {
        return Err(Error::mismatch(
            "observation weights",
            x.nrows(),
            weights.len(),
        ));
    }
    if x.nrows() == 0 {
        return Err(Error::InsufficientData("empty data matrix".into()));
    }
    check_finite(x, "data matrix")?;
    let t = x.nrows() as f64;
    let mut scaled = x.clone();
    for (mut row, w) in scaled.row_iter_mut().zip(weights) {
        row.scale_mut(w / t);
    }
    Ok(CovarianceMatrix::from_symmetric(x.tr_mul(&scaled)))
}

/// Exponentially-weighted covariance `(1-β)/(1-β^T) Σ_t β^t x_t x_t'`.
pub fn ema_covariance(x: &DMatrix<f64>, beta: f64) -> Result<CovarianceMatrix> {
    let profile = ema_weights(beta, x.nrows().max(1))?;
    if x.nrows() == 0 {
        return Err(Error::InsufficientData("empty data matrix".into()));
    }
    weighted_covariance(x, profile.weights())
}

/// One step of the recursion `β E + (1-β) x x'`.
pub fn ema_update(prev: &CovarianceMatrix, x: &[f64], beta: f64) -> Result<CovarianceMatrix> {
    check_beta(beta)?;
    if x.len() != prev.dim() {
        return Err(Error::mismatch(
            "ema_update observation",
            prev.dim(),
            x.len(),
        ));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("ema_update observation"));
    }
    let v = DVector::from_column_slice(x);
    let next = prev.as_matrix() * beta + (&v * v.transpose()) * (1.0 - beta);
    Ok(CovarianceMatrix::from_symmetric(next))
}

/// `B^{1/2} X`: row `t` scaled by the square root of its weight.
pub fn auxiliary_transform(x: &DMatrix<f64>, beta: f64) -> Result<DMatrix<f64>> {
    let profile = ema_weights(beta, x.nrows().max(1))?;
    check_finite(x, "data matrix")?;
    Ok(scale_rows(x, profile.weights()))
}

pub(crate) fn scale_rows(x: &DMatrix<f64>, weights: &[f64]) -> DMatrix<f64> {
    let mut out = x.clone();
    for (mut row, w) in out.row_iter_mut().zip(weights) {
        row.scale_mut(w.sqrt());
    }
    out
}

/// Shrinks eigenvalues linearly towards their mean: `ρ γ_i + (1-ρ) γ̄`.
pub fn linear_shrinkage(eigenvalues: &[f64], rho: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::invalid(
            "rho",
            rho,
            "shrinkage intensity must lie in [0, 1]",
        ));
    }
    if eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("eigenvalues"));
    }
    if eigenvalues.is_empty() {
        return Ok(Vec::new());
    }
    let mean = eigenvalues.iter().sum::<f64>() / eigenvalues.len() as f64;
    Ok(eigenvalues
        .iter()
        .map(|g| rho * g + (1.0 - rho) * mean)
        .collect())
}

/// Plug-in estimate of the weight `ρ` that linear shrinkage puts on the
/// sample eigenvalues, from the rows of the (possibly weighted) data matrix
/// whose Gram matrix `X'X/T` is being shrunk.
///
/// Uses the pilot statistics `d² = ‖S − μI‖²`, `b̄² = T⁻² Σ_t ‖x_t x_t' − S‖²`
/// and `ρ = 1 − min(b̄², d²)/d²`.
pub fn estimate_ls_intensity(x: &DMatrix<f64>) -> Result<f64> {
    let (t, n) = x.shape();
    if t < 2 {
        return Err(Error::InsufficientData(format!(
            "intensity needs T >= 2, got {t}"
        )));
    }
    check_finite(x, "data matrix")?;
    let s = x.tr_mul(x) / t as f64;
    let mu = s.trace() / n as f64;
    let mut d2 = s.norm_squared() - 2.0 * mu * s.trace() + mu * mu * n as f64;
    d2 = d2.max(0.0);
    if d2 <= f64::EPSILON * s.norm_squared().max(f64::MIN_POSITIVE) {
        return Ok(0.0);
    }
    let xs = x * &s;
    let s_norm2 = s.norm_squared();
    let mut b2_sum = 0.0;
    for r in 0..t {
        let row = x.row(r);
        let sq = row.norm_squared();
        let quad = row.dot(&xs.row(r));
        b2_sum += (sq * sq - 2.0 * quad + s_norm2).max(0.0);
    }
    let b_bar2 = b2_sum / (t as f64 * t as f64);
    let b2 = b_bar2.min(d2);
    Ok((1.0 - b2 / d2).clamp(0.0, 1.0))
}

const SQRT5: f64 = 2.236_067_977_499_79;

/// Kernel estimate of the Stieltjes transform `m(λ) = ∫ ρ(t)/(t − λ) dt`
/// of the sample spectral density, evaluated at each positive eigenvalue.
///
/// Epanechnikov kernel with locally adaptive bandwidth `h_j = λ_j n^{-1/3}`;
/// the real part is the kernel's Hilbert transform (`π Hf`), the imaginary part
/// is `π f`. Zero eigenvalues are excluded from the kernel sum and get `m = 0`.
pub fn kernel_stieltjes(eigenvalues: &[f64], sample_size: f64) -> Vec<Complex64> {
    let h = sample_size.powf(-1.0 / 3.0);
    let positive: Vec<f64> = eigenvalues.iter().copied().filter(|v| *v > 0.0).collect();
    let n_pos = positive.len() as f64;
    let dens_c = 3.0 / (4.0 * SQRT5);
    let hilb_lin = -3.0 / (10.0 * PI);
    let hilb_log = 3.0 / (4.0 * SQRT5 * PI);
    eigenvalues
        .iter()
        .map(|&li| {
            if li <= 0.0 || positive.is_empty() {
                return Complex64::new(0.0, 0.0);
            }
            let mut f = 0.0;
            let mut hf = 0.0;
            for &lj in &positive {
                let bw = h * lj;
                let x = (li - lj) / bw;
                let quad = 1.0 - x * x / 5.0;
                if quad > 0.0 {
                    f += dens_c * quad / bw;
                }
                let gap = SQRT5 - x.abs();
                let log_term = if gap.abs() < 1e-12 {
                    0.0
                } else {
                    hilb_log * quad * ((SQRT5 - x) / (SQRT5 + x)).abs().ln()
                };
                hf += (hilb_lin * x + log_term) / bw;
            }
            f /= n_pos;
            hf /= n_pos;
            Complex64::new(PI * hf, PI * f)
        })
        .collect()
}

/// Kernel-based nonlinear shrinkage `ξ_i = γ_i / |1 − q − q γ_i m(γ_i)|²`.
///
/// The implied sample size `T = N/q` sets the kernel bandwidth. Zero
/// eigenvalues map to zero.
pub fn nonlinear_shrinkage(eigenvalues: &[f64], q: f64) -> Result<Vec<f64>> {
    if !(q > 0.0 && q.is_finite()) {
        return Err(Error::invalid("q", q, "concentration must be positive"));
    }
    if eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("eigenvalues"));
    }
    if eigenvalues.iter().any(|v| *v < 0.0) {
        return Err(Error::invalid(
            "eigenvalues",
            "negative",
            "spectrum must be nonnegative",
        ));
    }
    if eigenvalues.iter().all(|v| *v == 0.0) {
        return Err(Error::ZeroDispersion("all-zero spectrum".into()));
    }
    let sample_size = eigenvalues.len() as f64 / q;
    let m = kernel_stieltjes(eigenvalues, sample_size);
    Ok(eigenvalues
        .iter()
        .zip(&m)
        .map(|(&g, m)| {
            if g == 0.0 {
                return 0.0;
            }
            let denom = Complex64::new(1.0 - q, 0.0) - m * (q * g);
            g / denom.norm_sqr()
        })
        .collect())
}

/// Finite-sample optimal eigenvalues `ξ*_i = v_i' C v_i` for a known
/// population covariance `C`.
pub fn fsopt_oracle(population: &CovarianceMatrix, sample: &SymmetricSpectrum) -> Result<Vec<f64>> {
    if population.dim() != sample.dim() {
        return Err(Error::mismatch(
            "fsopt dimension",
            sample.dim(),
            population.dim(),
        ));
    }
    let v = sample.eigenvectors();
    let cv = population.as_matrix() * v;
    Ok((0..sample.dim())
        .map(|i| v.column(i).dot(&cv.column(i)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use crate::spectral::eigh;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian(t: usize, n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rng_from_seed(seed);
        DMatrix::from_fn(t, n, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn sample_covariance_examples() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let s = sample_covariance(&x).unwrap();
        assert_eq!(
            s.as_matrix(),
            &DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.5])
        );

        let r = [1.5, -2.0, 0.25];
        let x = DMatrix::from_fn(4, 3, |_, j| r[j]);
        let s = sample_covariance(&x).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(s.as_matrix()[(i, j)], r[i] * r[j]);
            }
        }
        assert!(sample_covariance(&DMatrix::from_row_slice(1, 2, &[1.0, 2.0])).is_err());
        let mut bad = DMatrix::<f64>::zeros(3, 2);
        bad[(1, 1)] = f64::NAN;
        assert!(sample_covariance(&bad).is_err());
    }

    #[test]
    fn sample_covariance_is_consistent() {
        let err = |t| {
            let s = sample_covariance(&gaussian(t, 10, 77)).unwrap();
            s.frobenius_distance(&CovarianceMatrix::identity(10))
        };
        assert!(err(5000) < err(50) / 3.0);
    }

    #[test]
    fn ema_weight_examples() {
        let w = ema_weights(0.5, 2).unwrap();
        assert!((w.weights()[0] - 4.0 / 3.0).abs() < 1e-15);
        assert!((w.weights()[1] - 2.0 / 3.0).abs() < 1e-15);
        let m = w.masses();
        assert!((m[0] - 2.0 / 3.0).abs() < 1e-15 && (m[1] - 1.0 / 3.0).abs() < 1e-15);

        for &(beta, t) in &[
            (0.1, 1),
            (0.5, 7),
            (0.94, 250),
            (0.996, 1250),
            (0.9999, 3000),
        ] {
            let w = ema_weights(beta, t).unwrap();
            let mean = w.weights().iter().sum::<f64>() / t as f64;
            assert!((mean - 1.0).abs() < 1e-12, "beta={beta} T={t} mean={mean}");
            assert!(w.weights().windows(2).all(|p| p[0] > p[1]));
        }

        // geometric partial sum oracle: mass on the most recent 250 days
        let w = ema_weights(0.996, 1250).unwrap();
        let recent: f64 = w.masses()[..250].iter().sum();
        let oracle = (1.0 - 0.996_f64.powi(250)) / (1.0 - 0.996_f64.powi(1250));
        assert!((recent - oracle).abs() < 1e-12);
        // untruncated approximation 1 - beta^250; truncation at T lifts it slightly
        assert!((recent - (1.0 - 0.996_f64.powi(250))).abs() < 0.01);

        assert!(ema_weights(1.0, 3).is_err());
        assert!(ema_weights(0.0, 3).is_err());
    }

    #[test]
    fn ema_covariance_examples() {
        // uniform weights reduce to the sample covariance
        let x = gaussian(30, 4, 1);
        let uni = weighted_covariance(&x, &vec![1.0; 30]).unwrap();
        let scm = sample_covariance(&x).unwrap();
        assert!((uni.as_matrix() - scm.as_matrix()).amax() < 1e-14);

        let x1 = DMatrix::from_row_slice(1, 2, &[2.0, -1.0]);
        let e = ema_covariance(&x1, 0.7).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[4.0, -2.0, -2.0, 1.0]);
        assert!((e.as_matrix() - expect).amax() < 1e-15);

        let x2 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let e = ema_covariance(&x2, 0.5).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[2.0 / 3.0, 0.0, 0.0, 1.0 / 3.0]);
        assert!((e.as_matrix() - expect).amax() < 1e-15);
    }

    #[test]
    fn batch_equals_normalized_recursion() {
        let x = gaussian(60, 5, 4);
        let beta = 0.93;
        let mut e = CovarianceMatrix::new(DMatrix::zeros(5, 5)).unwrap();
        for r in (0..60).rev() {
            let row: Vec<f64> = x.row(r).iter().copied().collect();
            e = ema_update(&e, &row, beta).unwrap();
        }
        let scaled = e.as_matrix() / (1.0 - beta.powi(60));
        let batch = ema_covariance(&x, beta).unwrap();
        assert!((scaled - batch.as_matrix()).norm() < 1e-12);
    }

    #[test]
    fn ema_update_examples() {
        let zero = CovarianceMatrix::new(DMatrix::zeros(2, 2)).unwrap();
        let e = ema_update(&zero, &[1.0, 2.0], 0.9).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]) * 0.1;
        assert!((e.as_matrix() - expect).amax() < 1e-15);

        let e = ema_update(&CovarianceMatrix::identity(3), &[0.0; 3], 0.9).unwrap();
        assert!((e.as_matrix() - DMatrix::<f64>::identity(3, 3) * 0.9).amax() < 1e-15);
        assert!(ema_update(&zero, &[1.0], 0.9).is_err());
    }

    #[test]
    fn auxiliary_transform_reproduces_ema() {
        for (seed, beta) in [(1u64, 0.5), (2, 0.9), (3, 0.996)] {
            let x = gaussian(80, 6, seed);
            let xt = auxiliary_transform(&x, beta).unwrap();
            let via_aux = xt.tr_mul(&xt) / 80.0;
            let e = ema_covariance(&x, beta).unwrap();
            assert!((via_aux - e.as_matrix()).norm() < 1e-12);
        }
    }

    #[test]
    fn auxiliary_row_variance_decays_geometrically() {
        let beta = 0.8;
        let t = 6;
        let reps = 10_000;
        let mut second_moment = vec![0.0; t];
        for rep in 0..reps {
            let x = gaussian(t, 1, 1000 + rep as u64);
            let xt = auxiliary_transform(&x, beta).unwrap();
            for r in 0..t {
                second_moment[r] += xt[(r, 0)].powi(2) / reps as f64;
            }
        }
        let w = ema_weights(beta, t).unwrap();
        for r in 0..t {
            let rel = (second_moment[r] - w.weights()[r]).abs() / w.weights()[r];
            assert!(
                rel < 0.05,
                "row {r}: {} vs {}",
                second_moment[r],
                w.weights()[r]
            );
        }
    }

    #[test]
    fn linear_shrinkage_examples() {
        let g = [0.5, 1.0, 4.0];
        assert_eq!(linear_shrinkage(&g, 1.0).unwrap(), g.to_vec());
        let full = linear_shrinkage(&g, 0.0).unwrap();
        assert!(full.iter().all(|v| (v - 5.5 / 3.0).abs() < 1e-15));
        assert_eq!(linear_shrinkage(&[1.0, 3.0], 0.5).unwrap(), vec![1.5, 2.5]);
        assert!(linear_shrinkage(&g, 1.5).is_err());
    }

    /// Monte Carlo oracle: the ρ minimizing Frobenius loss on a grid.
    fn best_rho_on_grid(pop: &[f64], t: usize, seed: u64) -> f64 {
        let n = pop.len();
        let c = CovarianceMatrix::from_diagonal(pop).unwrap();
        let mut rng = rng_from_seed(seed);
        let x = DMatrix::from_fn(t, n, |_, j| {
            pop[j].sqrt() * rng.sample::<f64, _>(StandardNormal)
        });
        let s = eigh(&sample_covariance(&x).unwrap()).unwrap();
        let mut best = (f64::INFINITY, 0.0);
        for k in 0..=20 {
            let rho = k as f64 / 20.0;
            let xi = linear_shrinkage(s.eigenvalues(), rho).unwrap();
            let loss = s.reconstruct(&xi).unwrap().frobenius_distance(&c);
            if loss < best.0 {
                best = (loss, rho);
            }
        }
        best.1
    }

    #[test]
    fn ls_intensity_tracks_oracle() {
        let x = gaussian(2000, 20, 5);
        let rho = estimate_ls_intensity(&x).unwrap();
        assert!(
            rho < 0.15,
            "spherical population should give rho near 0, got {rho}"
        );
        assert!(best_rho_on_grid(&[1.0; 20], 2000, 5) <= 0.15);

        let pop: Vec<f64> = (1..=10).map(|k| (k * k) as f64).collect();
        let mut rng = rng_from_seed(6);
        let x = DMatrix::from_fn(5000, 10, |_, j| {
            pop[j].sqrt() * rng.sample::<f64, _>(StandardNormal)
        });
        let rho = estimate_ls_intensity(&x).unwrap();
        assert!(
            rho > 0.95,
            "well-separated population should give rho near 1, got {rho}"
        );
        assert!(best_rho_on_grid(&pop, 5000, 6) >= 0.95);

        // constant columns: degenerate but clamped
        let flat = DMatrix::from_element(10, 3, 1.0);
        let rho = estimate_ls_intensity(&flat).unwrap();
        assert!((0.0..=1.0).contains(&rho));
    }

    #[test]
    fn nonlinear_shrinkage_limits() {
        let eig: Vec<f64> = (1..=50).map(|k| 0.2 + 0.05 * k as f64).collect();
        let out = nonlinear_shrinkage(&eig, 1e-6).unwrap();
        for (a, b) in out.iter().zip(&eig) {
            assert!((a - b).abs() / b < 1e-4);
        }

        let c = 2.5;
        let q = 0.3;
        let flat = vec![c; 8];
        let out = nonlinear_shrinkage(&flat, q).unwrap();
        let m = kernel_stieltjes(&flat, 8.0 / q)[0];
        let expect = c / (Complex64::new(1.0 - q, 0.0) - m * (q * c)).norm_sqr();
        for v in &out {
            assert!((v - expect).abs() < 1e-12 * expect);
        }

        let with_zero = [0.0, 1.0, 2.0];
        let out = nonlinear_shrinkage(&with_zero, 0.5).unwrap();
        assert_eq!(out[0], 0.0);
        assert!(out[1] > 0.0 && out[2] > 0.0);
        assert!(nonlinear_shrinkage(&[0.0, 0.0], 0.5).is_err());
    }

    fn std_dev(v: &[f64]) -> f64 {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
    }

    #[test]
    fn nonlinear_shrinkage_contracts_white_spectrum() {
        let (n, t) = (500, 1000);
        let s = sample_covariance(&gaussian(t, n, 12)).unwrap();
        let eig = eigh(&s).unwrap();
        let out = nonlinear_shrinkage(eig.eigenvalues(), 0.5).unwrap();
        assert!(out.iter().all(|v| *v > 0.0));
        let disp_in = std_dev(eig.eigenvalues());
        let disp_out = std_dev(&out);
        assert!(disp_out < 0.5 * disp_in, "{disp_out} vs {disp_in}");
        let mean = out.iter().sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.1);
    }

    #[test]
    fn fsopt_examples() {
        let c = CovarianceMatrix::from_diagonal(&[3.0, 1.0, 2.0]).unwrap();
        let s = eigh(&c).unwrap();
        let xi = fsopt_oracle(&c, &s).unwrap();
        assert!(
            (xi[0] - 1.0).abs() < 1e-14
                && (xi[1] - 2.0).abs() < 1e-14
                && (xi[2] - 3.0).abs() < 1e-14
        );

        let x = gaussian(10, 4, 8);
        let s = eigh(&sample_covariance(&x).unwrap()).unwrap();
        let iso = CovarianceMatrix::new(DMatrix::<f64>::identity(4, 4) * 2.5).unwrap();
        assert!(fsopt_oracle(&iso, &s)
            .unwrap()
            .iter()
            .all(|v| (v - 2.5).abs() < 1e-12));

        // double-sum form over the population eigenbasis
        let mut rng = rng_from_seed(31);
        let a = DMatrix::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0));
        let pop =
            CovarianceMatrix::new(&a * a.transpose() + DMatrix::<f64>::identity(5, 5)).unwrap();
        let pop_spec = eigh(&pop).unwrap();
        let b = DMatrix::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0));
        let sample = eigh(&CovarianceMatrix::new(&b + b.transpose()).unwrap()).unwrap();
        let xi = fsopt_oracle(&pop, &sample).unwrap();
        for i in 0..5 {
            let mut double_sum = 0.0;
            for j in 0..5 {
                let mut overlap = 0.0;
                for k in 0..5 {
                    overlap += sample.eigenvectors()[(k, i)] * pop_spec.eigenvectors()[(k, j)];
                }
                double_sum += overlap * overlap * pop_spec.eigenvalues()[j];
            }
            assert!((xi[i] - double_sum).abs() < 1e-12);
            assert!(xi[i] >= pop_spec.eigenvalues()[0] - 1e-12);
            assert!(xi[i] <= pop_spec.eigenvalues()[4] + 1e-12);
        }
        assert!(fsopt_oracle(&CovarianceMatrix::identity(3), &sample).is_err());
    }

    #[test]
    fn timescale_and_concentration() {
        assert!((characteristic_timescale(0.94).unwrap() - 16.16).abs() < 0.01);
        assert!((characteristic_timescale(0.996).unwrap() - 249.5).abs() < 0.01);
        let mut prev = 0.0;
        for beta in [0.5, 0.9, 0.99, 0.999, 0.9999] {
            let te = characteristic_timescale(beta).unwrap();
            assert!(te > prev);
            prev = te;
        }
        assert!((effective_concentration(100, 0.996).unwrap() - 0.4).abs() < 1e-12);
        assert!((effective_concentration(500, 0.996).unwrap() - 2.0).abs() < 1e-12);
        assert!(characteristic_timescale(1.0).is_err());
        assert!(effective_concentration(0, 0.5).is_err());
        let p = EmaParams::new(0.996, 300, 100).unwrap();
        assert!((p.q - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn covariance_outputs_are_psd() {
        let x = gaussian(20, 30, 14);
        for cov in [
            sample_covariance(&x).unwrap(),
            ema_covariance(&x, 0.9).unwrap(),
        ] {
            let s = eigh(&cov).unwrap();
            let top = *s.eigenvalues().last().unwrap();
            assert!(s.eigenvalues()[0] >= -1e-10 * top);
        }
    }
}
