//! Limiting spectral density of the exponentially-weighted covariance.
//!
//! Conventions: the Stieltjes transform is `G(z) = ∫ρ(t)/(z − t) dt`
//! (equivalently `(1/N) Tr (zI − E)⁻¹`), so `G(z) ~ 1/z` at infinity and
//! `Im G(z) < 0` in the upper half-plane. Densities are recovered as
//! `ρ(λ) = −(1/π) Im G(λ + i0⁺)`.
//!
//! The Blue function `B` is the functional inverse of `G`. For exponential
//! weights, `B(g) = 1/g + R(g)` with
//! `R(g) = (1/(q_e g)) · log((1 − α e g)/(1 − α g))`, `e = exp(−q_e/q)`.
//! `G(z)` is obtained by a Newton solve of `B(G) = z`.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Default imaginary offset used to evaluate densities.
pub const DEFAULT_ETA: f64 = 1e-4;
pub const DEFAULT_GRID_POINTS: usize = 512;

const NEWTON_MAX_ITER: usize = 100;
const RESIDUAL_TOLERANCE: f64 = 1e-10;
const CHUNK: usize = 32;

/// Parameters of the exponentially-weighted Marčenko–Pastur family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsdParams {
    q: f64,
    q_e: f64,
    sigma2: f64,
    alpha: f64,
    /// `exp(−q_e/q)`
    decay: f64,
    /// `1 − exp(−q_e/q)`, computed without cancellation
    one_minus_decay: f64,
}

impl LsdParams {
    pub fn new(q: f64, q_e: f64, sigma2: f64) -> Result<Self> {
        for (name, v) in [("q", q), ("q_e", q_e), ("sigma2", sigma2)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(name, v, "must be finite and positive"));
            }
        }
        let one_minus_decay = -(-q_e / q).exp_m1();
        let alpha = q_e * sigma2 / one_minus_decay;
        if !alpha.is_finite() {
            return Err(Error::invalid(
                "q_e",
                q_e,
                "alpha overflows for this (q, q_e)",
            ));
        }
        Ok(Self {
            q,
            q_e,
            sigma2,
            alpha,
            decay: (-q_e / q).exp(),
            one_minus_decay,
        })
    }

    /// Unit population variance.
    pub fn standard(q: f64, q_e: f64) -> Result<Self> {
        Self::new(q, q_e, 1.0)
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn q_e(&self) -> f64 {
        self.q_e
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Mass of the atom at zero when `q > 1`.
    pub fn point_mass(&self) -> f64 {
        if self.q > 1.0 {
            1.0 - 1.0 / self.q
        } else {
            0.0
        }
    }

    /// `L(g) = log((1 − αeg)/(1 − αg))` written as `log1p(w)`.
    fn log_ratio(&self, g: Complex64) -> Complex64 {
        let a = self.alpha;
        let w = a * g * self.one_minus_decay / (1.0 - a * g);
        complex_log1p(w)
    }

    fn log_ratio_prime(&self, g: Complex64) -> Complex64 {
        let a = self.alpha;
        a * self.one_minus_decay / ((1.0 - a * g) * (1.0 - a * self.decay * g))
    }

    fn r_transform(&self, g: Complex64) -> Complex64 {
        self.log_ratio(g) / (self.q_e * g)
    }

    /// `B(g)` and `B'(g)` without branch checks.
    fn blue_and_prime(&self, g: Complex64) -> (Complex64, Complex64) {
        let l = self.log_ratio(g);
        let lp = self.log_ratio_prime(g);
        let head = 1.0 + l / self.q_e;
        (head / g, -head / (g * g) + lp / (self.q_e * g))
    }

    fn blue_real(&self, g: f64) -> f64 {
        self.blue_and_prime(Complex64::new(g, 0.0)).0.re
    }

    fn blue_prime_real(&self, g: f64) -> f64 {
        self.blue_and_prime(Complex64::new(g, 0.0)).1.re
    }
}

/// Accurate `ln(1 + w)` for complex `w`, including `|w| ≪ 1`.
fn complex_log1p(w: Complex64) -> Complex64 {
    let re = 0.5 * (2.0 * w.re + w.norm_sqr()).ln_1p();
    let im = w.im.atan2(1.0 + w.re);
    Complex64::new(re, im)
}

/// Closed-form Marčenko–Pastur edges `((1 − √q)², (1 + √q)²)`.
pub fn mp_edges(q: f64) -> Result<(f64, f64)> {
    if !(q.is_finite() && q > 0.0) {
        return Err(Error::invalid("q", q, "must be finite and positive"));
    }
    let s = q.sqrt();
    Ok(((1.0 - s).powi(2), (1.0 + s).powi(2)))
}

/// Continuous part of the Marčenko–Pastur density (unit variance).
pub fn mp_density(lambda: f64, q: f64) -> Result<f64> {
    let (lo, hi) = mp_edges(q)?;
    if lambda <= lo || lambda >= hi || lambda <= 0.0 {
        return Ok(0.0);
    }
    Ok(((lambda - lo) * (hi - lambda)).sqrt() / (2.0 * std::f64::consts::PI * lambda * q))
}

/// Closed-form Marčenko–Pastur Stieltjes transform, `Im z ≠ 0`.
pub fn mp_stieltjes(z: Complex64, q: f64) -> Result<Complex64> {
    let (lo, hi) = mp_edges(q)?;
    let root = (z - lo).sqrt() * (z - hi).sqrt();
    Ok((z + q - 1.0 - root) / (2.0 * q * z))
}

/// Blue function of the exponentially-weighted law on the principal branch.
pub fn blue_ema(g: Complex64, params: &LsdParams) -> Result<Complex64> {
    if g == Complex64::new(0.0, 0.0) || !g.is_finite() {
        return Err(Error::invalid("g", g, "must be finite and nonzero"));
    }
    let a = params.alpha;
    let f1 = 1.0 - a * g;
    let f2 = 1.0 - a * params.decay * g;
    if f1.im == 0.0 && f1.re <= 0.0 {
        return Err(Error::BranchCut {
            factor: "1 - alpha*g",
            value: f1.to_string(),
        });
    }
    if f2.im == 0.0 && f2.re <= 0.0 {
        return Err(Error::BranchCut {
            factor: "1 - alpha*exp(-q_e/q)*g",
            value: f2.to_string(),
        });
    }
    let l = f2.ln() - f1.ln();
    Ok(1.0 / g + l / (params.q_e * g))
}

fn newton(z: Complex64, params: &LsdParams, start: Complex64) -> Option<Complex64> {
    let below = z.im > 0.0;
    let mut g = start;
    for _ in 0..NEWTON_MAX_ITER {
        let (b, db) = params.blue_and_prime(g);
        let step = (b - z) / db;
        if !step.is_finite() {
            return None;
        }
        // keep the iterate on the physical half-plane
        let mut t = 1.0;
        let mut next = g - step;
        while (next.im >= 0.0) == below && t > 1e-8 {
            t *= 0.5;
            next = g - step * t;
        }
        if (next.im >= 0.0) == below {
            return None;
        }
        let moved = (next - g).norm();
        g = next;
        if moved <= 1e-15 * g.norm() {
            break;
        }
    }
    accept(z, params, g)
}

fn accept(z: Complex64, params: &LsdParams, g: Complex64) -> Option<Complex64> {
    if !g.is_finite() || (g.im >= 0.0) == (z.im > 0.0) {
        return None;
    }
    let fixed = 1.0 / (z - params.r_transform(g));
    ((g - fixed).norm() / g.norm().max(1.0) < RESIDUAL_TOLERANCE).then_some(g)
}

fn residual(z: Complex64, params: &LsdParams, g: Complex64) -> f64 {
    let fixed = 1.0 / (z - params.r_transform(g));
    (g - fixed).norm() / g.norm().max(1.0)
}

/// Cold solve: start far from the real axis where `1/z` is accurate and walk
/// the imaginary part down to its target.
fn continuation(z: Complex64, params: &LsdParams) -> Result<Complex64> {
    let target = z.im;
    let mut eta = target.max(1.0 + z.re.abs());
    let mut g = newton(
        Complex64::new(z.re, eta),
        params,
        1.0 / Complex64::new(z.re, eta),
    )
    .ok_or_else(|| {
        non_convergence(
            Complex64::new(z.re, eta),
            params,
            1.0 / Complex64::new(z.re, eta),
        )
    })?;
    let mut ratio = 0.25;
    while eta > target {
        let next_eta = (eta * ratio).max(target);
        let zn = Complex64::new(z.re, next_eta);
        match newton(zn, params, g) {
            Some(found) => {
                g = found;
                eta = next_eta;
                ratio = (ratio * 0.5).clamp(0.01, 0.25);
            }
            None => {
                ratio = ratio.sqrt();
                if ratio > 0.999 {
                    return Err(non_convergence(zn, params, g));
                }
            }
        }
    }
    Ok(g)
}

fn non_convergence(z: Complex64, params: &LsdParams, g: Complex64) -> Error {
    Error::NonConvergence {
        iterations: NEWTON_MAX_ITER,
        residual: residual(z, params, g),
        at: z.to_string(),
    }
}

fn solve(z: Complex64, params: &LsdParams, warm: Option<Complex64>) -> Result<Complex64> {
    if let Some(start) = warm {
        if let Some(g) = newton(z, params, start) {
            return Ok(g);
        }
    }
    continuation(z, params)
}

/// Stieltjes transform `G(z)` of the limiting density, `Im z > 0`.
pub fn stieltjes_ema(z: Complex64, params: &LsdParams) -> Result<Complex64> {
    if !(z.is_finite() && z.im > 0.0) {
        return Err(Error::invalid("z", z, "need finite z with Im z > 0"));
    }
    solve(z, params, None)
}

/// Density values on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    pub lambdas: Vec<f64>,
    pub densities: Vec<f64>,
    /// Atom at zero (nonzero only when `q > 1`), kept off the grid.
    pub point_mass: f64,
}

impl DensityGrid {
    /// Trapezoidal integral of the continuous part.
    pub fn integral(&self) -> f64 {
        trapezoid(&self.lambdas, &self.densities)
    }

    /// Continuous mass plus the atom at zero.
    pub fn total_mass(&self) -> f64 {
        self.integral() + self.point_mass
    }

    /// Linear interpolation, zero outside the grid.
    pub fn interpolate(&self, lambda: f64) -> f64 {
        let xs = &self.lambdas;
        if xs.is_empty() || lambda < xs[0] || lambda > xs[xs.len() - 1] {
            return 0.0;
        }
        let j = xs.partition_point(|&x| x <= lambda);
        if j == 0 {
            return self.densities[0];
        }
        if j == xs.len() {
            return self.densities[xs.len() - 1];
        }
        let (x0, x1) = (xs[j - 1], xs[j]);
        let t = (lambda - x0) / (x1 - x0);
        self.densities[j - 1] * (1.0 - t) + self.densities[j] * t
    }
}

pub(crate) fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}

fn density_at(
    params: &LsdParams,
    lambda: f64,
    eta: f64,
    warm: Option<Complex64>,
) -> Result<(f64, Complex64)> {
    let atom = params.point_mass();
    let continuous = |z: Complex64, g: Complex64| {
        let g = if atom > 0.0 { g - atom / z } else { g };
        -g.im / std::f64::consts::PI
    };
    let z1 = Complex64::new(lambda, eta);
    let g1 = solve(z1, params, warm)?;
    let z2 = Complex64::new(lambda, 2.0 * eta);
    let g2 = solve(z2, params, Some(g1))?;
    let rho = 2.0 * continuous(z1, g1) - continuous(z2, g2);
    Ok((rho.max(0.0), g1))
}

/// Density `ρ(λ) = −(1/π) Im G(λ + iη)` with one Richardson step in `η`.
pub fn lsd_density(grid: &[f64], params: &LsdParams, eta: f64) -> Result<DensityGrid> {
    if !(eta.is_finite() && eta > 0.0) {
        return Err(Error::invalid("eta", eta, "must be finite and positive"));
    }
    if grid.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("density grid"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid(
            "grid",
            "non-increasing",
            "grid must be strictly increasing",
        ));
    }
    let chunks: Vec<Vec<f64>> = grid
        .par_chunks(CHUNK)
        .map(|chunk| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(chunk.len());
            let mut warm = None;
            for &lambda in chunk {
                let (rho, g) = density_at(params, lambda, eta, warm)?;
                out.push(rho);
                warm = Some(g);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(DensityGrid {
        lambdas: grid.to_vec(),
        densities: chunks.into_iter().flatten().collect(),
        point_mass: params.point_mass(),
    })
}

/// Grid of `m` points: logarithmic from `max(1e-6, λ₋/2)` to `λ₊/10`, then
/// linear up to `1.2 λ₊`.
pub fn default_grid(params: &LsdParams, m: usize) -> Result<Vec<f64>> {
    if m < 8 {
        return Err(Error::invalid("M", m, "need at least 8 grid points"));
    }
    let (lo, hi) = spectral_edges(params)?;
    let start = (0.5 * lo).max(1e-6);
    let split = 0.1 * hi;
    let end = 1.2 * hi;
    if start >= split {
        return Ok(linspace(start, end, m));
    }
    let m_log = m / 4;
    let m_lin = m - m_log;
    let (ls, le) = (start.ln(), split.ln());
    let mut grid: Vec<f64> = (0..m_log)
        .map(|i| (ls + (le - ls) * i as f64 / m_log as f64).exp())
        .collect();
    grid.extend(linspace(split, end, m_lin));
    Ok(grid)
}

fn linspace(a: f64, b: f64, m: usize) -> Vec<f64> {
    (0..m)
        .map(|i| a + (b - a) * i as f64 / (m - 1) as f64)
        .collect()
}

/// Density on [`default_grid`] with [`DEFAULT_ETA`].
pub fn lsd_default(params: &LsdParams) -> Result<DensityGrid> {
    lsd_density(
        &default_grid(params, DEFAULT_GRID_POINTS)?,
        params,
        DEFAULT_ETA,
    )
}

/// Bisection on a sign change of `f` between `lo` and `hi`.
fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let f_lo = f(lo);
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if (f(mid) > 0.0) == (f_lo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Critical points of `B` on the real axis mapped to the spectrum edges.
pub fn spectral_edges(params: &LsdParams) -> Result<(f64, f64)> {
    let a = params.alpha;
    let bp = |g: f64| params.blue_prime_real(g);

    // upper edge: B' goes from −∞ at 0⁺ to +∞ below the first branch point
    let cut = 1.0 / a;
    let (mut lo, mut hi) = (cut * 1e-9, cut * (1.0 - 1e-12));
    if !(bp(lo) < 0.0 && bp(hi) > 0.0) {
        // shrink the ends in case of overflow in the tails
        lo = cut * 1e-6;
        hi = cut * (1.0 - 1e-9);
        if !(bp(lo) < 0.0 && bp(hi) > 0.0) {
            return Err(Error::Bracketing {
                what: "B'(g) for the upper edge",
                lo,
                hi,
            });
        }
    }
    let g_plus = bisect(bp, lo, hi);
    let upper = params.blue_real(g_plus);

    let lower = if params.q == 1.0 {
        0.0
    } else if params.q < 1.0 {
        // B' < 0 near 0⁻ and > 0 for large negative g
        let near = -cut * 1e-9;
        let mut far = -cut;
        while bp(far) <= 0.0 {
            far *= 2.0;
            if far < -cut * 1e15 {
                return Err(Error::Bracketing {
                    what: "B'(g) for the lower edge",
                    lo: far,
                    hi: near,
                });
            }
        }
        params.blue_real(bisect(bp, far, near))
    } else {
        // beyond the second branch point both factors are negative
        let branch = 1.0 / (a * params.decay);
        let near = branch * (1.0 + 1e-12);
        let mut far = 2.0 * branch;
        while bp(far) >= 0.0 {
            far *= 2.0;
            if far > branch * 1e15 {
                return Err(Error::Bracketing {
                    what: "B'(g) for the lower edge",
                    lo: near,
                    hi: far,
                });
            }
        }
        params.blue_real(bisect(bp, near, far))
    };
    Ok((lower.max(0.0), upper))
}

/// Smaller root of `λ − ln λ = q_e + 1`, the lower edge as `q → 0`.
pub fn lower_edge_smallq(q_e: f64) -> Result<f64> {
    if !(q_e.is_finite() && q_e >= 0.0) {
        return Err(Error::invalid("q_e", q_e, "must be finite and nonnegative"));
    }
    if q_e == 0.0 {
        return Ok(1.0);
    }
    let f = |l: f64| l - l.ln() - (q_e + 1.0);
    Ok(bisect(f, (-(q_e + 2.0)).exp(), 1.0))
}
