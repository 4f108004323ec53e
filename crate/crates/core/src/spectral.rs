//! Symmetric eigendecomposition and rotation-equivariant reconstruction.
//!
//! Conventions used everywhere in the crate:
//! * eigenvalues are sorted ascending;
//! * each eigenvector is sign-normalized so that its first non-negligible
//!   coordinate is positive, which makes decompositions reproducible.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative asymmetry accepted on input before a matrix is rejected.
pub const SYMMETRY_TOLERANCE: f64 = 1e-8;

/// A real symmetric N×N matrix in variance units.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    values: DMatrix<f64>,
}

impl CovarianceMatrix {
    /// Validates finiteness and symmetry, then stores the exactly symmetrized
    /// matrix `(A + A')/2`.
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() != values.ncols() {
            return Err(Error::mismatch(
                "square matrix",
                values.nrows(),
                values.ncols(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite("covariance matrix"));
        }
        let scale = values.amax().max(1.0);
        let max_diff = max_asymmetry(&values);
        if max_diff > SYMMETRY_TOLERANCE * scale {
            return Err(Error::Asymmetric { max_diff });
        }
        Ok(Self {
            values: symmetrize(values),
        })
    }

    /// Wraps a matrix the caller has built symmetric by construction.
    pub(crate) fn from_symmetric(values: DMatrix<f64>) -> Self {
        debug_assert_eq!(values.nrows(), values.ncols());
        Self {
            values: symmetrize(values),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            values: DMatrix::identity(n, n),
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        if diag.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite("diagonal"));
        }
        Ok(Self {
            values: DMatrix::from_diagonal(&DVector::from_column_slice(diag)),
        })
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.values
    }

    pub fn trace(&self) -> f64 {
        self.values.trace()
    }

    pub fn frobenius_distance(&self, other: &CovarianceMatrix) -> f64 {
        (&self.values - &other.values).norm()
    }

    /// Writes the matrix as headerless CSV with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for i in 0..self.dim() {
            let row: Vec<String> = (0..self.dim())
                .map(|j| format_full(self.values[(i, j)]))
                .collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Reads a headerless square CSV. Lines starting with `#` are skipped.
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let row = trimmed
                .split(',')
                .enumerate()
                .map(|(col, cell)| {
                    cell.trim().parse::<f64>().map_err(|e| Error::Parse {
                        location: format!("line {}, column {}", lineno + 1, col + 1),
                        message: e.to_string(),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        let n = rows.len();
        for (i, r) in rows.iter().enumerate() {
            if r.len() != n {
                return Err(Error::mismatch(
                    format!("row {} of covariance CSV", i + 1),
                    n,
                    r.len(),
                ));
            }
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }
}

/// Formats a float with 17 significant digits.
pub fn format_full(v: f64) -> String {
    format!("{v:.16e}")
}

fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for j in 0..n {
        for i in (j + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

fn symmetrize(mut m: DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
    m
}

/// Eigenvalues (ascending) and matching orthonormal eigenvectors (columns).
#[derive(Debug, Clone)]
pub struct SymmetricSpectrum {
    eigenvalues: Vec<f64>,
    eigenvectors: DMatrix<f64>,
}

impl SymmetricSpectrum {
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Builds `Σ ξ_i v_i v_i'` from this spectrum's eigenvectors.
    pub fn reconstruct(&self, new_eigenvalues: &[f64]) -> Result<CovarianceMatrix> {
        reconstruct(self, new_eigenvalues)
    }
}

/// Symmetric eigendecomposition with ascending eigenvalues and the
/// first-coordinate-positive sign convention.
pub fn eigh(matrix: &CovarianceMatrix) -> Result<SymmetricSpectrum> {
    eigh_matrix(matrix.as_matrix())
}

/// Same as [`eigh`] but on a raw matrix that the caller guarantees symmetric.
pub(crate) fn eigh_matrix(m: &DMatrix<f64>) -> Result<SymmetricSpectrum> {
    let n = m.nrows();
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("eigh input"));
    }
    if n == 0 {
        return Ok(SymmetricSpectrum {
            eigenvalues: Vec::new(),
            eigenvectors: DMatrix::zeros(0, 0),
        });
    }
    let decomposition = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        decomposition.eigenvalues[a]
            .total_cmp(&decomposition.eigenvalues[b])
            .then(a.cmp(&b))
    });
    let eigenvalues: Vec<f64> = order
        .iter()
        .map(|&k| decomposition.eigenvalues[k])
        .collect();
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let col = decomposition.eigenvectors.column(src);
        let sign = sign_of_first_nonzero(col.as_slice());
        for i in 0..n {
            eigenvectors[(i, dst)] = sign * col[i];
        }
    }
    if eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("eigenvalues"));
    }
    Ok(SymmetricSpectrum {
        eigenvalues,
        eigenvectors,
    })
}

fn sign_of_first_nonzero(v: &[f64]) -> f64 {
    let scale = v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()));
    let threshold = 1e-10 * scale;
    v.iter()
        .find(|x| x.abs() > threshold)
        .map(|x| if *x < 0.0 { -1.0 } else { 1.0 })
        .unwrap_or(1.0)
}

/// `Σ ξ_i v_i v_i'` with the eigenvectors of `spectrum`.
pub fn reconstruct(
    spectrum: &SymmetricSpectrum,
    new_eigenvalues: &[f64],
) -> Result<CovarianceMatrix> {
    let n = spectrum.dim();
    if new_eigenvalues.len() != n {
        return Err(Error::mismatch(
            "reconstruct eigenvalues",
            n,
            new_eigenvalues.len(),
        ));
    }
    if new_eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("reconstruct eigenvalues"));
    }
    let v = &spectrum.eigenvectors;
    let mut scaled = v.clone();
    for (j, xi) in new_eigenvalues.iter().enumerate() {
        scaled.column_mut(j).scale_mut(*xi);
    }
    Ok(CovarianceMatrix::from_symmetric(scaled * v.transpose()))
}
