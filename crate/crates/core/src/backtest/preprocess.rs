//! Universe selection and per-window cleaning of returns.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

use super::panel::ReturnPanel;

/// Rows `[start, start + t_in)` are in-sample, the next `t_out` rows are held out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpan {
    pub start: usize,
    pub t_in: usize,
    pub t_out: usize,
}

impl WindowSpan {
    pub fn in_sample(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.t_in
    }

    pub fn out_of_sample(&self) -> std::ops::Range<usize> {
        self.start + self.t_in..self.start + self.t_in + self.t_out
    }

    pub fn end(&self) -> usize {
        self.start + self.t_in + self.t_out
    }
}

/// Rules for picking the assets of one window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniverseRule {
    pub size: usize,
    pub corr_threshold: f64,
}

/// Pearson correlations between the columns of `x`. Columns with zero
/// variance get correlation 0 with everything else.
pub fn column_correlations(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (t, n) = x.shape();
    let mut centered = x.clone();
    let mut norms = vec![0.0; n];
    for (j, mut col) in centered.column_iter_mut().enumerate() {
        let mean = col.sum() / t as f64;
        col.add_scalar_mut(-mean);
        norms[j] = col.norm();
    }
    let gram = centered.tr_mul(&centered);
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else if norms[i] > 0.0 && norms[j] > 0.0 {
            gram[(i, j)] / (norms[i] * norms[j])
        } else {
            0.0
        }
    })
}

/// Chooses the window's assets, returned as ascending column indices.
///
/// 1. Assets with complete returns over in-sample and out-of-sample rows.
/// 2. One pass over pairs whose in-sample correlation exceeds the threshold,
///    most correlated first; the asset with lower mean in-sample volume is
///    dropped (the later column on ties or without volumes).
/// 3. The `size` largest by market cap on the last in-sample row (column
///    order when caps are absent).
pub fn build_universe(
    panel: &ReturnPanel,
    span: WindowSpan,
    rule: UniverseRule,
) -> Result<Vec<usize>> {
    if span.end() > panel.t() {
        return Err(Error::InsufficientData(format!(
            "window needs rows up to {}, panel has {}",
            span.end(),
            panel.t()
        )));
    }
    let complete: Vec<usize> = (0..panel.n())
        .filter(|&j| (span.start..span.end()).all(|r| panel.returns[(r, j)].is_finite()))
        .collect();

    let in_rows: Vec<usize> = span.in_sample().collect();
    let sub = panel
        .returns
        .select_rows(in_rows.iter())
        .select_columns(complete.iter());
    let corr = column_correlations(&sub);
    let mean_volume = |j: usize| -> f64 {
        panel.volumes.as_ref().map_or(0.0, |v| {
            let vals: Vec<f64> = in_rows
                .iter()
                .map(|&r| v[(r, j)])
                .filter(|x| x.is_finite())
                .collect();
            if vals.is_empty() {
                0.0
            } else {
                vals.iter().sum::<f64>() / vals.len() as f64
            }
        })
    };

    let m = complete.len();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for a in 0..m {
        for b in (a + 1)..m {
            let c = corr[(a, b)];
            if c > rule.corr_threshold {
                pairs.push((c, a, b));
            }
        }
    }
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut alive = vec![true; m];
    for (_, a, b) in pairs {
        if !(alive[a] && alive[b]) {
            continue;
        }
        let (va, vb) = (mean_volume(complete[a]), mean_volume(complete[b]));
        if va < vb {
            alive[a] = false;
        } else {
            alive[b] = false;
        }
    }
    let mut survivors: Vec<usize> = (0..m).filter(|&k| alive[k]).map(|k| complete[k]).collect();
    if survivors.len() < rule.size {
        return Err(Error::InsufficientData(format!(
            "only {} assets survive universe filters, {} requested",
            survivors.len(),
            rule.size
        )));
    }
    if let Some(caps) = &panel.caps {
        let last = span.start + span.t_in - 1;
        let cap = |j: usize| {
            let v = caps[(last, j)];
            if v.is_finite() {
                v
            } else {
                f64::NEG_INFINITY
            }
        };
        survivors.sort_by(|&a, &b| cap(b).total_cmp(&cap(a)).then(a.cmp(&b)));
    }
    survivors.truncate(rule.size);
    survivors.sort_unstable();
    Ok(survivors)
}

/// Lower empirical quantile `F⁻¹(p) = min{x : F(x) ≥ p}` of sorted data.
fn inverse_cdf(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let k = (p * n as f64).ceil() as usize;
    sorted[k.clamp(1, n) - 1]
}

/// Clips every entry to the pooled empirical quantiles of the window.
///
/// The non-interpolating quantile makes the operation idempotent.
pub fn winsorize(x: &DMatrix<f64>, low: f64, high: f64) -> Result<DMatrix<f64>> {
    if !(0.0..=1.0).contains(&low) || !(0.0..=1.0).contains(&high) || low >= high {
        return Err(Error::invalid(
            "winsor quantiles",
            format!("({low}, {high})"),
            "need 0 <= low < high <= 1",
        ));
    }
    if x.is_empty() {
        return Ok(x.clone());
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("winsorize input"));
    }
    let mut sorted: Vec<f64> = x.iter().copied().collect();
    sorted.sort_by(f64::total_cmp);
    let lo = if low == 0.0 {
        sorted[0]
    } else {
        inverse_cdf(&sorted, low)
    };
    let hi = inverse_cdf(&sorted, high);
    Ok(x.map(|v| v.clamp(lo, hi)))
}

/// Divides each row by its cross-sectional (population) standard deviation.
pub fn normalize_cross_section(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = x.ncols();
    if n < 2 {
        return Err(Error::invalid(
            "N",
            n,
            "cross-sectional normalization needs N >= 2",
        ));
    }
    let mut out = x.clone();
    for (r, mut row) in out.row_iter_mut().enumerate() {
        let mean = row.sum() / n as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        if !(sd > 0.0 && sd.is_finite()) {
            return Err(Error::ZeroDispersion(format!(
                "row {r} has no cross-sectional dispersion"
            )));
        }
        row.unscale_mut(sd);
    }
    Ok(out)
}
