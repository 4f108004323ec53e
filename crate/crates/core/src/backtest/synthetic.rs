//! Synthetic return panels with persistent volatility regimes.
//!
//! Returns follow a market + sector + idiosyncratic factor model whose
//! volatilities switch between two states under a symmetric Markov chain.
//! Each state has its own relative volatilities, so the switch changes the
//! shape of the covariance and not just its overall scale.

use chrono::{Datelike, Days, NaiveDate, Weekday};
use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

use super::panel::ReturnPanel;

#[derive(Debug, Clone, PartialEq)]
pub struct RegimePanelConfig {
    pub assets: usize,
    pub days: usize,
    pub sectors: usize,
    /// Expected number of days between regime switches.
    pub mean_regime_length: f64,
    /// Typical daily return volatility.
    pub daily_vol: f64,
    pub start: NaiveDate,
}

impl RegimePanelConfig {
    pub fn new(assets: usize, days: usize) -> Self {
        Self {
            assets,
            days,
            sectors: 5,
            mean_regime_length: 750.0,
            daily_vol: 0.01,
            start: NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date"),
        }
    }
}

/// `count` consecutive weekdays starting at (or after) `start`.
pub fn business_days(start: NaiveDate, count: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(count);
    let mut d = start;
    while out.len() < count {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d + Days::new(1);
    }
    out
}

/// Draws a panel with returns, volumes and caps.
pub fn regime_panel(config: &RegimePanelConfig, seed: u64) -> Result<ReturnPanel> {
    let (n, t, k) = (config.assets, config.days, config.sectors);
    if n < 2 || t < 2 || k < 1 {
        return Err(Error::invalid(
            "panel size",
            format!("{n}x{t}, {k} sectors"),
            "need N >= 2, T >= 2, sectors >= 1",
        ));
    }
    if !(config.mean_regime_length >= 1.0) {
        return Err(Error::invalid(
            "mean_regime_length",
            config.mean_regime_length,
            "must be at least 1",
        ));
    }
    let mut rng = rng_from_seed(seed);
    let normal = |rng: &mut crate::rng::Rng| -> f64 { rng.sample(StandardNormal) };

    let betas: Vec<f64> = (0..n).map(|_| 1.0 + 0.3 * normal(&mut rng)).collect();
    let market_vol = [0.6, 1.2];
    let sector_vol: Vec<[f64; 2]> = (0..k)
        .map(|_| {
            [
                (0.5 * normal(&mut rng)).exp(),
                (0.5 * normal(&mut rng)).exp(),
            ]
        })
        .collect();
    let idio_vol: Vec<[f64; 2]> = (0..n)
        .map(|_| {
            [
                (0.6 * normal(&mut rng)).exp(),
                (0.6 * normal(&mut rng)).exp(),
            ]
        })
        .collect();
    let volume_level: Vec<f64> = (0..n).map(|_| 1e6 * normal(&mut rng).exp()).collect();
    let cap_level: Vec<f64> = (0..n)
        .map(|_| 1e9 * (1.5 * normal(&mut rng)).exp())
        .collect();

    let switch_prob = 1.0 / config.mean_regime_length;
    let mut state = usize::from(normal(&mut rng) > 0.0);
    let mut returns = DMatrix::zeros(t, n);
    let mut volumes = DMatrix::zeros(t, n);
    let mut caps = DMatrix::zeros(t, n);
    let scale = config.daily_vol / 1.5;
    let mut cap = cap_level.clone();
    for r in 0..t {
        if rng.random::<f64>() < switch_prob {
            state = 1 - state;
        }
        let m = normal(&mut rng);
        let g: Vec<f64> = (0..k).map(|_| normal(&mut rng)).collect();
        for j in 0..n {
            let s = j % k;
            let ret = scale
                * (market_vol[state] * betas[j] * m
                    + sector_vol[s][state] * g[s]
                    + idio_vol[j][state] * normal(&mut rng));
            returns[(r, j)] = ret;
            volumes[(r, j)] = volume_level[j] * (0.2 * normal(&mut rng)).exp();
            cap[j] *= ret.exp();
            caps[(r, j)] = cap[j];
        }
    }
    let assets = (0..n).map(|j| format!("S{j:04}")).collect();
    let mut panel = ReturnPanel::new(business_days(config.start, t), assets, returns)?;
    panel.volumes = Some(volumes);
    panel.caps = Some(caps);
    Ok(panel)
}
