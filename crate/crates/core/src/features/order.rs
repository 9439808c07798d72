//! Autoregressive order selection by BIC, used to pick the largest AC/PAC lag.

use super::autocorr::{acf, durbin_levinson};
use crate::error::{invalid, Error, Result};
use crate::par;
use crate::preprocess::DiffSeries;

/// BIC-optimal AR order of one series, searching `0..=p_max`.
///
/// Yule-Walker fits come from the Durbin-Levinson recursion on the sample
/// autocorrelations: `sigma2_p = gamma0 * prod(1 - phi_kk^2)` and
/// `BIC(p) = n ln(sigma2_p) + p ln(n)` with `n` the observed count. Ties go
/// to the smaller order.
pub fn bic_order(series: &DiffSeries, p_max: usize) -> Result<usize> {
    let observed = series.observed();
    let n = observed.len();
    if n < 2 {
        return Err(Error::SeriesTooShort { len: n, needed: 2 });
    }
    let mean = observed.iter().sum::<f64>() / n as f64;
    let gamma0 = observed.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    if gamma0 <= 0.0 {
        return Err(Error::Degenerate(format!("meter {}: zero variance", series.meter_id)));
    }
    if p_max == 0 {
        return Ok(0);
    }
    let rho = acf(series, p_max)?;

    let nf = n as f64;
    let mut best = (nf * gamma0.ln(), 0usize);
    // A singular recursion or non-positive innovation variance ends the search:
    // higher orders are not identifiable from these autocorrelations.
    let ratios = match durbin_levinson(&rho.values) {
        Ok(dl) => dl.variance_ratio,
        Err(Error::NearSingular { lag }) => {
            let dl = durbin_levinson(&rho.values[..lag - 1])?;
            dl.variance_ratio
        }
        Err(e) => return Err(e),
    };
    for (p, &ratio) in ratios.iter().enumerate().skip(1) {
        if !(ratio > 0.0) {
            break;
        }
        let bic = nf * (gamma0 * ratio).ln() + p as f64 * nf.ln();
        if bic < best.0 {
            best = (bic, p);
        }
    }
    Ok(best.1)
}

/// Largest BIC-selected order across a population of series.
///
/// Series that cannot be fitted are skipped with a warning; if none can be
/// fitted the call fails.
pub fn select_max_lag_bic(series_set: &[DiffSeries], p_max: usize) -> Result<usize> {
    if p_max == 0 {
        return Err(invalid("p_max", "must be at least 1"));
    }
    let orders = par::map(series_set, |s| bic_order(s, p_max));
    let mut best: Option<usize> = None;
    for (s, order) in series_set.iter().zip(orders) {
        match order {
            Ok(p) => best = Some(best.map_or(p, |b| b.max(p))),
            Err(e) => log::warn!("meter {}: skipped in order selection: {e}", s.meter_id),
        }
    }
    best.ok_or(Error::Degenerate("no series could be fitted for order selection".into()))
}
