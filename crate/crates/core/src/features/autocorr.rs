use super::{FeatureKind, FeatureVector};
use crate::error::{Error, Result};
use crate::preprocess::DiffSeries;

/// Smallest |denominator| accepted by the Durbin-Levinson recursion.
const SINGULAR_TOL: f64 = 1e-12;
/// Marginal variances below this fraction of the raw second moment count as zero.
const DEGENERATE_RATIO: f64 = 1e-24;

struct LagMoments {
    pairs: usize,
    sxx: f64,
    syy: f64,
    sxy: f64,
    raw_xx: f64,
    raw_yy: f64,
}

/// Centered second moments of the pairs `(x_t, x_{t+lag})` where both are observed.
fn lag_moments(values: &[f64], missing: &[bool], lag: usize, dense: bool) -> LagMoments {
    let n = values.len();
    let head = &values[..n - lag];
    let tail = &values[lag..];

    let (mut pairs, mut sum_x, mut sum_y) = (0usize, 0.0, 0.0);
    if dense {
        pairs = n - lag;
        sum_x = head.iter().sum();
        sum_y = tail.iter().sum();
    } else {
        for t in 0..n - lag {
            if !missing[t] && !missing[t + lag] {
                pairs += 1;
                sum_x += head[t];
                sum_y += tail[t];
            }
        }
    }
    let mut m = LagMoments { pairs, sxx: 0.0, syy: 0.0, sxy: 0.0, raw_xx: 0.0, raw_yy: 0.0 };
    if pairs == 0 {
        return m;
    }
    let mean_x = sum_x / pairs as f64;
    let mean_y = sum_y / pairs as f64;
    for t in 0..n - lag {
        if !dense && (missing[t] || missing[t + lag]) {
            continue;
        }
        let (x, y) = (head[t], tail[t]);
        let (dx, dy) = (x - mean_x, y - mean_y);
        m.sxx += dx * dx;
        m.syy += dy * dy;
        m.sxy += dx * dy;
        m.raw_xx += x * x;
        m.raw_yy += y * y;
    }
    m
}

/// Sample autocorrelations `rho(1..=k_max)`.
///
/// Each lag uses its own complete pairs: the covariance divides by the pair
/// count and is normalised by the two marginal standard deviations over the
/// same pairs. Entries are clipped to `[-1, 1]`.
pub fn acf(series: &DiffSeries, k_max: usize) -> Result<FeatureVector> {
    let values = &series.values;
    let missing = &series.missing;
    let needed = k_max + 2;
    if values.len() <= k_max {
        return Err(Error::SeriesTooShort { len: values.len(), needed: k_max });
    }
    let dense = !missing.iter().any(|&m| m);

    let mut out = Vec::with_capacity(k_max);
    for lag in 1..=k_max {
        let m = lag_moments(values, missing, lag, dense);
        if m.pairs < needed {
            return Err(Error::TooFewPairs { lag, pairs: m.pairs, needed });
        }
        if m.sxx <= DEGENERATE_RATIO * m.raw_xx
            || m.syy <= DEGENERATE_RATIO * m.raw_yy
            || m.sxx == 0.0
            || m.syy == 0.0
        {
            return Err(Error::Degenerate(format!(
                "meter {}: zero variance at lag {lag}",
                series.meter_id
            )));
        }
        let rho = m.sxy / (m.sxx * m.syy).sqrt();
        out.push(rho.clamp(-1.0, 1.0));
    }
    Ok(FeatureVector {
        meter_id: series.meter_id.clone(),
        kind: FeatureKind::Ac,
        values: out,
        k_max,
        lags: Vec::new(),
        quantile_pairs: Vec::new(),
    })
}

/// Output of [`durbin_levinson`].
#[derive(Debug, Clone, PartialEq)]
pub struct DurbinLevinson {
    /// `pacf[k-1]` is the lag-k partial autocorrelation `phi_{k,k}`.
    pub pacf: Vec<f64>,
    /// `variance_ratio[p]` is the AR(p) innovation variance over the process
    /// variance, `1 - sum_j phi_{p,j} rho_j`; entry 0 is 1.
    pub variance_ratio: Vec<f64>,
}

/// Durbin-Levinson recursion on `rho(1..=K)`.
///
/// Fails with [`Error::NearSingular`] when a denominator drops below 1e-12
/// in magnitude.
pub fn durbin_levinson(rho: &[f64]) -> Result<DurbinLevinson> {
    let k_max = rho.len();
    let r = |lag: usize| rho[lag - 1];
    let mut pacf = Vec::with_capacity(k_max);
    let mut variance_ratio = Vec::with_capacity(k_max + 1);
    variance_ratio.push(1.0);

    let mut phi: Vec<f64> = Vec::with_capacity(k_max);
    let mut next = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let mut num = r(k);
        let mut den = 1.0;
        for (j, &p) in phi.iter().enumerate() {
            num -= p * r(k - 1 - j);
            den -= p * r(j + 1);
        }
        if den.abs() < SINGULAR_TOL || !num.is_finite() {
            return Err(Error::NearSingular { lag: k });
        }
        let phi_kk = num / den;

        next.clear();
        for j in 0..phi.len() {
            next.push(phi[j] - phi_kk * phi[phi.len() - 1 - j]);
        }
        next.push(phi_kk);
        std::mem::swap(&mut phi, &mut next);

        let ratio = 1.0 - phi.iter().enumerate().map(|(j, p)| p * r(j + 1)).sum::<f64>();
        pacf.push(phi_kk);
        variance_ratio.push(ratio);
    }
    Ok(DurbinLevinson { pacf, variance_ratio })
}

/// Partial autocorrelations from an already computed AC vector.
///
/// Emitted entries are clipped to `[-1, 1]`; lag-local autocorrelations are
/// not guaranteed positive definite, so the raw recursion can overshoot.
pub fn pacf_from_acf(ac: &FeatureVector) -> Result<FeatureVector> {
    let dl = durbin_levinson(&ac.values)?;
    Ok(FeatureVector {
        meter_id: ac.meter_id.clone(),
        kind: FeatureKind::Pac,
        values: dl.pacf.into_iter().map(|p| p.clamp(-1.0, 1.0)).collect(),
        k_max: ac.k_max,
        lags: Vec::new(),
        quantile_pairs: Vec::new(),
    })
}

pub fn pacf(series: &DiffSeries, k_max: usize) -> Result<FeatureVector> {
    pacf_from_acf(&acf(series, k_max)?)
}
