use super::{FeatureKind, FeatureVector};
use crate::error::{invalid, Error, Result};
use crate::preprocess::DiffSeries;

/// Quantile of already sorted, non-empty data.
///
/// Linear interpolation between order statistics at `h = (n - 1) * tau`.
pub fn sorted_quantile(sorted: &[f64], tau: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * tau;
    let lo = h.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
}

/// Sample quantile with order-statistic interpolation; `tau` in `[0, 1]`.
pub fn sample_quantile(values: &[f64], tau: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("sample_quantile needs at least one value"));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(invalid("tau", format!("must lie in [0, 1], got {tau}")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(invalid("values", "must be finite"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted_quantile(&sorted, tau))
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(invalid("tau", format!("quantile level must lie in (0, 1), got {tau}")))
    }
}

/// `I(x_t <= q)` for every position, false where missing.
fn indicators(series: &DiffSeries, q: f64) -> Vec<bool> {
    series
        .values
        .iter()
        .zip(&series.missing)
        .map(|(&v, &m)| !m && v <= q)
        .collect()
}

fn complete_pairs(series: &DiffSeries, lag: usize) -> usize {
    let m = &series.missing;
    (0..m.len().saturating_sub(lag)).filter(|&t| !m[t] && !m[t + lag]).count()
}

struct QuantileGrid {
    sorted: Vec<f64>,
}

impl QuantileGrid {
    fn new(series: &DiffSeries) -> Result<Self> {
        let mut sorted = series.observed();
        if sorted.is_empty() {
            return Err(Error::Empty("series has no observed values"));
        }
        sorted.sort_by(f64::total_cmp);
        Ok(Self { sorted })
    }

    fn indicators(&self, series: &DiffSeries, tau: f64) -> Vec<bool> {
        indicators(series, sorted_quantile(&self.sorted, tau))
    }
}

fn autocov_from_indicators(
    first: &[bool],
    second: &[bool],
    missing: &[bool],
    lag: usize,
    pairs: usize,
    tau: f64,
    tau_prime: f64,
) -> f64 {
    let n = first.len();
    let hits = (0..n - lag)
        .filter(|&t| !missing[t] && !missing[t + lag] && first[t] && second[t + lag])
        .count();
    hits as f64 / pairs as f64 - tau * tau_prime
}

fn lag_pairs(series: &DiffSeries, lag: usize) -> Result<usize> {
    if lag == 0 {
        return Err(invalid("lag", "must be at least 1"));
    }
    let pairs = complete_pairs(series, lag);
    if pairs < lag + 2 || pairs == 0 {
        return Err(Error::TooFewPairs { lag, pairs, needed: lag + 2 });
    }
    Ok(pairs)
}

/// Quantile autocovariance at `lag` for levels `(tau, tau_prime)`.
///
/// Quantiles come from all observed values; the mean of indicator products
/// runs over complete pairs `(t, t + lag)`.
pub fn quantile_autocov(series: &DiffSeries, lag: usize, tau: f64, tau_prime: f64) -> Result<f64> {
    check_tau(tau)?;
    check_tau(tau_prime)?;
    let pairs = lag_pairs(series, lag)?;
    let grid = QuantileGrid::new(series)?;
    let first = grid.indicators(series, tau);
    let second = grid.indicators(series, tau_prime);
    Ok(autocov_from_indicators(&first, &second, &series.missing, lag, pairs, tau, tau_prime))
}

/// QC feature vector over `lags x quantiles x quantiles`, ordered
/// lexicographically by `(lag, tau, tau')`.
pub fn qac_feature_vector(series: &DiffSeries, lags: &[usize], quantiles: &[f64]) -> Result<FeatureVector> {
    if lags.is_empty() || quantiles.is_empty() {
        return Err(invalid("qc grid", "lags and quantiles must be non-empty"));
    }
    for &tau in quantiles {
        check_tau(tau)?;
    }
    let pair_counts = lags.iter().map(|&lag| lag_pairs(series, lag)).collect::<Result<Vec<_>>>()?;
    let grid = QuantileGrid::new(series)?;
    let ind: Vec<Vec<bool>> = quantiles.iter().map(|&tau| grid.indicators(series, tau)).collect();

    let mut values = Vec::with_capacity(lags.len() * quantiles.len() * quantiles.len());
    for (&lag, &pairs) in lags.iter().zip(&pair_counts) {
        for (a, &tau) in quantiles.iter().enumerate() {
            for (b, &tau_prime) in quantiles.iter().enumerate() {
                values.push(autocov_from_indicators(&ind[a], &ind[b], &series.missing, lag, pairs, tau, tau_prime));
            }
        }
    }
    let quantile_pairs = quantiles
        .iter()
        .flat_map(|&a| quantiles.iter().map(move |&b| (a, b)))
        .collect();
    Ok(FeatureVector {
        meter_id: series.meter_id.clone(),
        kind: FeatureKind::Qc,
        values,
        k_max: 0,
        lags: lags.to_vec(),
        quantile_pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quantile_examples() {
        let x = [5.0, 1.0, 4.0, 2.0, 3.0];
        assert_eq!(sample_quantile(&x, 0.5).unwrap(), 3.0);
        assert_eq!(sample_quantile(&x, 0.0).unwrap(), 1.0);
        assert_eq!(sample_quantile(&x, 1.0).unwrap(), 5.0);
        assert_eq!(sample_quantile(&[1.0, 2.0, 3.0, 4.0], 0.5).unwrap(), 2.5);
        assert!(sample_quantile(&[], 0.5).is_err());
        assert!(sample_quantile(&[1.0], 1.5).is_err());
    }

    #[test]
    fn worked_example_one_to_ten() {
        let s = DiffSeries::complete("m", (1..=10).map(f64::from).collect());
        let g = quantile_autocov(&s, 1, 0.5, 0.5).unwrap();
        assert_abs_diff_eq!(g, 4.0 / 9.0 - 0.25, epsilon = 1e-15);
    }

    #[test]
    fn iid_uniform_is_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>()).collect();
        let s = DiffSeries::complete("u", x);
        assert!(quantile_autocov(&s, 1, 0.5, 0.5).unwrap().abs() < 0.02);
        let qc = qac_feature_vector(&s, &[1], &[0.1, 0.5, 0.9]).unwrap();
        assert_eq!(qc.len(), 9);
        assert!(qc.values.iter().all(|v| v.abs() < 0.02));
    }

    #[test]
    fn grid_order_and_agreement_with_scalar_version() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..300).map(|_| rng.random::<f64>() - 0.5).collect();
        let s = DiffSeries::complete("g", x);
        let qs = [0.1, 0.5, 0.9];
        let qc = qac_feature_vector(&s, &[1, 2], &qs).unwrap();
        assert_eq!(qc.len(), 18);
        let mut k = 0;
        for lag in [1, 2] {
            for a in qs {
                for b in qs {
                    assert_eq!(qc.values[k], quantile_autocov(&s, lag, a, b).unwrap());
                    k += 1;
                }
            }
        }
        assert_eq!(qc.quantile_pairs[1], (0.1, 0.5));
    }

    #[test]
    fn rejects_bad_levels_and_lags() {
        let s = DiffSeries::complete("m", (1..=10).map(f64::from).collect());
        assert!(quantile_autocov(&s, 0, 0.5, 0.5).is_err());
        assert!(quantile_autocov(&s, 1, 0.0, 0.5).is_err());
        assert!(quantile_autocov(&s, 9, 0.5, 0.5).is_err());
        let empty = DiffSeries { meter_id: "e".into(), values: vec![0.0; 5], missing: vec![true; 5], period: 48 };
        assert!(quantile_autocov(&empty, 1, 0.5, 0.5).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn invariant_under_cubing(seed in 0u64..10_000, len in 20usize..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..len).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
            let cubed: Vec<f64> = x.iter().map(|v| v * v * v).collect();
            let a = qac_feature_vector(&DiffSeries::complete("a", x), &[1, 3], &[0.1, 0.5, 0.9]).unwrap();
            let b = qac_feature_vector(&DiffSeries::complete("b", cubed), &[1, 3], &[0.1, 0.5, 0.9]).unwrap();
            for (u, v) in a.values.iter().zip(&b.values) {
                prop_assert!((u - v).abs() < 1e-12);
            }
        }

        #[test]
        fn entries_respect_range(seed in 0u64..10_000, len in 20usize..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut x: Vec<f64> = (0..len).map(|_| rng.random::<f64>()).collect();
            for t in 1..len {
                x[t] += 0.6 * x[t - 1];
            }
            let s = DiffSeries::complete("r", x);
            let qc = qac_feature_vector(&s, &[1], &[0.1, 0.5, 0.9]).unwrap();
            let pairs = (len - 1) as f64;
            for (v, (a, b)) in qc.values.iter().zip(&qc.quantile_pairs) {
                prop_assert!(v.is_finite());
                prop_assert!(*v >= -a * b - 1e-12);
                prop_assert!(*v <= a.min(*b) - a * b + 1.0 / pairs + 1e-12);
            }
        }
    }
}
