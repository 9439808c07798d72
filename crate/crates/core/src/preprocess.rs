//! Log transform, short-gap imputation and daily seasonal differencing.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::ingest::LoadSeries;

/// Default seasonal period: one day of half-hour slots.
pub const DEFAULT_PERIOD: usize = 48;
/// Default longest run of missing values that gets interpolated (90 minutes).
pub const DEFAULT_MAX_GAP: usize = 3;
/// Floor used by [`ZeroPolicy::Floor`] when none is given.
pub const DEFAULT_ZERO_FLOOR: f64 = 1e-3;

/// What to do with readings of exactly zero before taking logs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "lowercase")]
pub enum ZeroPolicy {
    /// Zero readings become missing entries.
    #[default]
    Missing,
    /// Every reading is raised to at least this many kWh.
    Floor { kwh: f64 },
}

/// Log-load series `ln L_t` with missing mask.
#[derive(Debug, Clone, PartialEq)]
pub struct LogSeries {
    pub meter_id: String,
    pub values: Vec<f64>,
    pub missing: Vec<bool>,
}

impl LogSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Seasonally differenced log-load `X_t = l_{t+period} - l_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffSeries {
    pub meter_id: String,
    pub values: Vec<f64>,
    pub missing: Vec<bool>,
    pub period: usize,
}

impl DiffSeries {
    /// Wraps a complete series (no missing entries); handy for synthetic input.
    pub fn complete(meter_id: impl Into<String>, values: Vec<f64>) -> Self {
        let missing = vec![false; values.len()];
        Self {
            meter_id: meter_id.into(),
            values,
            missing,
            period: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Non-missing values in series order.
    pub fn observed(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.missing)
            .filter(|(_, &m)| !m)
            .map(|(&v, _)| v)
            .collect()
    }

    pub fn observed_count(&self) -> usize {
        self.missing.iter().filter(|&&m| !m).count()
    }
}

pub fn log_transform(series: &LoadSeries, policy: ZeroPolicy) -> Result<LogSeries> {
    if let ZeroPolicy::Floor { kwh } = policy {
        if !(kwh > 0.0 && kwh.is_finite()) {
            return Err(invalid("zero_floor", format!("must be positive, got {kwh}")));
        }
    }
    let mut values = Vec::with_capacity(series.len());
    let mut missing = Vec::with_capacity(series.len());
    for (index, (&v, &m)) in series.values.iter().zip(&series.missing).enumerate() {
        if m {
            values.push(0.0);
            missing.push(true);
            continue;
        }
        if !v.is_finite() || v < 0.0 {
            return Err(Error::InvalidValue {
                meter_id: series.meter_id.clone(),
                index,
                value: v,
            });
        }
        match policy {
            ZeroPolicy::Missing if v == 0.0 => {
                values.push(0.0);
                missing.push(true);
            }
            ZeroPolicy::Missing => {
                values.push(v.ln());
                missing.push(false);
            }
            ZeroPolicy::Floor { kwh } => {
                values.push(v.max(kwh).ln());
                missing.push(false);
            }
        }
    }
    Ok(LogSeries {
        meter_id: series.meter_id.clone(),
        values,
        missing,
    })
}

/// Linearly interpolates interior runs of at most `max_gap` missing values.
///
/// Runs touching either end of the series, and longer runs, stay missing.
pub fn impute_short_gaps(series: &LogSeries, max_gap: usize) -> LogSeries {
    let mut out = series.clone();
    if max_gap == 0 {
        return out;
    }
    let n = series.len();
    let mut i = 0;
    while i < n {
        if !series.missing[i] {
            i += 1;
            continue;
        }
        let run_start = i;
        while i < n && series.missing[i] {
            i += 1;
        }
        let run_len = i - run_start;
        if run_start == 0 || i == n || run_len > max_gap {
            continue;
        }
        let left = series.values[run_start - 1];
        let right = series.values[i];
        let span = (run_len + 1) as f64;
        for k in 0..run_len {
            let w = (k + 1) as f64 / span;
            out.values[run_start + k] = left + w * (right - left);
            out.missing[run_start + k] = false;
        }
    }
    out
}

pub fn seasonal_difference(series: &LogSeries, period: usize) -> Result<DiffSeries> {
    if period == 0 {
        return Err(invalid("period", "must be at least 1"));
    }
    if series.len() <= period {
        return Err(Error::SeriesTooShort {
            len: series.len(),
            needed: period,
        });
    }
    let n = series.len() - period;
    let mut values = Vec::with_capacity(n);
    let mut missing = Vec::with_capacity(n);
    for t in 0..n {
        let m = series.missing[t] || series.missing[t + period];
        missing.push(m);
        values.push(if m {
            0.0
        } else {
            series.values[t + period] - series.values[t]
        });
    }
    Ok(DiffSeries {
        meter_id: series.meter_id.clone(),
        values,
        missing,
        period,
    })
}

/// Full preprocessing chain: log, impute, difference.
pub fn prepare(
    series: &LoadSeries,
    policy: ZeroPolicy,
    max_gap: usize,
    period: usize,
) -> Result<DiffSeries> {
    let logged = log_transform(series, policy)?;
    let filled = impute_short_gaps(&logged, max_gap);
    seasonal_difference(&filled, period)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use chrono::DateTime;
    use proptest::prelude::*;

    fn load(values: Vec<f64>) -> LoadSeries {
        LoadSeries::complete("m", DateTime::from_timestamp(0, 0).unwrap(), values)
    }

    fn logs(values: Vec<f64>, missing: Vec<bool>) -> LogSeries {
        LogSeries {
            meter_id: "m".into(),
            values,
            missing,
        }
    }

    #[test]
    fn log_of_e_squared() {
        let out = log_transform(&load(vec![std::f64::consts::E.powi(2)]), ZeroPolicy::Missing).unwrap();
        assert_abs_diff_eq!(out.values[0], 2.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_becomes_missing_or_floored() {
        let s = load(vec![0.0, 1.0]);
        let out = log_transform(&s, ZeroPolicy::Missing).unwrap();
        assert_eq!(out.missing, vec![true, false]);
        let out = log_transform(&s, ZeroPolicy::Floor { kwh: 1e-3 }).unwrap();
        assert_abs_diff_eq!(out.values[0], (1e-3f64).ln());
        assert!(!out.missing[0]);
    }

    #[test]
    fn log_fixture() {
        let out = log_transform(&load(vec![0.5, 1.0, 2.0]), ZeroPolicy::Missing).unwrap();
        for (got, want) in out.values.iter().zip([-0.6931471805599453, 0.0, 0.6931471805599453]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-15);
        }
    }

    #[test]
    fn non_finite_input_names_meter_and_index() {
        let err = log_transform(&load(vec![1.0, f64::INFINITY]), ZeroPolicy::Missing).unwrap_err();
        match err {
            Error::InvalidValue { meter_id, index, .. } => {
                assert_eq!(meter_id, "m");
                assert_eq!(index, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(log_transform(&load(vec![1.0]), ZeroPolicy::Floor { kwh: 0.0 }).is_err());
    }

    #[test]
    fn impute_midpoint() {
        let out = impute_short_gaps(&logs(vec![1.0, 0.0, 3.0], vec![false, true, false]), 1);
        assert_eq!(out.values, vec![1.0, 2.0, 3.0]);
        assert!(out.missing.iter().all(|m| !m));
    }

    #[test]
    fn impute_leaves_long_and_boundary_runs() {
        let s = logs(vec![1.0, 0.0, 0.0, 4.0], vec![false, true, true, false]);
        assert_eq!(impute_short_gaps(&s, 1), s);
        let s = logs(vec![0.0, 1.0, 0.0], vec![true, false, true]);
        assert_eq!(impute_short_gaps(&s, 5), s);
    }

    #[test]
    fn impute_linear_two_gap() {
        let out = impute_short_gaps(&logs(vec![0.0, 9.0, 9.0, 3.0], vec![false, true, true, false]), 2);
        // oracle: straight line from (0, 0) to (3, 3)
        for (t, v) in out.values.iter().enumerate() {
            assert_abs_diff_eq!(*v, t as f64, epsilon = 1e-15);
        }
    }

    #[test]
    fn difference_examples() {
        let s = logs(vec![0.0, 1.0, 2.0, 3.0], vec![false; 4]);
        assert_eq!(seasonal_difference(&s, 2).unwrap().values, vec![2.0, 2.0]);

        let s = logs(vec![3.5; 100], vec![false; 100]);
        let d = seasonal_difference(&s, 48).unwrap();
        assert_eq!(d.len(), 52);
        assert!(d.values.iter().all(|&v| v == 0.0));

        let s = logs(vec![0.0; 48], vec![false; 48]);
        assert!(matches!(seasonal_difference(&s, 48), Err(Error::SeriesTooShort { .. })));
    }

    #[test]
    fn periodic_series_differences_to_zero() {
        let values: Vec<f64> = (0..480)
            .map(|t| (2.0 * std::f64::consts::PI * t as f64 / 48.0).sin())
            .collect();
        let d = seasonal_difference(&logs(values, vec![false; 480]), 48).unwrap();
        let worst = d.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(worst < 1e-12, "max |X| = {worst}");
    }

    #[test]
    fn difference_propagates_missing() {
        let mut missing = vec![false; 6];
        missing[3] = true;
        let d = seasonal_difference(&logs(vec![0.0; 6], missing), 2).unwrap();
        assert_eq!(d.missing, vec![false, true, false, true]);
    }

    proptest! {
        #[test]
        fn difference_is_level_invariant(
            values in proptest::collection::vec(-5.0f64..5.0, 10..80),
            c in -100.0f64..100.0,
            period in 1usize..8,
        ) {
            prop_assume!(values.len() > period);
            let n = values.len();
            let a = seasonal_difference(&logs(values.clone(), vec![false; n]), period).unwrap();
            let shifted: Vec<f64> = values.iter().map(|v| v + c).collect();
            let b = seasonal_difference(&logs(shifted, vec![false; n]), period).unwrap();
            for (x, y) in a.values.iter().zip(&b.values) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn exact_period_differences_to_zero(
            day in proptest::collection::vec(-3.0f64..3.0, 1..20),
            reps in 2usize..6,
        ) {
            let p = day.len();
            let values: Vec<f64> = day.iter().cycle().take(p * reps).copied().collect();
            let n = values.len();
            let d = seasonal_difference(&logs(values, vec![false; n]), p).unwrap();
            prop_assert!(d.values.iter().all(|v| v.abs() < 1e-12));
        }

        #[test]
        fn imputation_keeps_observed_values(
            cells in proptest::collection::vec((-3.0f64..3.0, proptest::bool::weighted(0.3)), 1..60),
            max_gap in 0usize..5,
        ) {
            let (values, missing): (Vec<f64>, Vec<bool>) = cells.into_iter().unzip();
            let s = logs(values, missing);
            let out = impute_short_gaps(&s, max_gap);
            for t in 0..s.len() {
                if !s.missing[t] {
                    prop_assert_eq!(out.values[t], s.values[t]);
                    prop_assert!(!out.missing[t]);
                }
            }
        }
    }
}
