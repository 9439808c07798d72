//! Labelled synthetic load populations.
//!
//! Each series is built backwards from a chosen seasonally differenced
//! process `X`: log loads start from a daily profile and follow
//! `l_{t+48} = l_t + X_t`, so differencing the generated loads recovers `X`
//! up to rounding. Every series draws from its own ChaCha stream, so any
//! single series can be regenerated independently of the others.

use std::f64::consts::PI;
use std::io::Write;

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::ingest::{LoadSeries, SLOTS_PER_DAY};
use crate::par;

const BURN_IN: usize = 500;

/// Generating process for the differenced log load.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "process", rename_all = "snake_case")]
pub enum Process {
    /// `X_t = phi X_{t-1} + e_t`.
    Ar1 { phi: f64 },
    /// `X_t = e_t + theta e_{t-period}`.
    SeasonalMa { theta: f64, period: usize },
    /// Two-regime threshold autoregression:
    /// `X_t = low X_{t-1} + e_t` if `X_{t-1} <= 0`, else `high X_{t-1} + e_t`.
    Threshold { low: f64, high: f64 },
}

impl Process {
    pub fn name(&self) -> &'static str {
        match self {
            Process::Ar1 { .. } => "ar1",
            Process::SeasonalMa { .. } => "seasonal_ma",
            Process::Threshold { .. } => "threshold",
        }
    }

    /// `n` values driven by Gaussian innovations with standard deviation `sigma`.
    pub fn simulate<R: Rng>(&self, n: usize, sigma: f64, rng: &mut R) -> Vec<f64> {
        let total = n + BURN_IN;
        let e: Vec<f64> = (0..total)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                sigma * z
            })
            .collect();
        let mut x = vec![0.0; total];
        for t in 0..total {
            x[t] = match *self {
                Process::Ar1 { phi } => e[t] + if t > 0 { phi * x[t - 1] } else { 0.0 },
                Process::SeasonalMa { theta, period } => e[t] + if t >= period { theta * e[t - period] } else { 0.0 },
                Process::Threshold { low, high } => {
                    let prev = if t > 0 { x[t - 1] } else { 0.0 };
                    e[t] + if prev <= 0.0 { low * prev } else { high * prev }
                }
            };
        }
        x.split_off(BURN_IN)
    }
}

/// The three reference processes: AR(1) with `phi = 0.8`, a daily seasonal
/// MA and a threshold autoregression.
pub fn default_processes() -> Vec<Process> {
    vec![
        Process::Ar1 { phi: 0.8 },
        Process::SeasonalMa { theta: 0.8, period: SLOTS_PER_DAY },
        Process::Threshold { low: 0.9, high: -0.6 },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub series: usize,
    pub days: usize,
    /// Innovation standard deviation of `X`.
    pub sigma: f64,
    pub seed: u64,
    /// Probability that any one reading is dropped.
    pub missing_rate: f64,
    /// Share of series replaced by a constant (degenerate) load.
    pub degenerate_fraction: f64,
    pub processes: Vec<Process>,
    pub start: DateTime<Utc>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            series: 600,
            days: 90,
            sigma: 0.1,
            seed: 42,
            missing_rate: 0.0,
            degenerate_fraction: 0.0,
            processes: default_processes(),
            start: DateTime::from_timestamp(1_356_998_400, 0).expect("valid instant"), // 2013-01-01
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.series == 0 {
            return Err(invalid("series", "must be at least 1"));
        }
        if self.days < 3 {
            return Err(invalid("days", "must be at least 3"));
        }
        if self.processes.is_empty() {
            return Err(invalid("processes", "need at least one process"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(invalid("sigma", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return Err(invalid("missing_rate", "must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.degenerate_fraction) {
            return Err(invalid("degenerate_fraction", "must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.days * SLOTS_PER_DAY
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn meter_id(&self, index: usize) -> String {
        let width = self.series.saturating_sub(1).to_string().len();
        format!("S{index:0width$}")
    }

    /// Which series are degenerate; the same for a given seed and size.
    pub fn degenerate_mask(&self) -> Vec<bool> {
        let count = (self.degenerate_fraction * self.series as f64).round() as usize;
        let mut order: Vec<usize> = (0..self.series).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(u64::MAX);
        order.shuffle(&mut rng);
        let mut mask = vec![false; self.series];
        for &i in &order[..count] {
            mask[i] = true;
        }
        mask
    }
}

/// One generated meter and its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSeries {
    pub load: LoadSeries,
    /// Index into [`SynthConfig::processes`].
    pub class: usize,
    pub degenerate: bool,
}

fn daily_profile(slot: usize) -> f64 {
    let hour = slot as f64 / 2.0;
    let base = 0.35 + 0.1 * (2.0 * PI * (hour - 9.0) / 24.0).sin();
    let evening = 0.45 * (-((hour - 19.0) / 2.0).powi(2)).exp();
    let morning = 0.2 * (-((hour - 7.5) / 1.2).powi(2)).exp();
    base + evening + morning
}

/// Generates series `index` of the population (class `index % processes`).
pub fn generate_one(config: &SynthConfig, index: usize, degenerate: bool) -> SynthSeries {
    let class = index % config.processes.len();
    let process = config.processes[class];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64);

    let len = config.len();
    let z: f64 = StandardNormal.sample(&mut rng);
    let level = (0.3 * z).exp();
    let values: Vec<f64> = if degenerate {
        vec![level * 0.5; len]
    } else {
        let x = process.simulate(len - SLOTS_PER_DAY, config.sigma, &mut rng);
        let mut log_load: Vec<f64> = (0..SLOTS_PER_DAY).map(|s| (level * daily_profile(s)).ln()).collect();
        log_load.reserve(len - SLOTS_PER_DAY);
        for (t, xt) in x.iter().enumerate() {
            let next = log_load[t] + xt;
            log_load.push(next);
        }
        log_load.into_iter().map(f64::exp).collect()
    };
    let missing: Vec<bool> = (0..len).map(|_| config.missing_rate > 0.0 && rng.random::<f64>() < config.missing_rate).collect();
    let values = values.into_iter().zip(&missing).map(|(v, &m)| if m { 0.0 } else { v }).collect();

    SynthSeries {
        load: LoadSeries {
            meter_id: config.meter_id(index),
            start: config.start,
            values,
            missing,
            external_label: Some(process.name().to_string()),
        },
        class,
        degenerate,
    }
}

/// Generates the whole population in parallel, in index order.
pub fn generate(config: &SynthConfig) -> Result<Vec<SynthSeries>> {
    config.validate()?;
    let mask = config.degenerate_mask();
    Ok(par::map_range(config.series, |i| generate_one(config, i, mask[i])))
}

/// Writes `meter_id,class,process,degenerate`.
pub fn write_truth_csv<W: Write>(config: &SynthConfig, series: &[SynthSeries], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["meter_id", "class", "process", "degenerate"])?;
    for s in series {
        w.write_record([
            s.load.meter_id.clone(),
            s.class.to_string(),
            config.processes[s.class].name().to_string(),
            s.degenerate.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::{prepare, ZeroPolicy};

    fn small() -> SynthConfig {
        SynthConfig { series: 6, days: 5, ..SynthConfig::default() }
    }

    #[test]
    fn differencing_recovers_the_process() {
        let config = small();
        for i in 0..config.series {
            let s = generate_one(&config, i, false);
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(i as u64);
            let _level: f64 = StandardNormal.sample(&mut rng);
            let x = config.processes[s.class].simulate(config.len() - 48, config.sigma, &mut rng);
            let d = prepare(&s.load, ZeroPolicy::Missing, 0, 48).unwrap();
            for (a, b) in d.values.iter().zip(&x) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn generation_is_reproducible_and_labelled() {
        let config = small();
        let a = generate(&config).unwrap();
        let b = generate(&config).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[4].class, 1);
        assert_eq!(a[4].load.external_label.as_deref(), Some("seasonal_ma"));
        assert_eq!(a[4].load.meter_id, "S4");
        assert_eq!(a[0].load.len(), 5 * 48);
        assert!(a.iter().all(|s| s.load.values.iter().all(|v| *v > 0.0)));
    }

    #[test]
    fn degenerate_count_and_shape() {
        let config = SynthConfig { series: 50, days: 3, degenerate_fraction: 0.1, ..SynthConfig::default() };
        let all = generate(&config).unwrap();
        let flat: Vec<&SynthSeries> = all.iter().filter(|s| s.degenerate).collect();
        assert_eq!(flat.len(), 5);
        for s in flat {
            assert!(s.load.values.windows(2).all(|w| w[0] == w[1]));
        }
    }

    #[test]
    fn missing_injection_rate() {
        let config = SynthConfig { series: 3, days: 30, missing_rate: 0.05, ..SynthConfig::default() };
        let all = generate(&config).unwrap();
        let total: usize = all.iter().map(|s| s.load.missing_count()).sum();
        let rate = total as f64 / (3 * config.len()) as f64;
        assert!((rate - 0.05).abs() < 0.01, "{rate}");
    }

    #[test]
    fn validation() {
        assert!(SynthConfig { series: 0, ..small() }.validate().is_err());
        assert!(SynthConfig { sigma: 0.0, ..small() }.validate().is_err());
        assert!(SynthConfig { missing_rate: 1.0, ..small() }.validate().is_err());
    }
}
