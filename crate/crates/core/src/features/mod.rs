//! Per-series dependence features.
//!
//! Three families summarise a differenced load series:
//!
//! * `AC`: sample autocorrelations at lags `1..=K`;
//! * `PAC`: partial autocorrelations at lags `1..=K` (Durbin-Levinson);
//! * `QC`: quantile autocovariances over a grid of lags and quantile pairs.
//!
//! All estimators work on pairwise-complete observations, so residual
//! missing values are tolerated.

mod autocorr;
pub mod io;
mod order;
mod quantile;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use autocorr::{acf, durbin_levinson, pacf, pacf_from_acf, DurbinLevinson};
pub use order::{bic_order, select_max_lag_bic};
pub use quantile::{qac_feature_vector, quantile_autocov, sample_quantile, sorted_quantile};

use crate::error::Result;
use crate::preprocess::DiffSeries;

/// Largest autocorrelation lag used when order selection is skipped.
pub const DEFAULT_K_MAX: usize = 96;
/// Quantile autocovariance lags.
pub const DEFAULT_QC_LAGS: [usize; 1] = [1];
/// Quantile levels crossed with themselves for the QC grid.
pub const DEFAULT_QC_QUANTILES: [f64; 3] = [0.1, 0.5, 0.9];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FeatureKind {
    #[serde(rename = "AC")]
    Ac,
    #[serde(rename = "PAC")]
    Pac,
    #[serde(rename = "QC")]
    Qc,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 3] = [FeatureKind::Ac, FeatureKind::Pac, FeatureKind::Qc];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Ac => "AC",
            FeatureKind::Pac => "PAC",
            FeatureKind::Qc => "QC",
        }
    }

    /// Stable one-byte code used in binary matrix files.
    pub fn code(self) -> u8 {
        match self {
            FeatureKind::Ac => 0,
            FeatureKind::Pac => 1,
            FeatureKind::Qc => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(FeatureKind::Ac),
            1 => Some(FeatureKind::Pac),
            2 => Some(FeatureKind::Qc),
            _ => None,
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "AC" | "SAC" => Ok(FeatureKind::Ac),
            "PAC" => Ok(FeatureKind::Pac),
            "QC" | "QAC" => Ok(FeatureKind::Qc),
            other => Err(format!("unknown feature kind `{other}` (expected AC, PAC or QC)")),
        }
    }
}

/// One series' feature summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub meter_id: String,
    pub kind: FeatureKind,
    pub values: Vec<f64>,
    /// Largest lag for AC/PAC; 0 for QC.
    pub k_max: usize,
    /// Lags of the QC grid (empty for AC/PAC).
    pub lags: Vec<usize>,
    /// `(tau, tau')` pairs of the QC grid, in emission order within each lag.
    pub quantile_pairs: Vec<(f64, f64)>,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Human-readable column names, one per entry.
    pub fn names(&self) -> Vec<String> {
        match self.kind {
            FeatureKind::Ac => (1..=self.k_max).map(|j| format!("rho_{j}")).collect(),
            FeatureKind::Pac => (1..=self.k_max).map(|j| format!("pi_{j}")).collect(),
            FeatureKind::Qc => self
                .lags
                .iter()
                .flat_map(|j| {
                    self.quantile_pairs
                        .iter()
                        .map(move |(a, b)| format!("gamma_{j}_{a}_{b}"))
                })
                .collect(),
        }
    }
}

/// Settings for [`extract_features`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub k_max: usize,
    pub qc_lags: Vec<usize>,
    pub qc_quantiles: Vec<f64>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            k_max: DEFAULT_K_MAX,
            qc_lags: DEFAULT_QC_LAGS.to_vec(),
            qc_quantiles: DEFAULT_QC_QUANTILES.to_vec(),
        }
    }
}

/// The three feature vectors of one series.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesFeatures {
    pub ac: FeatureVector,
    pub pac: FeatureVector,
    pub qc: FeatureVector,
}

impl SeriesFeatures {
    pub fn get(&self, kind: FeatureKind) -> &FeatureVector {
        match kind {
            FeatureKind::Ac => &self.ac,
            FeatureKind::Pac => &self.pac,
            FeatureKind::Qc => &self.qc,
        }
    }
}

/// Computes AC, PAC and QC features; the autocorrelations are shared with PAC.
pub fn extract_features(series: &DiffSeries, config: &FeatureConfig) -> Result<SeriesFeatures> {
    let ac = acf(series, config.k_max)?;
    let pac = pacf_from_acf(&ac)?;
    let qc = qac_feature_vector(series, &config.qc_lags, &config.qc_quantiles)?;
    Ok(SeriesFeatures { ac, pac, qc })
}
