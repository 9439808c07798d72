//! Flat TOML pipeline configuration and its provenance hash.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use loadclust::features::{FeatureConfig, FeatureKind};
use loadclust::hclust::{CutCriterion, Linkage};
use loadclust::preprocess::ZeroPolicy;
use loadclust::synth::SynthConfig;
use loadclust::tree::TreeParams;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Failure;

/// File name of the effective configuration kept in the output directory.
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ZeroPolicyName {
    #[default]
    Missing,
    Floor,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ImportanceMode {
    /// Mean decrease in Gini impurity of the tree fitted on all rows.
    #[default]
    Impurity,
    /// Held-out accuracy loss under column permutation, pooled over CV folds.
    Permutation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,

    pub zero_policy: ZeroPolicyName,
    pub zero_floor: f64,
    pub max_gap: usize,
    pub missing_threshold: f64,
    pub period: usize,
    /// Largest share of per-series extraction failures before the run aborts.
    pub max_drop_fraction: f64,

    pub k_max: usize,
    pub select_k: bool,
    pub p_max: usize,
    pub qc_lags: Vec<usize>,
    pub qc_quantiles: Vec<f64>,

    pub linkage: Linkage,
    #[serde(with = "cut_string")]
    pub cut_ac: Option<CutCriterion>,
    #[serde(with = "cut_string")]
    pub cut_pac: Option<CutCriterion>,
    #[serde(with = "cut_string")]
    pub cut_qc: Option<CutCriterion>,
    pub atypical_fraction: f64,
    pub standardize: bool,
    pub persist_matrix: bool,
    /// Above this many series the matrix is built in a memory-mapped file.
    pub matrix_disk_cap: usize,

    pub include_atypical: bool,
    pub chi_squared: bool,
    pub hourly_profiles: bool,

    pub tree_max_depth: usize,
    pub tree_min_leaf: usize,
    pub tree_min_impurity_decrease: f64,
    pub cv_folds: usize,
    pub importance_mode: ImportanceMode,

    pub seed: u64,

    pub synth_series: usize,
    pub synth_days: usize,
    pub synth_sigma: f64,
    pub synth_missing_rate: f64,
    pub synth_degenerate_fraction: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let tree = TreeParams::default();
        let features = FeatureConfig::default();
        let synth = SynthConfig::default();
        Self {
            input: None,
            out: None,
            zero_policy: ZeroPolicyName::Missing,
            zero_floor: loadclust::preprocess::DEFAULT_ZERO_FLOOR,
            max_gap: loadclust::preprocess::DEFAULT_MAX_GAP,
            missing_threshold: 0.10,
            period: loadclust::preprocess::DEFAULT_PERIOD,
            max_drop_fraction: 0.5,
            k_max: features.k_max,
            select_k: false,
            p_max: 96,
            qc_lags: features.qc_lags,
            qc_quantiles: features.qc_quantiles,
            linkage: Linkage::Complete,
            cut_ac: None,
            cut_pac: None,
            cut_qc: None,
            atypical_fraction: 0.01,
            standardize: false,
            persist_matrix: false,
            matrix_disk_cap: 20_000,
            include_atypical: false,
            chi_squared: true,
            hourly_profiles: false,
            tree_max_depth: tree.max_depth,
            tree_min_leaf: tree.min_leaf,
            tree_min_impurity_decrease: tree.min_impurity_decrease,
            cv_folds: 10,
            importance_mode: ImportanceMode::Impurity,
            seed: synth.seed,
            synth_series: synth.series,
            synth_days: synth.days,
            synth_sigma: synth.sigma,
            synth_missing_rate: synth.missing_rate,
            synth_degenerate_fraction: synth.degenerate_fraction,
        }
    }
}

mod cut_string {
    use loadclust::hclust::CutCriterion;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(cut: &Option<CutCriterion>, s: S) -> Result<S::Ok, S::Error> {
        match cut {
            Some(c) => s.serialize_str(&c.to_string()),
            None => s.serialize_str(""),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<CutCriterion>, D::Error> {
        let raw = String::deserialize(d)?;
        if raw.trim().is_empty() {
            return Ok(None);
        }
        raw.parse().map(Some).map_err(D::Error::custom)
    }
}

fn check(ok: bool, name: &str, reason: &str) -> Result<(), Failure> {
    if ok {
        Ok(())
    } else {
        Err(Failure::Usage(format!("config `{name}` {reason}")))
    }
}

fn unit(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, Failure> {
        toml::from_str(text).map_err(|e| Failure::Usage(format!("bad config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is plain data")
    }

    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), Failure> {
        check(self.zero_floor > 0.0 && self.zero_floor.is_finite(), "zero_floor", "must be positive")?;
        check(unit(self.missing_threshold), "missing_threshold", "must lie in [0, 1]")?;
        check(self.period >= 1, "period", "must be at least 1")?;
        check(unit(self.max_drop_fraction), "max_drop_fraction", "must lie in [0, 1]")?;
        check(self.k_max >= 1, "k_max", "must be at least 1")?;
        check(self.p_max >= 1, "p_max", "must be at least 1")?;
        check(!self.qc_lags.is_empty() && self.qc_lags.iter().all(|&l| l >= 1), "qc_lags", "must be non-empty positive lags")?;
        check(
            !self.qc_quantiles.is_empty() && self.qc_quantiles.iter().all(|&q| q > 0.0 && q < 1.0),
            "qc_quantiles",
            "must be non-empty levels in (0, 1)",
        )?;
        for (name, cut) in [("cut_ac", self.cut_ac), ("cut_pac", self.cut_pac), ("cut_qc", self.cut_qc)] {
            match cut {
                Some(CutCriterion::K(k)) => check(k >= 1, name, "needs k >= 1")?,
                Some(CutCriterion::Height(h)) => check(h.is_finite() && h >= 0.0, name, "needs a finite height >= 0")?,
                None => {}
            }
        }
        check(self.atypical_fraction >= 0.0 && self.atypical_fraction < 1.0, "atypical_fraction", "must lie in [0, 1)")?;
        check(self.tree_min_leaf >= 1, "tree_min_leaf", "must be at least 1")?;
        check(
            self.tree_min_impurity_decrease >= 0.0 && self.tree_min_impurity_decrease.is_finite(),
            "tree_min_impurity_decrease",
            "must be >= 0",
        )?;
        check(self.cv_folds >= 2, "cv_folds", "must be at least 2")?;
        self.synth().validate().map_err(|e| Failure::Usage(e.to_string()))?;
        Ok(())
    }

    /// SHA-256 over every analysis setting; paths are left out so moving
    /// the data does not change it.
    pub fn hash(&self) -> String {
        let mut bare = self.clone();
        bare.input = None;
        bare.out = None;
        let json = serde_json::to_vec(&bare).expect("config is plain data");
        hex::encode(Sha256::digest(json))
    }

    /// SHA-256 over the settings that determine the extracted features,
    /// labels and profiles. Downstream inputs must agree on it.
    pub fn data_hash(&self) -> String {
        let fields = (
            self.zero_policy,
            self.zero_floor,
            self.max_gap,
            self.missing_threshold,
            self.period,
            self.max_drop_fraction,
            (self.k_max, self.select_k, self.p_max),
            (&self.qc_lags, &self.qc_quantiles),
        );
        let json = serde_json::to_vec(&fields).expect("config is plain data");
        hex::encode(Sha256::digest(json))
    }

    pub fn zero_policy(&self) -> ZeroPolicy {
        match self.zero_policy {
            ZeroPolicyName::Missing => ZeroPolicy::Missing,
            ZeroPolicyName::Floor => ZeroPolicy::Floor { kwh: self.zero_floor },
        }
    }

    pub fn feature_config(&self, k_max: usize) -> FeatureConfig {
        FeatureConfig { k_max, qc_lags: self.qc_lags.clone(), qc_quantiles: self.qc_quantiles.clone() }
    }

    pub fn cut_for(&self, kind: FeatureKind) -> Option<CutCriterion> {
        match kind {
            FeatureKind::Ac => self.cut_ac,
            FeatureKind::Pac => self.cut_pac,
            FeatureKind::Qc => self.cut_qc,
        }
    }

    pub fn tree_params(&self) -> TreeParams {
        TreeParams {
            max_depth: self.tree_max_depth,
            min_leaf: self.tree_min_leaf,
            min_impurity_decrease: self.tree_min_impurity_decrease,
        }
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            series: self.synth_series,
            days: self.synth_days,
            sigma: self.synth_sigma,
            seed: self.seed,
            missing_rate: self.synth_missing_rate,
            degenerate_fraction: self.synth_degenerate_fraction,
            ..SynthConfig::default()
        }
    }
}
