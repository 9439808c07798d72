//! The subcommands and the file layout they share.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use loadclust::features::io::{read_feature_binary, FeatureHeader};
use loadclust::features::{FeatureKind, FeatureVector};
use loadclust::hclust::{read_partition_csv, Partition};

use crate::config::{PipelineConfig, CONFIG_FILE};
use crate::manifest::{Manifest, OutDir};
use crate::Failure;

pub mod cluster;
pub mod evaluate;
pub mod extract;
pub mod importance;
pub mod synth;

pub const EXTRACT_REPORT: &str = "extract_report.json";
pub const LABELS_FILE: &str = "labels.csv";
pub const PROFILES_FILE: &str = "daily_profiles.csv";

/// `<stem>_<kind>.<ext>`, e.g. `features_qc.bin`.
pub fn kind_file(stem: &str, kind: FeatureKind, ext: &str) -> String {
    format!("{stem}_{}.{ext}", kind.as_str().to_ascii_lowercase())
}

pub(crate) fn out_path(cfg: &PipelineConfig) -> Result<&Path, Failure> {
    cfg.out.as_deref().ok_or_else(|| Failure::Usage("no output directory: pass --out DIR".into()))
}

pub(crate) fn open_out(cfg: &PipelineConfig, command: &'static str) -> Result<OutDir, Failure> {
    let mut out = OutDir::create(out_path(cfg)?, command, cfg.hash(), cfg.data_hash())?;
    out.write_text(CONFIG_FILE, &cfg.to_toml())?;
    Ok(out)
}

pub(crate) fn missing_input(path: &Path, hint: &str) -> Failure {
    Failure::Data(format!("{} not found; {hint}", path.display()))
}

pub(crate) fn load_features(dir: &Path, kind: FeatureKind) -> Result<(FeatureHeader, Vec<FeatureVector>), Failure> {
    let bin = dir.join(kind_file("features", kind, "bin"));
    let json = dir.join(kind_file("features", kind, "json"));
    for p in [&bin, &json] {
        if !p.exists() {
            return Err(missing_input(p, &format!("run `loadclust extract --out {}` first", dir.display())));
        }
    }
    Ok(read_feature_binary(&bin, &json)?)
}

pub(crate) fn load_partition(dir: &Path, kind: FeatureKind) -> Result<(Vec<String>, Partition), Failure> {
    let path = dir.join(kind_file("partition", kind, "csv"));
    if !path.exists() {
        return Err(missing_input(
            &path,
            &format!("run `loadclust cluster --out {} --method {}` first", dir.display(), kind.as_str().to_ascii_lowercase()),
        ));
    }
    Ok(read_partition_csv(BufReader::new(File::open(&path)?))?)
}

/// Methods whose partition file exists, in AC, PAC, QC order.
pub(crate) fn available_partitions(dir: &Path) -> Vec<FeatureKind> {
    FeatureKind::ALL
        .into_iter()
        .filter(|&k| dir.join(kind_file("partition", k, "csv")).exists())
        .collect()
}

/// Refuses inputs that the manifest attributes to different extraction
/// settings.
pub(crate) fn check_input_hashes(dir: &Path, inputs: &[String], force: bool) -> Result<(), Failure> {
    let manifest = Manifest::load(dir)?;
    let mut seen = BTreeSet::new();
    for name in inputs {
        match manifest.data_hash_of(name) {
            Some(h) => {
                seen.insert(h.to_string());
            }
            None if force => log::warn!("{name} is not listed in the manifest"),
            None => {
                return Err(Failure::Data(format!(
                    "{name} is not listed in {}/manifest.json; regenerate it or pass --force",
                    dir.display()
                )))
            }
        }
    }
    if seen.len() > 1 {
        let list: Vec<String> = inputs
            .iter()
            .filter_map(|n| manifest.data_hash_of(n).map(|h| format!("{n} ({})", &h[..h.len().min(12)])))
            .collect();
        let msg = format!("inputs were produced under different extraction settings: {}", list.join(", "));
        if force {
            log::warn!("{msg}");
        } else {
            return Err(Failure::Data(format!("{msg}; rerun the earlier stages or pass --force")));
        }
    }
    Ok(())
}

/// Checks that a partition and a feature matrix describe the same meters.
pub(crate) fn check_same_meters(kind: FeatureKind, partition_ids: &[String], features: &[FeatureVector]) -> Result<(), Failure> {
    let same = partition_ids.len() == features.len() && partition_ids.iter().zip(features).all(|(a, f)| *a == f.meter_id);
    if same {
        Ok(())
    } else {
        Err(Failure::Data(format!("{kind} partition and feature matrix list different meters; rerun `loadclust cluster`")))
    }
}
