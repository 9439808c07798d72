use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use loadclust::dissimilarity::{build_matrix, read_matrix, standardize, CondensedMatrix};
use loadclust::evaluate::{
    adjusted_rand_index, chi_squared_test, cluster_feature_means, contingency_table, medoids, to_hourly,
    write_feature_means_csv, write_profiles_csv, ChiSquared,
};
use loadclust::features::FeatureKind;
use loadclust::hclust::Partition;
use serde::Serialize;

use super::extract::csv_err;
use super::{
    available_partitions, check_input_hashes, check_same_meters, kind_file, load_features, load_partition, missing_input,
    open_out, out_path, LABELS_FILE, PROFILES_FILE,
};
use crate::config::PipelineConfig;
use crate::Failure;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AriEntry {
    pub a: FeatureKind,
    pub b: FeatureKind,
    pub ari: f64,
    /// Leaves compared (those typical in both partitions unless atypical clusters are kept).
    pub leaves: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MedoidEntry {
    pub cluster: usize,
    pub size: usize,
    pub meter_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodReport {
    pub k: usize,
    pub sizes: Vec<usize>,
    pub atypical_clusters: Vec<usize>,
    pub medoids: Vec<MedoidEntry>,
    pub chi_squared: Option<ChiSquared>,
    /// Why the chi-squared test could not be run, if it was requested.
    pub chi_squared_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub config_hash: String,
    pub include_atypical: bool,
    pub methods: Vec<FeatureKind>,
    pub ari: Vec<AriEntry>,
    pub reports: BTreeMap<FeatureKind, MethodReport>,
}

fn read_labels(dir: &Path) -> Result<HashMap<String, String>, Failure> {
    let path = dir.join(LABELS_FILE);
    if !path.exists() {
        return Err(missing_input(
            &path,
            "the input had no acorn_group column, so chi-squared tests cannot run; pass --no-chi-squared to skip them",
        ));
    }
    let mut rdr = csv::Reader::from_reader(BufReader::new(File::open(&path)?));
    let mut labels = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        if let (Some(id), Some(label)) = (rec.get(0), rec.get(1)) {
            if !label.is_empty() {
                labels.insert(id.to_string(), label.to_string());
            }
        }
    }
    Ok(labels)
}

type Profile = Vec<Option<f64>>;

fn read_profiles(dir: &Path) -> Result<HashMap<String, Profile>, Failure> {
    let path = dir.join(PROFILES_FILE);
    if !path.exists() {
        return Err(missing_input(&path, &format!("run `loadclust extract --out {}` first", dir.display())));
    }
    let mut rdr = csv::Reader::from_reader(BufReader::new(File::open(&path)?));
    let mut profiles = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let id = rec.get(0).unwrap_or_default().to_string();
        let values = rec
            .iter()
            .skip(1)
            .map(|v| if v.is_empty() { Ok(None) } else { v.parse().map(Some) })
            .collect::<Result<Profile, _>>()
            .map_err(|e| Failure::Data(format!("{}: bad profile for {id}: {e}", path.display())))?;
        profiles.insert(id, values);
    }
    Ok(profiles)
}

fn matrix_for(cfg: &PipelineConfig, dir: &Path, kind: FeatureKind, features: &[loadclust::features::FeatureVector]) -> Result<CondensedMatrix, Failure> {
    let summary_path = dir.join(kind_file("cluster", kind, "json"));
    let persisted = std::fs::read(&summary_path)
        .ok()
        .and_then(|bytes| serde_json::from_slice::<serde_json::Value>(&bytes).ok())
        .and_then(|v| v.get("matrix_file").and_then(|m| m.as_str()).map(str::to_string));
    if let Some(name) = persisted {
        let path = dir.join(name);
        if path.exists() {
            return Ok(read_matrix(&path)?);
        }
    }
    if cfg.standardize {
        Ok(build_matrix(&standardize(features))?)
    } else {
        Ok(build_matrix(features)?)
    }
}

/// Leaves kept when comparing two partitions.
fn compared_leaves(a: &Partition, b: &Partition, include_atypical: bool) -> Vec<usize> {
    (0..a.n())
        .filter(|&i| include_atypical || (!a.is_atypical_leaf(i) && !b.is_atypical_leaf(i)))
        .collect()
}

pub fn run(cfg: &PipelineConfig, methods: Option<Vec<FeatureKind>>, force: bool) -> Result<(), Failure> {
    let dir = out_path(cfg)?.to_path_buf();
    let methods = match methods {
        Some(m) => m,
        None => available_partitions(&dir),
    };
    if methods.is_empty() {
        return Err(missing_input(
            &dir.join("partition_*.csv"),
            &format!("run `loadclust cluster --out {}` first", dir.display()),
        ));
    }

    let mut inputs = Vec::new();
    for &kind in &methods {
        inputs.push(kind_file("partition", kind, "csv"));
        inputs.push(kind_file("features", kind, "bin"));
    }
    inputs.push(PROFILES_FILE.to_string());
    if cfg.chi_squared {
        inputs.push(LABELS_FILE.to_string());
    }
    let mut loaded = Vec::new();
    for &kind in &methods {
        let (ids, partition) = load_partition(&dir, kind)?;
        let (header, features) = load_features(&dir, kind)?;
        check_same_meters(kind, &ids, &features)?;
        loaded.push((kind, ids, partition, header, features));
    }
    let labels = if cfg.chi_squared { Some(read_labels(&dir)?) } else { None };
    let profiles = read_profiles(&dir)?;
    check_input_hashes(&dir, &inputs, force)?;

    let mut ari = Vec::new();
    for (i, a) in loaded.iter().enumerate() {
        for b in &loaded[i..] {
            if a.1 != b.1 {
                return Err(Failure::Data(format!("{} and {} partitions list different meters", a.0, b.0)));
            }
            let leaves = compared_leaves(&a.2, &b.2, cfg.include_atypical);
            let la: Vec<usize> = leaves.iter().map(|&l| a.2.labels[l]).collect();
            let lb: Vec<usize> = leaves.iter().map(|&l| b.2.labels[l]).collect();
            let value = if leaves.is_empty() { f64::NAN } else { adjusted_rand_index(&la, &lb)? };
            ari.push(AriEntry { a: a.0, b: b.0, ari: value, leaves: leaves.len() });
        }
    }

    let mut out = open_out(cfg, "evaluate")?;
    let mut reports = BTreeMap::new();
    for (kind, ids, partition, header, features) in &loaded {
        let kind = *kind;
        let (mut chi, mut chi_error) = (None, None);
        if let Some(labels) = &labels {
            let per_leaf: Vec<Option<String>> = ids.iter().map(|id| labels.get(id).cloned()).collect();
            let table = contingency_table(partition, &per_leaf, ids, cfg.include_atypical)?;
            out.write_with(&kind_file("contingency", kind, "csv"), |w| Ok(table.write_csv(w)?))?;
            match chi_squared_test(&table) {
                Ok(c) => chi = Some(c),
                Err(e) => {
                    log::warn!("{kind}: no chi-squared test: {e}");
                    chi_error = Some(e.to_string());
                }
            }
        }

        let matrix = matrix_for(cfg, &dir, kind, features)?;
        let found = medoids(partition, &matrix, cfg.include_atypical)?;
        drop(matrix);
        let sizes = partition.sizes();
        let mut rows = Vec::new();
        let mut medoid_entries = Vec::new();
        for &(cluster, leaf) in &found {
            let id = &ids[leaf];
            let profile = profiles
                .get(id)
                .ok_or_else(|| Failure::Data(format!("no daily profile for medoid {id}; rerun `loadclust extract`")))?;
            let profile = if cfg.hourly_profiles { to_hourly(profile) } else { profile.clone() };
            rows.push((cluster, id.clone(), profile));
            medoid_entries.push(MedoidEntry { cluster, size: sizes[cluster], meter_id: id.clone() });
        }
        out.write_with(&kind_file("medoid_profiles", kind, "csv"), |w| Ok(write_profiles_csv(&rows, w)?))?;

        let means = cluster_feature_means(features, partition, cfg.include_atypical)?;
        out.write_with(&kind_file("feature_means", kind, "csv"), |w| Ok(write_feature_means_csv(&means, &header.names, w)?))?;

        reports.insert(
            kind,
            MethodReport {
                k: partition.k,
                sizes,
                atypical_clusters: (0..partition.k).filter(|&c| partition.atypical[c]).collect(),
                medoids: medoid_entries,
                chi_squared: chi,
                chi_squared_error: chi_error,
            },
        );
    }

    out.write_with("ari.csv", |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["method_a", "method_b", "ari", "leaves"]).map_err(csv_err)?;
        for e in &ari {
            csv.write_record([e.a.as_str(), e.b.as_str(), &e.ari.to_string(), &e.leaves.to_string()]).map_err(csv_err)?;
        }
        Ok(csv.flush()?)
    })?;
    let report = EvaluationReport {
        config_hash: out.config_hash().to_string(),
        include_atypical: cfg.include_atypical,
        methods,
        ari,
        reports,
    };
    out.write_json("evaluation.json", &report)?;
    out.finish()?;
    Ok(())
}
