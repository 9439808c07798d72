use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read};

use loadclust::evaluate::hourly_profile;
use loadclust::features::io::{write_feature_binary, write_feature_csv};
use loadclust::features::{extract_features, select_max_lag_bic, FeatureKind, FeatureVector};
use loadclust::ingest::{filter_by_missingness, parse_readings, write_rejected, SLOTS_PER_DAY};
use loadclust::par;
use loadclust::preprocess::prepare;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{kind_file, missing_input, open_out, EXTRACT_REPORT, LABELS_FILE, PROFILES_FILE};
use crate::config::PipelineConfig;
use crate::Failure;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailedSeries {
    pub meter_id: String,
    pub stage: &'static str,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtractReport {
    pub config_hash: String,
    pub data_hash: String,
    pub input_file: String,
    pub input_sha256: String,
    pub series_read: usize,
    pub rows_rejected: usize,
    pub duplicate_rows: usize,
    /// Series over the missing-data threshold.
    pub discarded_missing: Vec<String>,
    /// Series that could not be preprocessed or summarised.
    pub failed: Vec<FailedSeries>,
    pub kept: usize,
    pub k_selected: Option<usize>,
    pub k_used: usize,
    pub widths: BTreeMap<FeatureKind, usize>,
}

/// Reads the whole input while hashing it.
fn read_input(cfg: &PipelineConfig) -> Result<(String, String, Vec<u8>), Failure> {
    let path = cfg
        .input
        .as_deref()
        .ok_or_else(|| Failure::Usage("no input: pass --input FILE or set `input` in the config".into()))?;
    if !path.exists() {
        return Err(missing_input(path, "check --input or the `input` key of the config"));
    }
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    Ok((name, hex::encode(Sha256::digest(&bytes)), bytes))
}

pub fn run(cfg: &PipelineConfig) -> Result<(), Failure> {
    let (input_file, input_sha256, bytes) = read_input(cfg)?;
    let parsed = parse_readings(bytes.as_slice())?;
    drop(bytes);
    let series_read = parsed.series.len();
    log::info!("read {series_read} series, rejected {} rows", parsed.rejected.len());

    let (kept, discarded) = filter_by_missingness(parsed.series, cfg.missing_threshold);
    let discarded_missing: Vec<String> = discarded.into_iter().map(|s| s.meter_id).collect();
    if !discarded_missing.is_empty() {
        log::info!("{} series over the missing-data threshold", discarded_missing.len());
    }

    let policy = cfg.zero_policy();
    let prepared = par::map(&kept, |s| prepare(s, policy, cfg.max_gap, cfg.period));
    let mut failed = Vec::new();
    let mut diffs = Vec::new();
    let mut sources = Vec::new();
    for (i, p) in prepared.into_iter().enumerate() {
        match p {
            Ok(d) => {
                diffs.push(d);
                sources.push(i);
            }
            Err(e) => {
                log::warn!("meter {}: dropped in preprocessing: {e}", kept[i].meter_id);
                failed.push((i, FailedSeries { meter_id: kept[i].meter_id.clone(), stage: "preprocess", reason: e.to_string() }));
            }
        }
    }

    let k_selected = if cfg.select_k && !diffs.is_empty() { Some(select_max_lag_bic(&diffs, cfg.p_max)?) } else { None };
    let k_used = k_selected.map_or(cfg.k_max, |k| k.max(1));
    if k_selected == Some(0) {
        log::warn!("BIC selected order 0 for every series; using one lag");
    }
    let feature_config = cfg.feature_config(k_used);
    let extracted = par::map(&diffs, |d| extract_features(d, &feature_config));
    drop(diffs);

    let mut rows = Vec::new();
    for (src, f) in sources.into_iter().zip(extracted) {
        match f {
            Ok(f) => rows.push((src, f)),
            Err(e) => {
                log::warn!("meter {}: dropped in feature extraction: {e}", kept[src].meter_id);
                failed.push((src, FailedSeries { meter_id: kept[src].meter_id.clone(), stage: "features", reason: e.to_string() }));
            }
        }
    }
    failed.sort_by_key(|(i, _)| *i);
    let failed: Vec<FailedSeries> = failed.into_iter().map(|(_, f)| f).collect();

    let attempted = kept.len();
    if rows.is_empty() {
        return Err(Failure::Data(format!("none of the {attempted} usable series survived extraction")));
    }
    if failed.len() as f64 > cfg.max_drop_fraction * attempted as f64 {
        return Err(Failure::Data(format!(
            "{} of {attempted} series failed extraction, above the limit of {}",
            failed.len(),
            cfg.max_drop_fraction
        )));
    }

    let mut out = open_out(cfg, "extract")?;
    let hash = out.config_hash().to_string();
    let mut widths = BTreeMap::new();
    for kind in FeatureKind::ALL {
        let matrix: Vec<FeatureVector> = rows.iter().map(|(_, f)| f.get(kind).clone()).collect();
        widths.insert(kind, matrix[0].len());
        out.write_with(&kind_file("features", kind, "csv"), |w| Ok(write_feature_csv(&matrix, w)?))?;
        let (bin, json) = (kind_file("features", kind, "bin"), kind_file("features", kind, "json"));
        write_feature_binary(&matrix, &out.file(&bin), &out.file(&json), Some(&hash))?;
        out.track(bin);
        out.track(json);
    }

    let meters: Vec<_> = rows.iter().map(|(src, _)| &kept[*src]).collect();
    if meters.iter().any(|s| s.external_label.is_some()) {
        out.write_with(LABELS_FILE, |w| {
            let mut csv = csv::Writer::from_writer(w);
            csv.write_record(["meter_id", "label"]).map_err(csv_err)?;
            for s in &meters {
                csv.write_record([s.meter_id.as_str(), s.external_label.as_deref().unwrap_or("")]).map_err(csv_err)?;
            }
            Ok(csv.flush()?)
        })?;
    }
    let profiles = par::map(&meters, |s| hourly_profile(s));
    out.write_with(PROFILES_FILE, |w| {
        let mut csv = csv::Writer::from_writer(w);
        let mut head = vec!["meter_id".to_string()];
        head.extend((0..SLOTS_PER_DAY).map(|s| format!("s{s}")));
        csv.write_record(&head).map_err(csv_err)?;
        for (s, p) in meters.iter().zip(&profiles) {
            let p = p.as_ref().map_err(|e| Failure::Data(e.to_string()))?;
            let mut rec = vec![s.meter_id.clone()];
            rec.extend(p.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()));
            csv.write_record(&rec).map_err(csv_err)?;
        }
        Ok(csv.flush()?)
    })?;
    out.write_with("rejected_rows.csv", |w| Ok(write_rejected(&parsed.rejected, w)?))?;

    let report = ExtractReport {
        config_hash: hash,
        data_hash: cfg.data_hash(),
        input_file,
        input_sha256,
        series_read,
        rows_rejected: parsed.rejected.len(),
        duplicate_rows: parsed.duplicates,
        discarded_missing,
        failed,
        kept: rows.len(),
        k_selected,
        k_used,
        widths,
    };
    out.write_json(EXTRACT_REPORT, &report)?;
    out.finish()?;
    log::info!("kept {} series, K = {k_used}", report.kept);
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Failure {
    Failure::Data(format!("csv error: {e}"))
}
