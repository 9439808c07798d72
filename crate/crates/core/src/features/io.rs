//! Feature matrix files.
//!
//! The CSV form has header `meter_id,kind,f1..fM`. The binary form stores
//! the values as little-endian f64, row-major, next to a JSON header that
//! records the dimensions and the feature layout.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FeatureKind, FeatureVector};
use crate::error::{invalid, Error, Result};

/// Describes a feature matrix: shape, layout and provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureHeader {
    pub kind: FeatureKind,
    pub rows: usize,
    pub cols: usize,
    pub k_max: usize,
    pub lags: Vec<usize>,
    pub quantile_pairs: Vec<(f64, f64)>,
    pub names: Vec<String>,
    pub meter_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl FeatureHeader {
    pub fn describe(features: &[FeatureVector], config_hash: Option<&str>) -> Result<Self> {
        let first = features.first().ok_or(Error::Empty("feature matrix has no rows"))?;
        for f in features {
            if f.kind != first.kind {
                return Err(Error::MixedKinds(first.kind.to_string(), f.kind.to_string()));
            }
            if f.len() != first.len() {
                return Err(Error::LengthMismatch { left: first.len(), right: f.len() });
            }
        }
        Ok(Self {
            kind: first.kind,
            rows: features.len(),
            cols: first.len(),
            k_max: first.k_max,
            lags: first.lags.clone(),
            quantile_pairs: first.quantile_pairs.clone(),
            names: first.names(),
            meter_ids: features.iter().map(|f| f.meter_id.clone()).collect(),
            config_hash: config_hash.map(str::to_string),
        })
    }

    fn vector(&self, meter_id: String, values: Vec<f64>) -> FeatureVector {
        FeatureVector {
            meter_id,
            kind: self.kind,
            values,
            k_max: self.k_max,
            lags: self.lags.clone(),
            quantile_pairs: self.quantile_pairs.clone(),
        }
    }
}

pub fn write_feature_csv<W: Write>(features: &[FeatureVector], writer: W) -> Result<()> {
    let header = FeatureHeader::describe(features, None)?;
    let mut w = csv::Writer::from_writer(writer);
    let mut head = vec!["meter_id".to_string(), "kind".to_string()];
    head.extend((1..=header.cols).map(|k| format!("f{k}")));
    w.write_record(&head)?;
    for f in features {
        let mut rec = vec![f.meter_id.clone(), f.kind.to_string()];
        rec.extend(f.values.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a feature CSV. Layout details not present in the CSV (QC lags and
/// quantile pairs) come from `header` when given.
pub fn read_feature_csv<R: Read>(reader: R, header: Option<&FeatureHeader>) -> Result<Vec<FeatureVector>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out: Vec<FeatureVector> = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = row + 2;
        let meter_id = rec.get(0).ok_or_else(|| invalid("feature csv", format!("line {line}: empty row")))?.to_string();
        let kind: FeatureKind = rec
            .get(1)
            .unwrap_or_default()
            .parse()
            .map_err(|e: String| invalid("feature csv", format!("line {line}: {e}")))?;
        let values = rec
            .iter()
            .skip(2)
            .map(|v| v.parse::<f64>().map_err(|e| invalid("feature csv", format!("line {line}: `{v}`: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidValue { meter_id, index: bad, value: values[bad] });
        }
        let f = match header {
            Some(h) if h.kind == kind => h.vector(meter_id, values),
            _ => FeatureVector {
                meter_id,
                kind,
                k_max: if kind == FeatureKind::Qc { 0 } else { values.len() },
                values,
                lags: Vec::new(),
                quantile_pairs: Vec::new(),
            },
        };
        out.push(f);
    }
    if out.is_empty() {
        return Err(Error::Empty("feature csv has no rows"));
    }
    FeatureHeader::describe(&out, None)?;
    Ok(out)
}

/// Writes the binary matrix and its JSON header.
pub fn write_feature_binary(
    features: &[FeatureVector],
    bin_path: &Path,
    header_path: &Path,
    config_hash: Option<&str>,
) -> Result<FeatureHeader> {
    let header = FeatureHeader::describe(features, config_hash)?;
    let mut w = BufWriter::new(File::create(bin_path)?);
    for f in features {
        for v in &f.values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    let mut h = BufWriter::new(File::create(header_path)?);
    serde_json::to_writer_pretty(&mut h, &header)?;
    h.write_all(b"\n")?;
    h.flush()?;
    Ok(header)
}

pub fn read_feature_header(header_path: &Path) -> Result<FeatureHeader> {
    Ok(serde_json::from_reader(BufReader::new(File::open(header_path)?))?)
}

pub fn read_feature_binary(bin_path: &Path, header_path: &Path) -> Result<(FeatureHeader, Vec<FeatureVector>)> {
    let header = read_feature_header(header_path)?;
    let bytes = std::fs::read(bin_path)?;
    if bytes.len() != 8 * header.rows * header.cols || header.meter_ids.len() != header.rows {
        return Err(invalid(
            "feature binary",
            format!("{} bytes do not match a {}x{} matrix", bytes.len(), header.rows, header.cols),
        ));
    }
    let values: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    let features = if header.cols == 0 {
        header.meter_ids.iter().map(|id| header.vector(id.clone(), Vec::new())).collect()
    } else {
        header
            .meter_ids
            .iter()
            .zip(values.chunks_exact(header.cols))
            .map(|(id, row)| header.vector(id.clone(), row.to_vec()))
            .collect()
    };
    Ok((header, features))
}
