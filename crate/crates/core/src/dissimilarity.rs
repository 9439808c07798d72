//! Euclidean dissimilarity matrices over feature vectors, stored condensed.
//!
//! The condensed layout keeps the strict upper triangle row by row:
//! `(0,1), (0,2), ..., (0,n-1), (1,2), ...`. Large matrices can be built
//! straight into a memory-mapped file with the same layout as the on-disk
//! format:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "QCDM"
//! 4       1     version (1)
//! 5       1     kind (0 = AC, 1 = PAC, 2 = QC)
//! 6       8     n, u64 little-endian
//! 14      8*m   m = n(n-1)/2 distances, f64 little-endian
//! ```
//!
//! Meter ids live in a JSON sidecar next to the matrix file.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use memmap2::{Mmap, MmapMut};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureVector};
use crate::par;

pub const MAGIC: &[u8; 4] = b"QCDM";
pub const FORMAT_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 14;

/// Position of pair `(i, j)`, `i < j < n`, in condensed order.
#[inline]
pub fn condensed_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * n - i * (i + 1) / 2 + (j - i - 1)
}

pub fn condensed_len(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Euclidean distance, summed in index order.
pub fn euclidean(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::LengthMismatch { left: u.len(), right: v.len() });
    }
    Ok(euclidean_unchecked(u, v))
}

#[inline]
fn euclidean_unchecked(u: &[f64], v: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (a, b) in u.iter().zip(v) {
        let d = a - b;
        acc += d * d;
    }
    acc.sqrt()
}

enum Storage {
    Heap(Vec<f64>),
    Mapped { map: Mmap, path: PathBuf },
}

/// Symmetric dissimilarity matrix with implicit zero diagonal.
pub struct CondensedMatrix {
    n: usize,
    kind: FeatureKind,
    meter_ids: Vec<String>,
    storage: Storage,
}

impl std::fmt::Debug for CondensedMatrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CondensedMatrix")
            .field("n", &self.n)
            .field("kind", &self.kind)
            .field("mapped", &self.mapped_path())
            .finish()
    }
}

impl CondensedMatrix {
    /// Wraps existing condensed data.
    pub fn from_condensed(kind: FeatureKind, meter_ids: Vec<String>, data: Vec<f64>) -> Result<Self> {
        let n = meter_ids.len();
        if data.len() != condensed_len(n) {
            return Err(Error::LengthMismatch { left: data.len(), right: condensed_len(n) });
        }
        if let Some(k) = data.iter().position(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::NonFinite(k));
        }
        Ok(Self { n, kind, meter_ids, storage: Storage::Heap(data) })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn meter_ids(&self) -> &[String] {
        &self.meter_ids
    }

    /// Number of stored entries, `n(n-1)/2`.
    pub fn len(&self) -> usize {
        condensed_len(self.n)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mapped_path(&self) -> Option<&Path> {
        match &self.storage {
            Storage::Heap(_) => None,
            Storage::Mapped { path, .. } => Some(path),
        }
    }

    /// Entry `k` in condensed order.
    #[inline]
    pub fn at(&self, k: usize) -> f64 {
        match &self.storage {
            Storage::Heap(v) => v[k],
            Storage::Mapped { map, .. } => {
                let off = HEADER_LEN + 8 * k;
                f64::from_le_bytes(map[off..off + 8].try_into().expect("8-byte slice"))
            }
        }
    }

    /// Dissimilarity between leaves `i` and `j` (0 on the diagonal).
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        match i.cmp(&j) {
            std::cmp::Ordering::Equal => 0.0,
            std::cmp::Ordering::Less => self.at(condensed_index(self.n, i, j)),
            std::cmp::Ordering::Greater => self.at(condensed_index(self.n, j, i)),
        }
    }

    /// Dissimilarity looked up by meter id.
    pub fn distance_between(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.meter_ids.iter().position(|m| m == a)?;
        let j = self.meter_ids.iter().position(|m| m == b)?;
        Some(self.get(i, j))
    }

    /// Borrowed condensed data when held in memory.
    pub fn as_slice(&self) -> Option<&[f64]> {
        match &self.storage {
            Storage::Heap(v) => Some(v),
            Storage::Mapped { .. } => None,
        }
    }

    /// Copy of the condensed data.
    pub fn to_vec(&self) -> Vec<f64> {
        match &self.storage {
            Storage::Heap(v) => v.clone(),
            Storage::Mapped { .. } => (0..self.len()).map(|k| self.at(k)).collect(),
        }
    }
}

fn check_features(features: &[FeatureVector]) -> Result<(FeatureKind, usize)> {
    if features.len() < 2 {
        return Err(Error::Empty("a dissimilarity matrix needs at least two series"));
    }
    let kind = features[0].kind;
    let dim = features[0].len();
    for f in features {
        if f.kind != kind {
            return Err(Error::MixedKinds(kind.to_string(), f.kind.to_string()));
        }
        if f.len() != dim {
            return Err(Error::LengthMismatch { left: dim, right: f.len() });
        }
        if f.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue { meter_id: f.meter_id.clone(), index: 0, value: f64::NAN });
        }
    }
    Ok((kind, dim))
}

/// Splits `buf` into the condensed rows `0..n-1`, each `width` units per entry.
fn split_rows<T>(mut buf: &mut [T], n: usize, width: usize) -> Vec<&mut [T]> {
    let mut rows = Vec::with_capacity(n.saturating_sub(1));
    for i in 0..n.saturating_sub(1) {
        let (row, rest) = buf.split_at_mut((n - 1 - i) * width);
        rows.push(row);
        buf = rest;
    }
    rows
}

/// Builds the in-memory matrix of pairwise Euclidean distances.
///
/// Rows are filled in parallel; each entry is one fixed-order summation, so
/// the result is bit-identical for any number of workers.
pub fn build_matrix(features: &[FeatureVector]) -> Result<CondensedMatrix> {
    let (kind, _) = check_features(features)?;
    let n = features.len();
    let mut data = vec![0.0; condensed_len(n)];
    par::for_each_indexed(split_rows(&mut data, n, 1), |i, row| {
        let fi = &features[i].values;
        for (k, slot) in row.iter_mut().enumerate() {
            *slot = euclidean_unchecked(fi, &features[i + 1 + k].values);
        }
    });
    Ok(CondensedMatrix {
        n,
        kind,
        meter_ids: features.iter().map(|f| f.meter_id.clone()).collect(),
        storage: Storage::Heap(data),
    })
}

fn header_bytes(kind: FeatureKind, n: usize) -> [u8; HEADER_LEN] {
    let mut h = [0u8; HEADER_LEN];
    h[..4].copy_from_slice(MAGIC);
    h[4] = FORMAT_VERSION;
    h[5] = kind.code();
    h[6..].copy_from_slice(&(n as u64).to_le_bytes());
    h
}

/// Builds the matrix directly into a memory-mapped matrix file at `path`.
///
/// The file is complete and readable by [`read_matrix`] once this returns;
/// only the meter-id sidecar is left to [`write_sidecar`].
pub fn build_matrix_mapped(features: &[FeatureVector], path: &Path) -> Result<CondensedMatrix> {
    let (kind, _) = check_features(features)?;
    let n = features.len();
    let file = OpenOptions::new().read(true).write(true).create(true).truncate(true).open(path)?;
    file.set_len((HEADER_LEN + 8 * condensed_len(n)) as u64)?;
    // SAFETY: the file was just created and sized by us; nothing else maps it.
    let mut map = unsafe { MmapMut::map_mut(&file)? };
    map[..HEADER_LEN].copy_from_slice(&header_bytes(kind, n));
    par::for_each_indexed(split_rows(&mut map[HEADER_LEN..], n, 8), |i, row| {
        let fi = &features[i].values;
        for (k, slot) in row.chunks_exact_mut(8).enumerate() {
            let d = euclidean_unchecked(fi, &features[i + 1 + k].values);
            slot.copy_from_slice(&d.to_le_bytes());
        }
    });
    map.flush()?;
    let map = map.make_read_only()?;
    Ok(CondensedMatrix {
        n,
        kind,
        meter_ids: features.iter().map(|f| f.meter_id.clone()).collect(),
        storage: Storage::Mapped { map, path: path.to_path_buf() },
    })
}

/// JSON sidecar stored at `<matrix path>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixSidecar {
    pub kind: FeatureKind,
    pub n: usize,
    pub meter_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_sidecar(matrix: &CondensedMatrix, path: &Path, config_hash: Option<&str>) -> Result<()> {
    let sidecar = MatrixSidecar {
        kind: matrix.kind,
        n: matrix.n,
        meter_ids: matrix.meter_ids.clone(),
        config_hash: config_hash.map(str::to_string),
    };
    let mut f = BufWriter::new(File::create(sidecar_path(path))?);
    serde_json::to_writer_pretty(&mut f, &sidecar)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

/// Writes the binary matrix file and its sidecar.
pub fn write_matrix(matrix: &CondensedMatrix, path: &Path, config_hash: Option<&str>) -> Result<()> {
    let already_there = matrix.mapped_path().is_some_and(|p| p == path);
    if !already_there {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&header_bytes(matrix.kind, matrix.n))?;
        for k in 0..matrix.len() {
            w.write_all(&matrix.at(k).to_le_bytes())?;
        }
        w.flush()?;
    }
    write_sidecar(matrix, path, config_hash)
}

fn format_error(path: &Path, reason: impl Into<String>) -> Error {
    Error::MatrixFormat { path: path.to_path_buf(), reason: reason.into() }
}

/// Reads a matrix file (and its sidecar, when present) into memory.
pub fn read_matrix(path: &Path) -> Result<CondensedMatrix> {
    let mut f = File::open(path)?;
    let mut header = [0u8; HEADER_LEN];
    f.read_exact(&mut header).map_err(|_| format_error(path, "truncated header"))?;
    if &header[..4] != MAGIC {
        return Err(format_error(path, "bad magic"));
    }
    if header[4] != FORMAT_VERSION {
        return Err(format_error(path, format!("unsupported version {}", header[4])));
    }
    let kind = FeatureKind::from_code(header[5]).ok_or_else(|| format_error(path, "unknown kind"))?;
    let n = u64::from_le_bytes(header[6..].try_into().expect("8 bytes")) as usize;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes)?;
    if bytes.len() != 8 * condensed_len(n) {
        return Err(format_error(path, format!("expected {} data bytes, found {}", 8 * condensed_len(n), bytes.len())));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let meter_ids = match File::open(sidecar_path(path)) {
        Ok(f) => {
            let sidecar: MatrixSidecar = serde_json::from_reader(std::io::BufReader::new(f))?;
            if sidecar.n != n || sidecar.meter_ids.len() != n {
                return Err(format_error(path, "sidecar does not match matrix size"));
            }
            sidecar.meter_ids
        }
        Err(_) => (0..n).map(|i| i.to_string()).collect(),
    };
    CondensedMatrix::from_condensed(kind, meter_ids, data)
}

/// CSV export (`meter_a,meter_b,distance`), intended for small matrices.
pub fn write_matrix_csv<W: Write>(matrix: &CondensedMatrix, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["meter_a", "meter_b", "distance"])?;
    let ids = matrix.meter_ids();
    let mut k = 0;
    for i in 0..matrix.n {
        for j in i + 1..matrix.n {
            w.write_record([ids[i].as_str(), ids[j].as_str(), &matrix.at(k).to_string()])?;
            k += 1;
        }
    }
    w.flush()?;
    Ok(())
}

/// Column-wise z-scores (population standard deviation); constant columns map to 0.
pub fn standardize(features: &[FeatureVector]) -> Vec<FeatureVector> {
    let Some(first) = features.first() else {
        return Vec::new();
    };
    let dim = first.len();
    let n = features.len() as f64;
    let mut mean = vec![0.0; dim];
    for f in features {
        for (m, v) in mean.iter_mut().zip(&f.values) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut sd = vec![0.0; dim];
    for f in features {
        for ((s, v), m) in sd.iter_mut().zip(&f.values).zip(&mean) {
            *s += (v - m).powi(2);
        }
    }
    sd.iter_mut().for_each(|s| *s = (*s / n).sqrt());
    features
        .iter()
        .map(|f| {
            let mut out = f.clone();
            for ((v, m), s) in out.values.iter_mut().zip(&mean).zip(&sd) {
                *v = if *s > 0.0 { (*v - m) / s } else { 0.0 };
            }
            out
        })
        .collect()
}
