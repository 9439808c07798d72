//! Agglomerative hierarchical clustering on a condensed dissimilarity matrix.
//!
//! Single, complete and average linkage are all reducible, so the
//! nearest-neighbour-chain algorithm yields the same hierarchy as naive
//! closest-pair merging in `O(n^2)` time. Inter-cluster dissimilarities are
//! maintained with Lance-Williams updates:
//!
//! * single: `min(d_ik, d_jk)`
//! * complete: `max(d_ik, d_jk)`
//! * average: `(n_i d_ik + n_j d_jk) / (n_i + n_j)`

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dissimilarity::{condensed_index, CondensedMatrix};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    Single,
    #[default]
    Complete,
    Average,
}

impl Linkage {
    pub const ALL: [Linkage; 3] = [Linkage::Single, Linkage::Complete, Linkage::Average];

    #[inline]
    fn update(self, d_ik: f64, d_jk: f64, n_i: usize, n_j: usize) -> f64 {
        match self {
            Linkage::Single => d_ik.min(d_jk),
            Linkage::Complete => d_ik.max(d_jk),
            Linkage::Average => (n_i as f64 * d_ik + n_j as f64 * d_jk) / (n_i + n_j) as f64,
        }
    }
}

impl fmt::Display for Linkage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Linkage::Single => "single",
            Linkage::Complete => "complete",
            Linkage::Average => "average",
        })
    }
}

impl FromStr for Linkage {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "single" => Ok(Linkage::Single),
            "complete" => Ok(Linkage::Complete),
            "average" => Ok(Linkage::Average),
            other => Err(format!("unknown linkage `{other}` (expected single, complete or average)")),
        }
    }
}

/// One agglomeration step. Leaves are `0..n`; step `k` creates node `n + k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

/// Stepwise dendrogram with merges in non-decreasing height order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub n: usize,
    pub merges: Vec<Merge>,
}

impl Dendrogram {
    pub fn heights(&self) -> Vec<f64> {
        self.merges.iter().map(|m| m.height).collect()
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Joins the sets of `a` and `b`, returning the new root.
    fn union(&mut self, a: usize, b: usize) -> usize {
        let (ra, rb) = (self.find(a), self.find(b));
        let root = ra.min(rb);
        self.parent[ra.max(rb)] = root;
        root
    }
}

/// Turns merges expressed as (leaf in A, leaf in B, height) into a dendrogram
/// with node ids, sorted by height (stable, so equal heights keep discovery order).
fn relabel(n: usize, mut raw: Vec<(usize, usize, f64)>) -> Dendrogram {
    raw.sort_by(|a, b| a.2.total_cmp(&b.2));
    let mut uf = UnionFind::new(n);
    let mut node_of_root: Vec<usize> = (0..n).collect();
    let mut size_of_root = vec![1usize; n];
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    for (k, (a, b, height)) in raw.into_iter().enumerate() {
        let (ra, rb) = (uf.find(a), uf.find(b));
        let (na, nb) = (node_of_root[ra], node_of_root[rb]);
        let size = size_of_root[ra] + size_of_root[rb];
        let root = uf.union(ra, rb);
        node_of_root[root] = n + k;
        size_of_root[root] = size;
        merges.push(Merge { left: na.min(nb), right: na.max(nb), height, size });
    }
    Dendrogram { n, merges }
}

/// Clusters the matrix with the nearest-neighbour-chain algorithm.
///
/// Works on a private copy of the condensed data. Nearest-neighbour ties
/// prefer the chain predecessor, then the smaller index.
pub fn agglomerate(matrix: &CondensedMatrix, linkage: Linkage) -> Result<Dendrogram> {
    let n = matrix.n();
    if n < 2 {
        return Err(Error::Empty("clustering needs at least two series"));
    }
    let mut d = matrix.to_vec();
    if let Some(k) = d.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(k));
    }
    let idx = |i: usize, j: usize| if i < j { condensed_index(n, i, j) } else { condensed_index(n, j, i) };

    let mut active = vec![true; n];
    let mut size = vec![1usize; n];
    let mut chain: Vec<usize> = Vec::with_capacity(n);
    let mut raw = Vec::with_capacity(n - 1);

    for _ in 0..n - 1 {
        if chain.is_empty() {
            chain.push(active.iter().position(|&a| a).expect("an active cluster remains"));
        }
        let (a, b) = loop {
            let a = *chain.last().expect("chain is non-empty");
            let prev = if chain.len() >= 2 { Some(chain[chain.len() - 2]) } else { None };
            let mut best = prev;
            let mut best_d = prev.map_or(f64::INFINITY, |p| d[idx(a, p)]);
            for x in 0..n {
                if x == a || !active[x] || Some(x) == prev {
                    continue;
                }
                let dx = d[idx(a, x)];
                if dx < best_d || (best.is_none() && dx == best_d) {
                    best = Some(x);
                    best_d = dx;
                }
            }
            let c = best.expect("at least two active clusters");
            if Some(c) == prev {
                chain.pop();
                chain.pop();
                break (a, c);
            }
            chain.push(c);
        };

        let height = d[idx(a, b)];
        raw.push((a, b, height));
        // the merged cluster lives on in slot `keep`
        let (keep, gone) = (a.max(b), a.min(b));
        let (n_keep, n_gone) = (size[keep], size[gone]);
        for x in 0..n {
            if !active[x] || x == keep || x == gone {
                continue;
            }
            let updated = linkage.update(d[idx(keep, x)], d[idx(gone, x)], n_keep, n_gone);
            d[idx(keep, x)] = updated;
        }
        active[gone] = false;
        size[keep] = n_keep + n_gone;
    }
    Ok(relabel(n, raw))
}

/// How to cut a dendrogram into flat clusters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CutCriterion {
    /// Exactly this many clusters.
    K(usize),
    /// Keep merges at or below this height.
    Height(f64),
}

impl fmt::Display for CutCriterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CutCriterion::K(k) => write!(f, "k={k}"),
            CutCriterion::Height(h) => write!(f, "height={h}"),
        }
    }
}

impl FromStr for CutCriterion {
    type Err = String;

    /// Accepts `k=8`, `8`, `height=0.4` or `h=0.4`.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let s = s.trim();
        let (key, value) = s.split_once(['=', ':']).unwrap_or(("k", s));
        match key.trim().to_ascii_lowercase().as_str() {
            "k" => value.trim().parse().map(CutCriterion::K).map_err(|e| format!("bad k `{value}`: {e}")),
            "h" | "height" => value
                .trim()
                .parse()
                .map(CutCriterion::Height)
                .map_err(|e| format!("bad height `{value}`: {e}")),
            other => Err(format!("unknown cut criterion `{other}` (expected k=N or height=H)")),
        }
    }
}

/// Flat clustering of the leaves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    /// Cluster id per leaf, in `0..k`.
    pub labels: Vec<usize>,
    pub k: usize,
    /// Per cluster id.
    pub atypical: Vec<bool>,
}

impl Partition {
    /// Builds a partition from arbitrary labels, renumbering by first appearance.
    pub fn from_labels(raw: &[usize]) -> Self {
        let mut map = std::collections::HashMap::new();
        let labels: Vec<usize> = raw
            .iter()
            .map(|l| {
                let next = map.len();
                *map.entry(*l).or_insert(next)
            })
            .collect();
        let k = map.len();
        Self { labels, k, atypical: vec![false; k] }
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    /// Leaf indices of cluster `c`, ascending.
    pub fn members(&self, c: usize) -> Vec<usize> {
        self.labels.iter().enumerate().filter(|(_, &l)| l == c).map(|(i, _)| i).collect()
    }

    pub fn is_atypical_leaf(&self, leaf: usize) -> bool {
        self.atypical[self.labels[leaf]]
    }

    /// Cluster ids not flagged atypical.
    pub fn typical_clusters(&self) -> Vec<usize> {
        (0..self.k).filter(|&c| !self.atypical[c]).collect()
    }
}

/// Cuts the dendrogram into a flat partition.
///
/// By `k`: the `k - 1` highest merges are severed (later merges first among
/// equal heights). By height: merges with height `<= h` are kept. Cluster
/// ids follow the smallest leaf index in each cluster.
pub fn cut(dendrogram: &Dendrogram, criterion: CutCriterion) -> Result<Partition> {
    let n = dendrogram.n;
    let keep: Vec<&Merge> = match criterion {
        CutCriterion::K(k) => {
            if k == 0 || k > n {
                return Err(invalid("k", format!("must lie in 1..={n}, got {k}")));
            }
            dendrogram.merges.iter().take(n - k).collect()
        }
        CutCriterion::Height(h) => {
            if !(h >= 0.0) {
                return Err(invalid("height", format!("must be non-negative, got {h}")));
            }
            dendrogram.merges.iter().filter(|m| m.height <= h).collect()
        }
    };

    let mut uf = UnionFind::new(n);
    let mut leaf_of_node: Vec<usize> = (0..n).collect();
    leaf_of_node.resize(n + dendrogram.merges.len(), usize::MAX);
    // representative leaves for every node, including severed ones
    for (k, m) in dendrogram.merges.iter().enumerate() {
        leaf_of_node[n + k] = leaf_of_node[m.left];
    }
    for m in keep {
        uf.union(leaf_of_node[m.left], leaf_of_node[m.right]);
    }

    let mut label_of_root = vec![usize::MAX; n];
    let mut labels = Vec::with_capacity(n);
    let mut k = 0;
    for leaf in 0..n {
        let r = uf.find(leaf);
        if label_of_root[r] == usize::MAX {
            label_of_root[r] = k;
            k += 1;
        }
        labels.push(label_of_root[r]);
    }
    Ok(Partition { labels, k, atypical: vec![false; k] })
}

/// Flags clusters holding fewer than `min_fraction * n` leaves.
pub fn flag_atypical(partition: &Partition, min_fraction: f64) -> Partition {
    let threshold = min_fraction * partition.n() as f64;
    let atypical = partition.sizes().into_iter().map(|s| (s as f64) < threshold).collect();
    Partition { atypical, ..partition.clone() }
}

/// Writes `merge_index,left,right,height,size`.
pub fn write_dendrogram_csv<W: Write>(dendrogram: &Dendrogram, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["merge_index", "left", "right", "height", "size"])?;
    for (k, m) in dendrogram.merges.iter().enumerate() {
        w.write_record([k.to_string(), m.left.to_string(), m.right.to_string(), m.height.to_string(), m.size.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `meter_id,cluster,atypical`.
pub fn write_partition_csv<W: Write>(partition: &Partition, meter_ids: &[String], writer: W) -> Result<()> {
    if meter_ids.len() != partition.n() {
        return Err(Error::LengthMismatch { left: meter_ids.len(), right: partition.n() });
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["meter_id", "cluster", "atypical"])?;
    for (id, &l) in meter_ids.iter().zip(&partition.labels) {
        w.write_record([id.as_str(), &l.to_string(), if partition.atypical[l] { "true" } else { "false" }])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a partition CSV back, returning meter ids in file order.
pub fn read_partition_csv<R: Read>(reader: R) -> Result<(Vec<String>, Partition)> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut flags: Vec<(usize, bool)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let bad = |what: &str| invalid("partition csv", format!("bad {what} in `{}`", rec.iter().collect::<Vec<_>>().join(",")));
        let id = rec.get(0).ok_or_else(|| bad("meter_id"))?;
        let label: usize = rec.get(1).and_then(|v| v.parse().ok()).ok_or_else(|| bad("cluster"))?;
        let atyp: bool = rec.get(2).and_then(|v| v.parse().ok()).ok_or_else(|| bad("atypical"))?;
        ids.push(id.to_string());
        labels.push(label);
        flags.push((label, atyp));
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut atypical = vec![false; k];
    for (l, a) in flags {
        atypical[l] |= a;
    }
    Ok((ids, Partition { labels, k, atypical }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureKind;

    fn matrix(n: usize, data: Vec<f64>) -> CondensedMatrix {
        CondensedMatrix::from_condensed(FeatureKind::Qc, (0..n).map(|i| i.to_string()).collect(), data).unwrap()
    }

    #[test]
    fn two_leaves() {
        for linkage in Linkage::ALL {
            let d = agglomerate(&matrix(2, vec![1.3]), linkage).unwrap();
            assert_eq!(d.merges, vec![Merge { left: 0, right: 1, height: 1.3, size: 2 }]);
        }
    }

    #[test]
    fn three_leaf_hand_trace() {
        let m = matrix(3, vec![1.0, 5.0, 6.0]);
        let expect = [(Linkage::Complete, 6.0), (Linkage::Average, 5.5), (Linkage::Single, 5.0)];
        for (linkage, h) in expect {
            let d = agglomerate(&m, linkage).unwrap();
            assert_eq!(d.merges[0], Merge { left: 0, right: 1, height: 1.0, size: 2 });
            assert_eq!(d.merges[1], Merge { left: 2, right: 3, height: h, size: 3 });
        }
        let d = agglomerate(&m, Linkage::Complete).unwrap();
        let p = cut(&d, CutCriterion::K(2)).unwrap();
        assert_eq!(p.labels, vec![0, 0, 1]);
    }

    #[test]
    fn rejects_small_or_bad_input() {
        assert!(agglomerate(&matrix(1, vec![]), Linkage::Complete).is_err());
        assert!(CondensedMatrix::from_condensed(FeatureKind::Qc, vec!["a".into(), "b".into()], vec![f64::NAN]).is_err());
    }

    #[test]
    fn cut_extremes_and_errors() {
        let m = matrix(4, vec![1.0, 4.0, 5.0, 2.0, 6.0, 3.0]);
        let d = agglomerate(&m, Linkage::Average).unwrap();
        assert_eq!(cut(&d, CutCriterion::K(4)).unwrap().labels, vec![0, 1, 2, 3]);
        assert_eq!(cut(&d, CutCriterion::K(1)).unwrap().labels, vec![0; 4]);
        assert!(cut(&d, CutCriterion::K(0)).is_err());
        assert!(cut(&d, CutCriterion::K(5)).is_err());
        assert!(cut(&d, CutCriterion::Height(-1.0)).is_err());
        assert_eq!(cut(&d, CutCriterion::Height(0.0)).unwrap().k, 4);
        assert_eq!(cut(&d, CutCriterion::Height(1.0)).unwrap().k, 3);
    }

    #[test]
    fn atypical_threshold_is_strict() {
        let mut labels = vec![0; 298];
        labels.extend([1, 1]);
        let p = flag_atypical(&Partition::from_labels(&labels), 0.01);
        assert_eq!(p.atypical, vec![false, true]);

        let mut labels = vec![0; 297];
        labels.extend([1, 1, 1]);
        let p = flag_atypical(&Partition::from_labels(&labels), 0.01);
        assert_eq!(p.atypical, vec![false, false]);
    }

    #[test]
    fn atypical_fixture_sizes() {
        let mut labels = Vec::new();
        for (c, size) in [150, 140, 6, 4].into_iter().enumerate() {
            labels.extend(std::iter::repeat(c).take(size));
        }
        let p = Partition::from_labels(&labels);
        assert_eq!(flag_atypical(&p, 0.01).atypical, vec![false; 4]);
        let flagged = flag_atypical(&p, 0.05);
        assert_eq!(flagged.atypical, vec![false, false, true, true]);
        assert_eq!(flagged.typical_clusters(), vec![0, 1]);
        assert_eq!(flagged.labels, p.labels);
    }

    #[test]
    fn cut_criterion_parsing() {
        assert_eq!("k=8".parse::<CutCriterion>().unwrap(), CutCriterion::K(8));
        assert_eq!("8".parse::<CutCriterion>().unwrap(), CutCriterion::K(8));
        assert_eq!("height=0.5".parse::<CutCriterion>().unwrap(), CutCriterion::Height(0.5));
        assert_eq!("h:2".parse::<CutCriterion>().unwrap(), CutCriterion::Height(2.0));
        assert!("x=1".parse::<CutCriterion>().is_err());
    }

    #[test]
    fn partition_csv_round_trip() {
        let p = flag_atypical(&Partition::from_labels(&[0, 0, 0, 1, 2, 2]), 0.2);
        let ids: Vec<String> = (0..6).map(|i| format!("m{i}")).collect();
        let mut buf = Vec::new();
        write_partition_csv(&p, &ids, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("meter_id,cluster,atypical\nm0,0,false\n"));
        let (ids_back, p_back) = read_partition_csv(buf.as_slice()).unwrap();
        assert_eq!(ids_back, ids);
        assert_eq!(p_back, p);
    }

    #[test]
    fn dendrogram_csv_header() {
        let d = agglomerate(&matrix(3, vec![1.0, 5.0, 6.0]), Linkage::Complete).unwrap();
        let mut buf = Vec::new();
        write_dendrogram_csv(&d, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "merge_index,left,right,height,size\n0,0,1,1,2\n1,2,3,6,3\n");
    }
}
