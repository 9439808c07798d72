//! Partition validation and description: adjusted Rand index, contingency
//! tables with Pearson chi-squared tests, medoids, daily load profiles and
//! per-cluster feature means.

pub mod special;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dissimilarity::CondensedMatrix;
use crate::error::{invalid, Error, Result};
use crate::features::FeatureVector;
use crate::hclust::Partition;
use crate::ingest::{LoadSeries, SLOTS_PER_DAY};
use crate::par;

pub use special::{chi_squared_sf, gamma_p, gamma_q, ln_gamma};

fn choose2(m: u64) -> f64 {
    (m as f64) * (m.saturating_sub(1) as f64) / 2.0
}

/// Adjusted Rand index between two labelings of the same items.
///
/// Label values are arbitrary ids. When the chance-corrected denominator
/// vanishes (e.g. both labelings put everything in one cluster) the result
/// is 1 if the labelings agree up to renaming and 0 otherwise.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { left: a.len(), right: b.len() });
    }
    let mut joint: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut rows: BTreeMap<usize, u64> = BTreeMap::new();
    let mut cols: BTreeMap<usize, u64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = joint.values().map(|&m| choose2(m)).sum();
    let sum_a: f64 = rows.values().map(|&m| choose2(m)).sum();
    let sum_b: f64 = cols.values().map(|&m| choose2(m)).sum();
    let total = choose2(a.len() as u64);
    let expected = if total > 0.0 { sum_a * sum_b / total } else { 0.0 };
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        let same = joint.len() == rows.len() && joint.len() == cols.len();
        return Ok(if same { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / (max - expected))
}

/// Cluster ids that take part in downstream summaries.
pub fn included_clusters(partition: &Partition, include_atypical: bool) -> Vec<usize> {
    if include_atypical {
        (0..partition.k).collect()
    } else {
        partition.typical_clusters()
    }
}

/// Counts of cluster members per external category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub rows: Vec<usize>,
    pub cols: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ContingencyTable {
    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.cols.len()).map(|j| self.counts.iter().map(|r| r[j]).sum()).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Writes `cluster,<category>...` with one row per cluster.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["cluster".to_string()];
        header.extend(self.cols.iter().cloned());
        w.write_record(&header)?;
        for (c, row) in self.rows.iter().zip(&self.counts) {
            let mut rec = vec![c.to_string()];
            rec.extend(row.iter().map(u64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Cross-tabulates clusters against external labels.
///
/// Categories are sorted by name. Leaves of excluded (atypical) clusters are
/// ignored; every other leaf must carry a label.
pub fn contingency_table(
    partition: &Partition,
    labels: &[Option<String>],
    meter_ids: &[String],
    include_atypical: bool,
) -> Result<ContingencyTable> {
    if labels.len() != partition.n() {
        return Err(Error::LengthMismatch { left: labels.len(), right: partition.n() });
    }
    if meter_ids.len() != partition.n() {
        return Err(Error::LengthMismatch { left: meter_ids.len(), right: partition.n() });
    }
    let rows = included_clusters(partition, include_atypical);
    let keep = |leaf: usize| include_atypical || !partition.is_atypical_leaf(leaf);

    let missing: Vec<String> = (0..partition.n())
        .filter(|&i| keep(i) && labels[i].is_none())
        .map(|i| meter_ids[i].clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingLabels(missing));
    }
    let cols: Vec<String> = (0..partition.n())
        .filter(|&i| keep(i))
        .filter_map(|i| labels[i].clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let row_pos: BTreeMap<usize, usize> = rows.iter().enumerate().map(|(p, &c)| (c, p)).collect();
    let mut counts = vec![vec![0u64; cols.len()]; rows.len()];
    for leaf in (0..partition.n()).filter(|&i| keep(i)) {
        let label = labels[leaf].as_deref().expect("checked above");
        let j = cols.binary_search_by(|c| c.as_str().cmp(label)).expect("category collected");
        counts[row_pos[&partition.labels[leaf]]][j] += 1;
    }
    Ok(ContingencyTable { rows, cols, counts })
}

/// Outcome of a Pearson chi-squared test of independence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSquared {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    /// Cells with expected count below 5.
    pub low_expected_cells: usize,
    /// All-zero rows (cluster ids) and columns left out of the test.
    pub dropped_rows: Vec<usize>,
    pub dropped_cols: Vec<String>,
}

/// Pearson chi-squared test on a contingency table.
///
/// All-zero rows and columns carry no information and would make expected
/// counts vanish, so they are dropped with a warning before testing.
pub fn chi_squared_test(table: &ContingencyTable) -> Result<ChiSquared> {
    let total = table.total();
    if total == 0 {
        return Err(Error::Empty("contingency table has zero total"));
    }
    let row_sums = table.row_sums();
    let col_sums = table.col_sums();
    let rows: Vec<usize> = (0..row_sums.len()).filter(|&i| row_sums[i] > 0).collect();
    let cols: Vec<usize> = (0..col_sums.len()).filter(|&j| col_sums[j] > 0).collect();
    let dropped_rows: Vec<usize> = (0..row_sums.len()).filter(|&i| row_sums[i] == 0).map(|i| table.rows[i]).collect();
    let dropped_cols: Vec<String> = (0..col_sums.len()).filter(|&j| col_sums[j] == 0).map(|j| table.cols[j].clone()).collect();
    if !dropped_rows.is_empty() || !dropped_cols.is_empty() {
        log::warn!("chi-squared: dropping empty rows {dropped_rows:?} and columns {dropped_cols:?}");
    }
    if rows.len() < 2 || cols.len() < 2 {
        return Err(invalid("contingency table", "needs at least two non-empty rows and two non-empty columns"));
    }

    let n = total as f64;
    let mut statistic = 0.0;
    let mut low_expected_cells = 0;
    for &i in &rows {
        for &j in &cols {
            let expected = row_sums[i] as f64 * col_sums[j] as f64 / n;
            if expected < 5.0 {
                low_expected_cells += 1;
            }
            let diff = table.counts[i][j] as f64 - expected;
            statistic += diff * diff / expected;
        }
    }
    if low_expected_cells > 0 {
        log::warn!("chi-squared: {low_expected_cells} cells have expected count below 5");
    }
    let df = (rows.len() - 1) * (cols.len() - 1);
    Ok(ChiSquared {
        statistic,
        df,
        p_value: chi_squared_sf(statistic, df),
        low_expected_cells,
        dropped_rows,
        dropped_cols,
    })
}

/// Member with the smallest average dissimilarity to the other members.
///
/// Ties go to the smallest leaf index.
pub fn medoid(members: &[usize], matrix: &CondensedMatrix) -> Result<usize> {
    if members.is_empty() {
        return Err(Error::Empty("medoid of an empty cluster"));
    }
    if let Some(&bad) = members.iter().find(|&&m| m >= matrix.n()) {
        return Err(invalid("members", format!("leaf {bad} out of range for n = {}", matrix.n())));
    }
    let mut best: Option<(f64, usize)> = None;
    for &m in members {
        let total: f64 = members.iter().map(|&o| matrix.get(m, o)).sum();
        let better = match best {
            None => true,
            Some((t, idx)) => total < t || (total == t && m < idx),
        };
        if better {
            best = Some((total, m));
        }
    }
    Ok(best.expect("non-empty").1)
}

/// Medoid of each included cluster, as `(cluster, leaf)` pairs; clusters are scanned in parallel.
pub fn medoids(partition: &Partition, matrix: &CondensedMatrix, include_atypical: bool) -> Result<Vec<(usize, usize)>> {
    if partition.n() != matrix.n() {
        return Err(Error::LengthMismatch { left: partition.n(), right: matrix.n() });
    }
    let clusters = included_clusters(partition, include_atypical);
    let found = par::map(&clusters, |&c| medoid(&partition.members(c), matrix));
    clusters.into_iter().zip(found).map(|(c, m)| m.map(|leaf| (c, leaf))).collect()
}

/// Mean kWh per half-hour slot of the day; `None` where a slot has no readings.
pub fn hourly_profile(series: &LoadSeries) -> Result<Vec<Option<f64>>> {
    if series.is_empty() {
        return Err(Error::Empty("profile of an empty series"));
    }
    let mut sum = [0.0; SLOTS_PER_DAY];
    let mut count = [0usize; SLOTS_PER_DAY];
    for (t, (&v, &m)) in series.values.iter().zip(&series.missing).enumerate() {
        if !m {
            let s = series.slot_of_day(t);
            sum[s] += v;
            count[s] += 1;
        }
    }
    let profile: Vec<Option<f64>> = sum
        .iter()
        .zip(count)
        .map(|(&s, c)| (c > 0).then(|| s / c as f64))
        .collect();
    let empty = profile.iter().filter(|p| p.is_none()).count();
    if empty > 0 {
        log::warn!("meter {}: {empty} profile slots have no readings", series.meter_id);
    }
    Ok(profile)
}

/// Folds a half-hourly profile into hourly kWh (sum of the two halves).
pub fn to_hourly(profile: &[Option<f64>]) -> Vec<Option<f64>> {
    profile
        .chunks(2)
        .map(|pair| match pair {
            [Some(a), Some(b)] => Some(a + b),
            _ => None,
        })
        .collect()
}

/// Writes `cluster,meter_id,slot,kwh`; empty slots leave `kwh` blank.
pub fn write_profiles_csv<W: Write>(profiles: &[(usize, String, Vec<Option<f64>>)], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["cluster", "meter_id", "slot", "kwh"])?;
    for (cluster, meter, profile) in profiles {
        for (slot, v) in profile.iter().enumerate() {
            let kwh = v.map(|x| x.to_string()).unwrap_or_default();
            w.write_record([cluster.to_string(), meter.clone(), slot.to_string(), kwh])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Mean feature vector of one cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterMeans {
    pub cluster: usize,
    pub size: usize,
    pub means: Vec<f64>,
}

/// Per-cluster arithmetic means of the feature vectors, in cluster id order.
pub fn cluster_feature_means(
    features: &[FeatureVector],
    partition: &Partition,
    include_atypical: bool,
) -> Result<Vec<ClusterMeans>> {
    if features.len() != partition.n() {
        return Err(Error::LengthMismatch { left: features.len(), right: partition.n() });
    }
    let dim = features.first().map_or(0, FeatureVector::len);
    if let Some(f) = features.iter().find(|f| f.len() != dim) {
        return Err(Error::LengthMismatch { left: dim, right: f.len() });
    }
    let mut sums = vec![vec![0.0; dim]; partition.k];
    let mut sizes = vec![0usize; partition.k];
    for (f, &c) in features.iter().zip(&partition.labels) {
        sizes[c] += 1;
        for (s, v) in sums[c].iter_mut().zip(&f.values) {
            *s += v;
        }
    }
    Ok(included_clusters(partition, include_atypical)
        .into_iter()
        .map(|c| ClusterMeans {
            cluster: c,
            size: sizes[c],
            means: sums[c].iter().map(|s| s / sizes[c] as f64).collect(),
        })
        .collect())
}

/// Writes `cluster,size,<feature names>...`.
pub fn write_feature_means_csv<W: Write>(means: &[ClusterMeans], names: &[String], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["cluster".to_string(), "size".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for m in means {
        let mut rec = vec![m.cluster.to_string(), m.size.to_string()];
        rec.extend(m.means.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dissimilarity::build_matrix;
    use crate::features::FeatureKind;
    use crate::hclust::flag_atypical;
    use approx::assert_abs_diff_eq;
    use chrono::DateTime;

    fn fv(id: &str, values: Vec<f64>) -> FeatureVector {
        FeatureVector { meter_id: id.into(), kind: FeatureKind::Qc, values, k_max: 0, lags: vec![1], quantile_pairs: vec![] }
    }

    fn table(counts: Vec<Vec<u64>>) -> ContingencyTable {
        let cols = (0..counts[0].len()).map(|j| format!("g{j}")).collect();
        ContingencyTable { rows: (0..counts.len()).collect(), cols, counts }
    }

    #[test]
    fn ari_examples() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1, 2], &[0, 0, 1, 1, 2]).unwrap(), 1.0);
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1, 2], &[7, 7, 3, 3, 9]).unwrap(), 1.0);
        assert_abs_diff_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap(), -0.5, epsilon = 1e-15);
        assert!(adjusted_rand_index(&[0, 1], &[0]).is_err());
    }

    #[test]
    fn ari_trivial_partitions() {
        assert_eq!(adjusted_rand_index(&[0; 6], &[4; 6]).unwrap(), 1.0);
        assert_eq!(adjusted_rand_index(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(adjusted_rand_index(&[0; 3], &[0, 1, 2]).unwrap(), 0.0);
    }

    #[test]
    fn contingency_basics() {
        let p = Partition::from_labels(&[0, 0, 1, 1]);
        let labels: Vec<Option<String>> = ["A", "A", "B", "B"].iter().map(|s| Some(s.to_string())).collect();
        let ids: Vec<String> = (0..4).map(|i| format!("m{i}")).collect();
        let t = contingency_table(&p, &labels, &ids, false).unwrap();
        assert_eq!(t.counts, vec![vec![2, 0], vec![0, 2]]);
        assert_eq!(t.cols, vec!["A", "B"]);

        let mut partial = labels.clone();
        partial[2] = None;
        match contingency_table(&p, &partial, &ids, false) {
            Err(Error::MissingLabels(m)) => assert_eq!(m, vec!["m2"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn contingency_skips_atypical() {
        let p = flag_atypical(&Partition::from_labels(&[0, 0, 0, 0, 1]), 0.3);
        let labels = vec![Some("A".into()), Some("B".into()), Some("A".into()), Some("A".into()), None];
        let ids: Vec<String> = (0..5).map(|i| format!("m{i}")).collect();
        let t = contingency_table(&p, &labels, &ids, false).unwrap();
        assert_eq!(t.rows, vec![0]);
        assert_eq!(t.counts, vec![vec![3, 1]]);
        assert!(contingency_table(&p, &labels, &ids, true).is_err());
    }

    #[test]
    fn chi_squared_independent_table() {
        let r = chi_squared_test(&table(vec![vec![10, 20], vec![20, 40]])).unwrap();
        assert_abs_diff_eq!(r.statistic, 0.0, epsilon = 1e-12);
        assert_eq!(r.df, 1);
        assert_abs_diff_eq!(r.p_value, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn chi_squared_hand_example() {
        let r = chi_squared_test(&table(vec![vec![10, 20], vec![20, 10]])).unwrap();
        assert_abs_diff_eq!(r.statistic, 100.0 / 15.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.p_value, 0.0098, epsilon = 1e-4);
    }

    #[test]
    fn chi_squared_drops_empty_lines() {
        let r = chi_squared_test(&table(vec![vec![10, 0, 20], vec![0, 0, 0], vec![20, 0, 10]])).unwrap();
        assert_eq!(r.dropped_rows, vec![1]);
        assert_eq!(r.dropped_cols, vec!["g1"]);
        assert_eq!(r.df, 1);
        assert_abs_diff_eq!(r.statistic, 100.0 / 15.0, epsilon = 1e-9);
        assert!(chi_squared_test(&table(vec![vec![0, 0], vec![0, 0]])).is_err());
    }

    #[test]
    fn medoid_examples() {
        let m = build_matrix(&[fv("a", vec![0.0]), fv("b", vec![1.0]), fv("c", vec![10.0])]).unwrap();
        assert_eq!(medoid(&[0, 1, 2], &m).unwrap(), 1);
        assert_eq!(medoid(&[2], &m).unwrap(), 2);
        assert_eq!(medoid(&[0, 1], &m).unwrap(), 0);
        assert!(medoid(&[], &m).is_err());
        assert!(medoid(&[3], &m).is_err());
    }

    #[test]
    fn profile_of_slot_index() {
        let start = DateTime::from_timestamp(0, 0).unwrap();
        let values: Vec<f64> = (0..96).map(|t| (t % 48) as f64).collect();
        let p = hourly_profile(&LoadSeries::complete("m", start, values)).unwrap();
        assert_eq!(p, (0..48).map(|s| Some(s as f64)).collect::<Vec<_>>());
        let hourly = to_hourly(&p);
        assert_eq!(hourly.len(), 24);
        assert_eq!(hourly[3], Some(6.0 + 7.0));
    }

    #[test]
    fn profile_two_days_with_gap() {
        let start = DateTime::from_timestamp(0, 0).unwrap();
        let mut s = LoadSeries::complete("m", start, vec![1.0; 96]);
        s.values[48 + 5] = 3.0;
        s.missing[10] = true;
        s.missing[58] = true;
        let p = hourly_profile(&s).unwrap();
        assert_eq!(p[5], Some(2.0));
        assert_eq!(p[10], None);
        assert_eq!(p[11], Some(1.0));
        assert_eq!(to_hourly(&p)[5], None);
    }

    #[test]
    fn feature_means_examples() {
        let p = Partition::from_labels(&[0, 0, 1]);
        let f = vec![fv("a", vec![0.0, 2.0]), fv("b", vec![2.0, 0.0]), fv("c", vec![5.0, 6.0])];
        let m = cluster_feature_means(&f, &p, false).unwrap();
        assert_eq!(m[0].means, vec![1.0, 1.0]);
        assert_eq!(m[1].means, vec![5.0, 6.0]);
        assert_eq!(m[1].size, 1);
        let flagged = flag_atypical(&p, 0.5);
        assert_eq!(cluster_feature_means(&f, &flagged, false).unwrap().len(), 1);
    }
}
