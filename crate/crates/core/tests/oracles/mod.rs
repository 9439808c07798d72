//! Independent brute-force reference implementations used by the test suites.
//!
//! Each one follows the textbook definition as directly as possible and
//! shares no code with the library.

#![allow(dead_code)]

/// Lag-`j` autocorrelation over complete pairs, by direct summation.
pub fn acf_direct(x: &[f64], missing: &[bool], k_max: usize) -> Vec<f64> {
    (1..=k_max)
        .map(|j| {
            let pairs: Vec<(f64, f64)> = (0..x.len() - j)
                .filter(|&t| !missing[t] && !missing[t + j])
                .map(|t| (x[t], x[t + j]))
                .collect();
            let n = pairs.len() as f64;
            let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
            let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
            let cov = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / n;
            let vx = pairs.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>() / n;
            let vy = pairs.iter().map(|p| (p.1 - my).powi(2)).sum::<f64>() / n;
            (cov / (vx * vy).sqrt()).clamp(-1.0, 1.0)
        })
        .collect()
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Partial autocorrelations as the last Yule-Walker coefficient of each order.
pub fn pacf_yule_walker(rho: &[f64]) -> Vec<f64> {
    let r = |lag: usize| if lag == 0 { 1.0 } else { rho[lag - 1] };
    (1..=rho.len())
        .map(|k| {
            let a: Vec<Vec<f64>> = (0..k).map(|i| (0..k).map(|j| r(i.abs_diff(j))).collect()).collect();
            let b: Vec<f64> = (1..=k).map(r).collect();
            solve(a, b)[k - 1].clamp(-1.0, 1.0)
        })
        .collect()
}

/// Quantile by sorting and interpolating at `h = (n - 1) tau`.
pub fn quantile_direct(values: &[f64], tau: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = (v.len() - 1) as f64 * tau;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Quantile autocovariance by direct counting over complete pairs.
pub fn qc_direct(x: &[f64], missing: &[bool], lag: usize, tau: f64, tau_prime: f64) -> f64 {
    let observed: Vec<f64> = x.iter().zip(missing).filter(|(_, m)| !**m).map(|(v, _)| *v).collect();
    let qa = quantile_direct(&observed, tau);
    let qb = quantile_direct(&observed, tau_prime);
    let mut pairs = 0usize;
    let mut hits = 0usize;
    for t in 0..x.len() - lag {
        if missing[t] || missing[t + lag] {
            continue;
        }
        pairs += 1;
        if x[t] <= qa && x[t + lag] <= qb {
            hits += 1;
        }
    }
    hits as f64 / pairs as f64 - tau * tau_prime
}

pub fn euclid_direct(u: &[f64], v: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..u.len() {
        s += (u[k] - v[k]).powi(2);
    }
    s.sqrt()
}

/// Per-cluster means, clusters in ascending id order.
pub fn means_direct(rows: &[Vec<f64>], labels: &[usize]) -> Vec<Vec<f64>> {
    let k = labels.iter().max().map_or(0, |m| m + 1);
    (0..k)
        .map(|c| {
            let members: Vec<&Vec<f64>> = rows.iter().zip(labels).filter(|(_, &l)| l == c).map(|(r, _)| r).collect();
            (0..rows[0].len())
                .map(|d| members.iter().map(|r| r[d]).sum::<f64>() / members.len() as f64)
                .collect()
        })
        .collect()
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Link {
    Single,
    Complete,
    Average,
}

/// Naive agglomeration straight from the linkage definitions over original
/// dissimilarities. Returns `(left, right, height, size)` with node ids as in
/// the library (leaf `i`, merge `k` creates `n + k`, left < right).
pub fn naive_agglomerate(d: &[Vec<f64>], link: Link) -> Vec<(usize, usize, f64, usize)> {
    let n = d.len();
    let mut clusters: Vec<(usize, Vec<usize>)> = (0..n).map(|i| (i, vec![i])).collect();
    let mut merges = Vec::new();
    while clusters.len() > 1 {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let cross = clusters[a].1.iter().flat_map(|&i| clusters[b].1.iter().map(move |&j| d[i][j]));
                let value = match link {
                    Link::Single => cross.fold(f64::INFINITY, f64::min),
                    Link::Complete => cross.fold(f64::NEG_INFINITY, f64::max),
                    Link::Average => {
                        let v: Vec<f64> = cross.collect();
                        v.iter().sum::<f64>() / v.len() as f64
                    }
                };
                if best.is_none_or(|(h, _, _)| value < h) {
                    best = Some((value, a, b));
                }
            }
        }
        let (h, a, b) = best.unwrap();
        let (cb, mb) = clusters.remove(b);
        let (ca, ma) = clusters.remove(a);
        let mut members = ma;
        members.extend(mb);
        merges.push((ca.min(cb), ca.max(cb), h, members.len()));
        clusters.push((n + merges.len() - 1, members));
    }
    merges
}

/// Edge weights of a minimum spanning tree (Prim), ascending.
pub fn mst_weights(d: &[Vec<f64>]) -> Vec<f64> {
    let n = d.len();
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    best[0] = 0.0;
    let mut weights = Vec::new();
    for step in 0..n {
        let u = (0..n).filter(|&v| !in_tree[v]).min_by(|&a, &b| best[a].total_cmp(&best[b])).unwrap();
        in_tree[u] = true;
        if step > 0 {
            weights.push(best[u]);
        }
        for v in 0..n {
            if !in_tree[v] && d[u][v] < best[v] {
                best[v] = d[u][v];
            }
        }
    }
    weights.sort_by(f64::total_cmp);
    weights
}

/// Adjusted Rand index from explicit pair enumeration.
pub fn ari_pairs(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let (mut both, mut only_a, mut only_b, mut neither) = (0f64, 0f64, 0f64, 0f64);
    for i in 0..n {
        for j in i + 1..n {
            match (a[i] == a[j], b[i] == b[j]) {
                (true, true) => both += 1.0,
                (true, false) => only_a += 1.0,
                (false, true) => only_b += 1.0,
                (false, false) => neither += 1.0,
            }
        }
    }
    let total = both + only_a + only_b + neither;
    let same_a = both + only_a;
    let same_b = both + only_b;
    let expected = same_a * same_b / total;
    let max = 0.5 * (same_a + same_b);
    (both - expected) / (max - expected)
}

/// Pearson statistic and p-value, with the tail taken from statrs.
pub fn chi_squared_statrs(counts: &[Vec<f64>]) -> (f64, f64) {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    let rows: Vec<f64> = counts.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<f64> = (0..counts[0].len()).map(|j| counts.iter().map(|r| r[j]).sum()).collect();
    let total: f64 = rows.iter().sum();
    let mut stat = 0.0;
    for (i, r) in counts.iter().enumerate() {
        for (j, o) in r.iter().enumerate() {
            let e = rows[i] * cols[j] / total;
            stat += (o - e).powi(2) / e;
        }
    }
    let df = ((rows.len() - 1) * (cols.len() - 1)) as f64;
    (stat, ChiSquared::new(df).unwrap().sf(stat))
}
