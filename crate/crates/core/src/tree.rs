//! CART classification trees (Gini impurity) for explaining cluster labels
//! from features, with impurity-decrease and permutation importances and
//! stratified k-fold cross-validation.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::par;

/// Node sizes above which split search fans out over features.
const PARALLEL_SCAN_MIN: usize = 2_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    pub min_impurity_decrease: f64,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self { max_depth: 12, min_leaf: 5, min_impurity_decrease: 1e-4 }
    }
}

impl TreeParams {
    fn validate(&self) -> Result<()> {
        if self.min_leaf == 0 {
            return Err(invalid("min_leaf", "must be at least 1"));
        }
        if !(self.min_impurity_decrease >= 0.0) {
            return Err(invalid("min_impurity_decrease", "must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        samples: usize,
        impurity: f64,
        /// Node-local Gini decrease achieved by this split.
        decrease: f64,
    },
    Leaf {
        class: usize,
        /// Training samples per class, aligned with [`DecisionTree::classes`].
        class_counts: Vec<usize>,
        samples: usize,
        impurity: f64,
    },
}

/// A fitted tree. Node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub n_features: usize,
    /// Distinct training labels, ascending.
    pub classes: Vec<usize>,
    pub params: TreeParams,
    pub nodes: Vec<Node>,
}

fn gini(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / nf).powi(2)).sum::<f64>()
}

/// Majority class index; ties go to the smaller index.
fn majority(counts: &[usize]) -> usize {
    let mut best = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = c;
        }
    }
    best
}

#[derive(Clone, Copy)]
struct Candidate {
    decrease: f64,
    threshold: f64,
}

fn threshold_between(a: f64, b: f64) -> f64 {
    let mid = a + (b - a) / 2.0;
    // a midpoint that rounds up to `b` would send `b` left
    if mid < b { mid } else { a }
}

/// Best threshold on one feature for the samples in `idx`.
fn scan_feature(
    column: &[f64],
    y: &[usize],
    idx: &[usize],
    n_classes: usize,
    parent: &[usize],
    parent_impurity: f64,
    min_leaf: usize,
) -> Option<Candidate> {
    let n = idx.len();
    let mut order: Vec<usize> = idx.to_vec();
    order.sort_by(|&a, &b| column[a].total_cmp(&column[b]).then(a.cmp(&b)));
    let mut left = vec![0usize; n_classes];
    let mut best: Option<Candidate> = None;
    for pos in 0..n - 1 {
        left[y[order[pos]]] += 1;
        let n_left = pos + 1;
        let n_right = n - n_left;
        let (a, b) = (column[order[pos]], column[order[pos + 1]]);
        if a == b || n_left < min_leaf || n_right < min_leaf {
            continue;
        }
        let right: Vec<usize> = parent.iter().zip(&left).map(|(p, l)| p - l).collect();
        let weighted = (n_left as f64 * gini(&left, n_left) + n_right as f64 * gini(&right, n_right)) / n as f64;
        let decrease = parent_impurity - weighted;
        if best.is_none_or(|c| decrease > c.decrease) {
            best = Some(Candidate { decrease, threshold: threshold_between(a, b) });
        }
    }
    best
}

struct Builder<'a> {
    columns: &'a [Vec<f64>],
    y: &'a [usize],
    n_classes: usize,
    params: TreeParams,
}

impl Builder<'_> {
    fn best_split(&self, idx: &[usize], counts: &[usize], impurity: f64) -> Option<(usize, Candidate)> {
        let scan = |f: usize| scan_feature(&self.columns[f], self.y, idx, self.n_classes, counts, impurity, self.params.min_leaf);
        let per_feature: Vec<Option<Candidate>> = if idx.len() >= PARALLEL_SCAN_MIN {
            par::map_range(self.columns.len(), scan)
        } else {
            (0..self.columns.len()).map(scan).collect()
        };
        let mut best: Option<(usize, Candidate)> = None;
        for (f, cand) in per_feature.into_iter().enumerate() {
            if let Some(c) = cand {
                if best.is_none_or(|(_, b)| c.decrease > b.decrease) {
                    best = Some((f, c));
                }
            }
        }
        best
    }
}

fn validate_xy(x: &[Vec<f64>], y: &[usize]) -> Result<usize> {
    if x.is_empty() {
        return Err(Error::Empty("tree training data"));
    }
    if x.len() != y.len() {
        return Err(Error::LengthMismatch { left: x.len(), right: y.len() });
    }
    let dim = x[0].len();
    for (i, row) in x.iter().enumerate() {
        if row.len() != dim {
            return Err(Error::LengthMismatch { left: dim, right: row.len() });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(invalid("features", format!("row {i} has a non-finite value")));
        }
    }
    Ok(dim)
}

/// Fits a CART tree on rows `x` with labels `y`.
///
/// Candidate thresholds are midpoints between consecutive distinct values;
/// a sample goes left iff its value is `<=` the threshold. The split with
/// the largest Gini decrease wins, ties going to the smaller feature index
/// and then the smaller threshold. A node stays a leaf at `max_depth`, when
/// pure, when no split leaves `min_leaf` samples on both sides, or when the
/// best decrease is not positive or below `min_impurity_decrease`.
pub fn fit_tree(x: &[Vec<f64>], y: &[usize], params: TreeParams) -> Result<DecisionTree> {
    params.validate()?;
    let dim = validate_xy(x, y)?;
    let mut classes: Vec<usize> = y.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let dense: Vec<usize> = y.iter().map(|l| classes.binary_search(l).expect("collected")).collect();
    let columns: Vec<Vec<f64>> = (0..dim).map(|f| x.iter().map(|row| row[f]).collect()).collect();
    let builder = Builder { columns: &columns, y: &dense, n_classes: classes.len(), params };

    let mut nodes: Vec<Option<Node>> = vec![None];
    let mut stack: Vec<(usize, Vec<usize>, usize)> = vec![(0, (0..x.len()).collect(), 0)];
    while let Some((id, idx, depth)) = stack.pop() {
        let mut counts = vec![0usize; classes.len()];
        for &i in &idx {
            counts[dense[i]] += 1;
        }
        let impurity = gini(&counts, idx.len());
        let split = if depth < params.max_depth && impurity > 0.0 && idx.len() >= 2 * params.min_leaf {
            builder
                .best_split(&idx, &counts, impurity)
                .filter(|(_, c)| c.decrease > 0.0 && c.decrease >= params.min_impurity_decrease)
        } else {
            None
        };
        match split {
            Some((feature, c)) => {
                let (go_left, go_right): (Vec<usize>, Vec<usize>) =
                    idx.iter().partition(|&&i| columns[feature][i] <= c.threshold);
                let (left, right) = (nodes.len(), nodes.len() + 1);
                nodes.push(None);
                nodes.push(None);
                nodes[id] = Some(Node::Split {
                    feature,
                    threshold: c.threshold,
                    left,
                    right,
                    samples: idx.len(),
                    impurity,
                    decrease: c.decrease,
                });
                stack.push((right, go_right, depth + 1));
                stack.push((left, go_left, depth + 1));
            }
            None => {
                nodes[id] = Some(Node::Leaf {
                    class: classes[majority(&counts)],
                    class_counts: counts,
                    samples: idx.len(),
                    impurity,
                });
            }
        }
    }
    Ok(DecisionTree {
        n_features: dim,
        classes,
        params,
        nodes: nodes.into_iter().map(|n| n.expect("every node filled")).collect(),
    })
}

impl DecisionTree {
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        if x.len() != self.n_features {
            return Err(Error::LengthMismatch { left: self.n_features, right: x.len() });
        }
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Split { feature, threshold, left, right, .. } => {
                    id = if x[*feature] <= *threshold { *left } else { *right };
                }
                Node::Leaf { class, .. } => return Ok(*class),
            }
        }
    }

    pub fn predict_many(&self, x: &[Vec<f64>]) -> Result<Vec<usize>> {
        x.iter().map(|row| self.predict(row)).collect()
    }

    /// Fraction of rows whose prediction differs from `y`.
    pub fn error_rate(&self, x: &[Vec<f64>], y: &[usize]) -> Result<f64> {
        if x.len() != y.len() {
            return Err(Error::LengthMismatch { left: x.len(), right: y.len() });
        }
        Ok(self.misclassified(x, y)? as f64 / x.len().max(1) as f64)
    }

    fn misclassified(&self, x: &[Vec<f64>], y: &[usize]) -> Result<usize> {
        let mut wrong = 0;
        for (row, &label) in x.iter().zip(y) {
            if self.predict(row)? != label {
                wrong += 1;
            }
        }
        Ok(wrong)
    }

    pub fn split_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Split { .. })).count()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], id: usize) -> usize {
            match &nodes[id] {
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }

    /// Impurity-decrease importance: per feature, the sum over its splits of
    /// `(node samples / root samples) * decrease`, normalised to sum to 1.
    /// All zeros for a single-leaf tree.
    pub fn importance(&self) -> Vec<f64> {
        let root = match &self.nodes[0] {
            Node::Split { samples, .. } | Node::Leaf { samples, .. } => *samples as f64,
        };
        let mut imp = vec![0.0; self.n_features];
        for node in &self.nodes {
            if let Node::Split { feature, samples, decrease, .. } = node {
                imp[*feature] += *samples as f64 / root * decrease;
            }
        }
        let total: f64 = imp.iter().sum();
        if total > 0.0 {
            imp.iter_mut().for_each(|v| *v /= total);
        }
        imp
    }
}

/// Increase in misclassified rows when each feature column is shuffled.
fn permutation_losses(tree: &DecisionTree, x: &[Vec<f64>], y: &[usize], seed: u64) -> Result<Vec<f64>> {
    let baseline = tree.misclassified(x, y)? as f64;
    let mut losses = Vec::with_capacity(tree.n_features);
    for f in 0..tree.n_features {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(f as u64));
        let mut column: Vec<f64> = x.iter().map(|r| r[f]).collect();
        column.shuffle(&mut rng);
        let shuffled: Vec<Vec<f64>> = x
            .iter()
            .zip(&column)
            .map(|(r, &v)| {
                let mut r = r.clone();
                r[f] = v;
                r
            })
            .collect();
        losses.push(tree.misclassified(&shuffled, y)? as f64 - baseline);
    }
    Ok(losses)
}

/// Permutation importance on `(x, y)`: the rise in error rate after shuffling
/// each feature column (seeded per feature). Values may be negative.
pub fn permutation_importance(tree: &DecisionTree, x: &[Vec<f64>], y: &[usize], seed: u64) -> Result<Vec<f64>> {
    validate_xy(x, y)?;
    let n = x.len() as f64;
    Ok(permutation_losses(tree, x, y, seed)?.into_iter().map(|l| l / n).collect())
}

/// Stratified fold assignment: each class is shuffled and dealt round-robin,
/// continuing the rotation from one class to the next.
pub fn stratified_folds(y: &[usize], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(invalid("folds", "must be at least 2"));
    }
    if folds > y.len() {
        return Err(invalid("folds", format!("{folds} folds for {} samples", y.len())));
    }
    let mut classes: Vec<usize> = y.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0; y.len()];
    let mut next = 0;
    for c in classes {
        let mut members: Vec<usize> = (0..y.len()).filter(|&i| y[i] == c).collect();
        if members.len() < folds {
            log::warn!("class {c} has {} members for {folds} folds; some folds will lack it", members.len());
        }
        members.shuffle(&mut rng);
        for i in members {
            assignment[i] = next % folds;
            next += 1;
        }
    }
    Ok(assignment)
}

/// Cross-validation outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: usize,
    /// Misclassified held-out rows over all rows.
    pub error: f64,
    pub fold_errors: Vec<f64>,
    /// Pooled held-out permutation importance, when requested.
    pub permutation_importance: Option<Vec<f64>>,
}

/// Stratified k-fold cross-validated misclassification, pooled over folds.
///
/// Folds are fitted in parallel; the result depends only on `seed`.
pub fn cv_misclassification(
    x: &[Vec<f64>],
    y: &[usize],
    folds: usize,
    params: TreeParams,
    seed: u64,
    with_permutation: bool,
) -> Result<CvReport> {
    validate_xy(x, y)?;
    let assignment = stratified_folds(y, folds, seed)?;
    let outcomes = par::map_range(folds, |k| -> Result<(usize, usize, Option<Vec<f64>>)> {
        let (mut xtr, mut ytr, mut xte, mut yte) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (i, &f) in assignment.iter().enumerate() {
            if f == k {
                xte.push(x[i].clone());
                yte.push(y[i]);
            } else {
                xtr.push(x[i].clone());
                ytr.push(y[i]);
            }
        }
        let tree = fit_tree(&xtr, &ytr, params)?;
        let wrong = tree.misclassified(&xte, &yte)?;
        let perm = if with_permutation {
            Some(permutation_losses(&tree, &xte, &yte, seed ^ (k as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))?)
        } else {
            None
        };
        Ok((wrong, yte.len(), perm))
    });

    let n = x.len() as f64;
    let mut wrong_total = 0;
    let mut fold_errors = Vec::with_capacity(folds);
    let mut perm_total: Option<Vec<f64>> = with_permutation.then(|| vec![0.0; x[0].len()]);
    for outcome in outcomes {
        let (wrong, size, perm) = outcome?;
        wrong_total += wrong;
        fold_errors.push(if size > 0 { wrong as f64 / size as f64 } else { 0.0 });
        if let (Some(total), Some(p)) = (perm_total.as_mut(), perm) {
            total.iter_mut().zip(p).for_each(|(t, v)| *t += v);
        }
    }
    Ok(CvReport {
        folds,
        error: wrong_total as f64 / n,
        fold_errors,
        permutation_importance: perm_total.map(|t| t.into_iter().map(|v| v / n).collect()),
    })
}

/// Writes `feature_index,feature_name,importance`.
pub fn write_importance_csv<W: Write>(importance: &[f64], names: &[String], writer: W) -> Result<()> {
    if importance.len() != names.len() {
        return Err(Error::LengthMismatch { left: importance.len(), right: names.len() });
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["feature_index", "feature_name", "importance"])?;
    for (i, (v, name)) in importance.iter().zip(names).enumerate() {
        w.write_record([i.to_string(), name.clone(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(values: &[f64]) -> Vec<Vec<f64>> {
        values.iter().map(|&v| vec![v]).collect()
    }

    fn loose() -> TreeParams {
        TreeParams { max_depth: usize::MAX, min_leaf: 1, min_impurity_decrease: 0.0 }
    }

    #[test]
    fn four_point_threshold() {
        let tree = fit_tree(&rows(&[0.0, 1.0, 2.0, 3.0]), &[0, 0, 1, 1], loose()).unwrap();
        match &tree.nodes[0] {
            Node::Split { feature, threshold, decrease, .. } => {
                assert_eq!(*feature, 0);
                assert_eq!(*threshold, 1.5);
                assert_eq!(*decrease, 0.5);
            }
            other => panic!("expected split, got {other:?}"),
        }
        assert_eq!(tree.depth(), 1);
        assert_eq!(tree.importance(), vec![1.0]);
    }

    #[test]
    fn separable_one_dimensional() {
        let x: Vec<f64> = (-20..20).map(|v| v as f64 + 0.5).collect();
        let y: Vec<usize> = x.iter().map(|&v| usize::from(v >= 0.0)).collect();
        let tree = fit_tree(&rows(&x), &y, TreeParams::default()).unwrap();
        assert_eq!(tree.error_rate(&rows(&x), &y).unwrap(), 0.0);
        assert_eq!(tree.depth(), 1);
        assert_eq!(tree.predict(&[-5.0]).unwrap(), 0);
        assert_eq!(tree.predict(&[5.0]).unwrap(), 1);
        assert!(tree.predict(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn xor_is_not_split_at_depth_one() {
        let x = vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]];
        let y = vec![0, 1, 1, 0];
        let params = TreeParams { max_depth: 1, ..loose() };
        let tree = fit_tree(&x, &y, params).unwrap();
        assert_eq!(tree.error_rate(&x, &y).unwrap(), 0.5);
        assert_eq!(tree.importance(), vec![0.0, 0.0]);
        let deep = fit_tree(&x, &y, TreeParams { max_depth: 2, ..loose() }).unwrap();
        // the root split itself has zero Gini decrease, so growth stops there
        assert_eq!(deep.split_count(), 0);
    }

    #[test]
    fn single_class_is_one_leaf() {
        let tree = fit_tree(&rows(&[1.0, 2.0, 3.0]), &[4, 4, 4], loose()).unwrap();
        assert_eq!(tree.nodes.len(), 1);
        assert_eq!(tree.predict(&[100.0]).unwrap(), 4);
        assert_eq!(tree.importance(), vec![0.0]);
    }

    #[test]
    fn majority_ties_pick_smaller_class() {
        let tree = fit_tree(&rows(&[1.0, 1.0]), &[7, 3], loose()).unwrap();
        assert_eq!(tree.predict(&[1.0]).unwrap(), 3);
    }

    #[test]
    fn equal_gain_prefers_smaller_feature() {
        let x = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]];
        let tree = fit_tree(&x, &[0, 0, 1, 1], loose()).unwrap();
        assert!(matches!(tree.nodes[0], Node::Split { feature: 0, .. }));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(fit_tree(&[], &[], loose()).is_err());
        assert!(fit_tree(&rows(&[1.0]), &[0, 1], loose()).is_err());
        assert!(fit_tree(&rows(&[f64::NAN]), &[0], loose()).is_err());
        assert!(fit_tree(&rows(&[1.0]), &[0], TreeParams { min_leaf: 0, ..loose() }).is_err());
    }

    #[test]
    fn adjacent_floats_get_a_usable_threshold() {
        let a = 1.0f64;
        let b = f64::from_bits(a.to_bits() + 1);
        let tree = fit_tree(&rows(&[a, b]), &[0, 1], loose()).unwrap();
        assert_eq!(tree.predict(&[a]).unwrap(), 0);
        assert_eq!(tree.predict(&[b]).unwrap(), 1);
    }

    #[test]
    fn stratified_folds_balance_classes() {
        let y: Vec<usize> = (0..100).map(|i| usize::from(i >= 30)).collect();
        let folds = stratified_folds(&y, 10, 3).unwrap();
        for k in 0..10 {
            let members: Vec<usize> = (0..100).filter(|&i| folds[i] == k).collect();
            assert_eq!(members.len(), 10);
            assert_eq!(members.iter().filter(|&&i| y[i] == 0).count(), 3);
        }
        assert_eq!(folds, stratified_folds(&y, 10, 3).unwrap());
        assert!(stratified_folds(&y, 1, 0).is_err());
        assert!(stratified_folds(&y[..3], 4, 0).is_err());
    }

    #[test]
    fn cv_separable_is_perfect() {
        let x: Vec<f64> = (0..100).map(|v| v as f64).collect();
        let y: Vec<usize> = x.iter().map(|&v| usize::from(v >= 50.0)).collect();
        let report = cv_misclassification(&rows(&x), &y, 5, TreeParams::default(), 1, true).unwrap();
        assert_eq!(report.error, 0.0);
        assert_eq!(report.fold_errors.len(), 5);
        assert!(report.permutation_importance.unwrap()[0] > 0.3);
    }

    #[test]
    fn importance_csv() {
        let mut buf = Vec::new();
        write_importance_csv(&[0.25, 0.75], &["a".into(), "b".into()], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "feature_index,feature_name,importance\n0,a,0.25\n1,b,0.75\n");
    }
}
