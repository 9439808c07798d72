use loadclust::features::FeatureKind;
use loadclust::tree::{cv_misclassification, fit_tree, write_importance_csv, DecisionTree, TreeParams};
use serde::Serialize;

use super::{available_partitions, check_input_hashes, check_same_meters, kind_file, load_features, load_partition, missing_input, open_out, out_path};
use crate::config::{ImportanceMode, PipelineConfig};
use crate::Failure;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImportanceSummary {
    pub config_hash: String,
    pub method: FeatureKind,
    pub mode: ImportanceMode,
    pub params: TreeParams,
    pub rows: usize,
    /// Cluster id behind each tree class.
    pub class_clusters: Vec<usize>,
    pub training_error: f64,
    pub cv_folds: usize,
    pub cv_error: f64,
    pub fold_errors: Vec<f64>,
    pub splits: usize,
    pub depth: usize,
    pub ranking: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct TreeFile<'a> {
    config_hash: &'a str,
    method: FeatureKind,
    feature_names: &'a [String],
    class_clusters: &'a [usize],
    tree: &'a DecisionTree,
}

pub fn run(cfg: &PipelineConfig, methods: Option<Vec<FeatureKind>>, force: bool) -> Result<(), Failure> {
    let dir = out_path(cfg)?.to_path_buf();
    let methods = methods.unwrap_or_else(|| available_partitions(&dir));
    if methods.is_empty() {
        return Err(missing_input(
            &dir.join("partition_*.csv"),
            &format!("run `loadclust cluster --out {}` first", dir.display()),
        ));
    }
    let mut loaded = Vec::new();
    let mut inputs = Vec::new();
    for &kind in &methods {
        let (ids, partition) = load_partition(&dir, kind)?;
        let (header, features) = load_features(&dir, kind)?;
        check_same_meters(kind, &ids, &features)?;
        let typical = partition.typical_clusters();
        if typical.len() < 2 {
            return Err(Failure::Data(format!(
                "{kind}: {} non-atypical cluster(s) left, a tree needs at least 2; cut into more clusters",
                typical.len()
            )));
        }
        inputs.push(kind_file("partition", kind, "csv"));
        inputs.push(kind_file("features", kind, "bin"));
        loaded.push((kind, partition, header, features, typical));
    }
    check_input_hashes(&dir, &inputs, force)?;

    let params = cfg.tree_params();
    let mut out = open_out(cfg, "importance")?;
    for (kind, partition, header, features, typical) in loaded {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (leaf, f) in features.iter().enumerate() {
            if let Ok(class) = typical.binary_search(&partition.labels[leaf]) {
                x.push(f.values.clone());
                y.push(class);
            }
        }
        let tree = fit_tree(&x, &y, params)?;
        let permutation = cfg.importance_mode == ImportanceMode::Permutation;
        let cv = cv_misclassification(&x, &y, cfg.cv_folds, params, cfg.seed, permutation)?;
        let importance = match (permutation, &cv.permutation_importance) {
            (true, Some(p)) => p.clone(),
            _ => tree.importance(),
        };

        let mut order: Vec<usize> = (0..importance.len()).collect();
        order.sort_by(|&a, &b| importance[b].total_cmp(&importance[a]).then(a.cmp(&b)));
        let summary = ImportanceSummary {
            config_hash: out.config_hash().to_string(),
            method: kind,
            mode: cfg.importance_mode,
            params,
            rows: x.len(),
            class_clusters: typical.clone(),
            training_error: tree.error_rate(&x, &y)?,
            cv_folds: cv.folds,
            cv_error: cv.error,
            fold_errors: cv.fold_errors,
            splits: tree.split_count(),
            depth: tree.depth(),
            ranking: order.iter().map(|&i| header.names[i].clone()).collect(),
        };
        log::info!("{kind}: CV error {:.4}, top feature {}", summary.cv_error, summary.ranking[0]);

        out.write_with(&kind_file("importance", kind, "csv"), |w| Ok(write_importance_csv(&importance, &header.names, w)?))?;
        let hash = out.config_hash().to_string();
        let file = TreeFile { config_hash: &hash, method: kind, feature_names: &header.names, class_clusters: &typical, tree: &tree };
        out.write_json(&kind_file("tree", kind, "json"), &file)?;
        out.write_json(&kind_file("importance", kind, "json"), &summary)?;
    }
    out.finish()?;
    Ok(())
}
