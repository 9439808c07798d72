use loadclust::dissimilarity::{build_matrix, build_matrix_mapped, standardize, write_matrix, write_sidecar, CondensedMatrix};
use loadclust::features::FeatureKind;
use loadclust::hclust::{agglomerate, cut, flag_atypical, write_dendrogram_csv, write_partition_csv, CutCriterion, Linkage};
use serde::Serialize;

use super::{kind_file, load_features, open_out};
use crate::config::PipelineConfig;
use crate::manifest::OutDir;
use crate::Failure;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterSummary {
    pub config_hash: String,
    pub method: FeatureKind,
    pub n: usize,
    pub linkage: Linkage,
    pub cut: String,
    pub k: usize,
    pub sizes: Vec<usize>,
    pub atypical_clusters: Vec<usize>,
    pub typical_clusters: usize,
    pub atypical_series: usize,
    pub matrix_file: Option<String>,
}

/// Builds the matrix in memory, or in a mapped file above the size cap.
fn matrix_for(
    cfg: &PipelineConfig,
    out: &mut OutDir,
    kind: FeatureKind,
    features: &[loadclust::features::FeatureVector],
) -> Result<(CondensedMatrix, Option<String>), Failure> {
    let name = kind_file("matrix", kind, "qcdm");
    let path = out.file(&name);
    let hash = out.config_hash().to_string();
    if features.len() > cfg.matrix_disk_cap {
        log::info!("{kind}: {} series above the in-memory cap, mapping {}", features.len(), path.display());
        let m = build_matrix_mapped(features, &path)?;
        write_sidecar(&m, &path, Some(&hash))?;
        out.track(name.clone());
        out.track(format!("{name}.json"));
        return Ok((m, Some(name)));
    }
    let m = build_matrix(features)?;
    if cfg.persist_matrix {
        write_matrix(&m, &path, Some(&hash))?;
        out.track(name.clone());
        out.track(format!("{name}.json"));
        return Ok((m, Some(name)));
    }
    Ok((m, None))
}

pub fn run(cfg: &PipelineConfig, methods: Vec<FeatureKind>) -> Result<(), Failure> {
    let cuts: Vec<(FeatureKind, CutCriterion)> = methods
        .iter()
        .map(|&kind| {
            cfg.cut_for(kind).map(|c| (kind, c)).ok_or_else(|| {
                Failure::Usage(format!(
                    "no cut for {kind}: pass --cut k=N (or height=H) or set cut_{} in the config",
                    kind.as_str().to_ascii_lowercase()
                ))
            })
        })
        .collect::<Result<_, _>>()?;

    let dir = super::out_path(cfg)?.to_path_buf();
    let loaded = cuts
        .iter()
        .map(|&(kind, _)| load_features(&dir, kind))
        .collect::<Result<Vec<_>, _>>()?;

    let mut out = open_out(cfg, "cluster")?;
    for ((kind, criterion), (_, features)) in cuts.into_iter().zip(loaded) {
        let features = if cfg.standardize { standardize(&features) } else { features };
        let (matrix, matrix_file) = matrix_for(cfg, &mut out, kind, &features)?;
        let dendrogram = agglomerate(&matrix, cfg.linkage)?;
        let partition = flag_atypical(&cut(&dendrogram, criterion)?, cfg.atypical_fraction);
        let ids = matrix.meter_ids().to_vec();
        drop(matrix);

        out.write_with(&kind_file("dendrogram", kind, "csv"), |w| Ok(write_dendrogram_csv(&dendrogram, w)?))?;
        out.write_with(&kind_file("partition", kind, "csv"), |w| Ok(write_partition_csv(&partition, &ids, w)?))?;
        let sizes = partition.sizes();
        let atypical_clusters: Vec<usize> = (0..partition.k).filter(|&c| partition.atypical[c]).collect();
        let summary = ClusterSummary {
            config_hash: out.config_hash().to_string(),
            method: kind,
            n: partition.n(),
            linkage: cfg.linkage,
            cut: criterion.to_string(),
            k: partition.k,
            typical_clusters: partition.k - atypical_clusters.len(),
            atypical_series: atypical_clusters.iter().map(|&c| sizes[c]).sum(),
            sizes,
            atypical_clusters,
            matrix_file,
        };
        log::info!("{kind}: {} clusters, {} typical", summary.k, summary.typical_clusters);
        out.write_json(&kind_file("cluster", kind, "json"), &summary)?;
    }
    out.finish()?;
    Ok(())
}
