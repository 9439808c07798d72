mod oracles;

use loadclust::dissimilarity::CondensedMatrix;
use loadclust::features::FeatureKind;
use loadclust::hclust::{agglomerate, cut, CutCriterion, Linkage};
use oracles::Link;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_instance(rng: &mut ChaCha8Rng, n: usize) -> (CondensedMatrix, Vec<Vec<f64>>) {
    let mut full = vec![vec![0.0; n]; n];
    let mut condensed = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let d = rng.random::<f64>();
            full[i][j] = d;
            full[j][i] = d;
            condensed.push(d);
        }
    }
    let ids = (0..n).map(|i| format!("m{i}")).collect();
    (CondensedMatrix::from_condensed(FeatureKind::Qc, ids, condensed).unwrap(), full)
}

fn link(l: Linkage) -> Link {
    match l {
        Linkage::Single => Link::Single,
        Linkage::Complete => Link::Complete,
        Linkage::Average => Link::Average,
    }
}

#[test]
fn nn_chain_matches_naive_agglomeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for trial in 0..200 {
        let n = rng.random_range(2..=50);
        let (m, full) = random_instance(&mut rng, n);
        for linkage in Linkage::ALL {
            let fast = agglomerate(&m, linkage).unwrap();
            let naive = oracles::naive_agglomerate(&full, link(linkage));
            assert_eq!(fast.merges.len(), n - 1);
            for (k, (f, s)) in fast.merges.iter().zip(&naive).enumerate() {
                assert_eq!((f.left, f.right, f.size), (s.0, s.1, s.3), "trial {trial} {linkage} merge {k}");
                assert!((f.height - s.2).abs() <= 1e-12 * s.2.max(1.0), "trial {trial} {linkage} merge {k}");
            }
        }
    }
}

#[test]
fn single_linkage_heights_are_mst_edges() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let n = rng.random_range(2..=60);
        let (m, full) = random_instance(&mut rng, n);
        let heights = agglomerate(&m, Linkage::Single).unwrap().heights();
        assert_eq!(heights, oracles::mst_weights(&full));
    }
}

#[test]
fn reducible_linkages_have_monotone_heights() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (m, _) = random_instance(&mut rng, 200);
    for linkage in [Linkage::Complete, Linkage::Average] {
        let h = agglomerate(&m, linkage).unwrap().heights();
        assert!(h.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn complete_linkage_cut_bounds_within_cluster_distances() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..100 {
        let n = rng.random_range(2..=100);
        let (m, full) = random_instance(&mut rng, n);
        let d = agglomerate(&m, Linkage::Complete).unwrap();
        let h = rng.random::<f64>();
        let p = cut(&d, CutCriterion::Height(h)).unwrap();
        for i in 0..n {
            for j in i + 1..n {
                if p.labels[i] == p.labels[j] {
                    assert!(full[i][j] <= h);
                }
            }
        }
    }
}

#[test]
fn cut_by_k_yields_k_labelled_clusters() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let (m, _) = random_instance(&mut rng, 40);
    let d = agglomerate(&m, Linkage::Average).unwrap();
    for k in 1..=40 {
        let p = cut(&d, CutCriterion::K(k)).unwrap();
        assert_eq!(p.k, k);
        let mut seen: Vec<usize> = p.labels.clone();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen, (0..k).collect::<Vec<_>>());
        // labels follow the smallest leaf of each cluster
        let firsts: Vec<usize> = (0..k).map(|c| p.labels.iter().position(|&l| l == c).unwrap()).collect();
        assert!(firsts.windows(2).all(|w| w[0] < w[1]));
    }
}

#[test]
fn ties_are_resolved_deterministically() {
    // every pair equidistant: all merges at the same height
    let n = 12;
    let ids: Vec<String> = (0..n).map(|i| i.to_string()).collect();
    let m = CondensedMatrix::from_condensed(FeatureKind::Qc, ids, vec![1.0; n * (n - 1) / 2]).unwrap();
    for linkage in Linkage::ALL {
        let a = agglomerate(&m, linkage).unwrap();
        let b = agglomerate(&m, linkage).unwrap();
        assert_eq!(a, b);
        assert!(a.heights().iter().all(|&h| h == 1.0));
        assert_eq!(a.merges.last().unwrap().size, n);
    }
}
