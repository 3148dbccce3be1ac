use std::sync::Arc;

use polycl_core::augment::{make_views, AugmentConfig};
use polycl_core::graphdata::{normalize_adjacency, Graph};
use polycl_core::tensor::Tensor;

fn ring(n: usize, f: usize) -> Graph {
    let edges = (0..n).map(|i| (i, (i + 1) % n));
    Graph::new(n, edges, Tensor::filled(n, f, 1.0), vec![0; n], 1).unwrap()
}

#[test]
fn drop_and_mask_frequencies_match_probabilities() {
    let g = ring(500, 200);
    let base = Arc::new(normalize_adjacency(&g));
    let cfg = AugmentConfig {
        edge_drop: [0.2, 0.4],
        feature_mask: [0.1, 0.3],
        seed: 17,
    };
    let epochs = 40;
    let (mut kept, mut masked) = ([0usize; 2], [0usize; 2]);
    for e in 0..epochs {
        let (a, b) = make_views(&g.unlabeled(), &base, &cfg, e);
        for (k, v) in [a, b].into_iter().enumerate() {
            kept[k] += v.kept_edges;
            masked[k] += v.masked_columns;
        }
    }
    for k in 0..2 {
        let drop = 1.0 - kept[k] as f64 / (epochs as usize * 500) as f64;
        let mask = masked[k] as f64 / (epochs as usize * 200) as f64;
        assert!((drop - cfg.edge_drop[k]).abs() < 0.02, "view {k} drop {drop}");
        assert!((mask - cfg.feature_mask[k]).abs() < 0.02, "view {k} mask {mask}");
    }
}

#[test]
fn masked_columns_are_zero_in_every_row() {
    let g = ring(30, 50);
    let base = Arc::new(normalize_adjacency(&g));
    let cfg = AugmentConfig {
        feature_mask: [0.5, 0.5],
        ..AugmentConfig::default()
    };
    let (v, _) = make_views(&g.unlabeled(), &base, &cfg, 3);
    let zero_cols = (0..50)
        .filter(|&j| (0..30).all(|i| v.features.get(i, j) == 0.0))
        .count();
    assert_eq!(zero_cols, v.masked_columns);
    for j in 0..50 {
        let col: Vec<f64> = (0..30).map(|i| v.features.get(i, j)).collect();
        assert!(col.iter().all(|&x| x == 0.0) || col.iter().all(|&x| x == 1.0));
    }
}

#[test]
fn views_depend_only_on_seed_and_epoch() {
    let g = ring(40, 8);
    let base = Arc::new(normalize_adjacency(&g));
    let cfg = AugmentConfig::default();
    let (a, b) = make_views(&g.unlabeled(), &base, &cfg, 5);
    let (c, d) = make_views(&g.unlabeled(), &base, &cfg, 5);
    assert_eq!((&a.features, &a.adj), (&c.features, &c.adj));
    assert_eq!((&b.features, &b.adj), (&d.features, &d.adj));
    let (e, _) = make_views(&g.unlabeled(), &base, &cfg, 6);
    assert!(e.adj != c.adj || e.features != c.features);
}
