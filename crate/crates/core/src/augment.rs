//! Stochastic graph views: independent edge dropping and feature-column masking.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graphdata::{SparseAdjacency, UnlabeledGraph};
use crate::rng::{derive_indexed, rng_from};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Per-view probability of dropping each undirected edge.
    pub edge_drop: [f64; 2],
    /// Per-view probability of zeroing each feature column.
    pub feature_mask: [f64; 2],
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            // the GRACE Cora setting; tuned on Cora for both objectives
            edge_drop: [0.2, 0.4],
            feature_mask: [0.3, 0.4],
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, p) in [
            ("augment.edge_drop_1", self.edge_drop[0]),
            ("augment.edge_drop_2", self.edge_drop[1]),
            ("augment.feat_mask_1", self.feature_mask[0]),
            ("augment.feat_mask_2", self.feature_mask[1]),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(format!("{name} must be in [0, 1), got {p}"));
            }
        }
        Ok(())
    }
}

/// One augmented copy of the graph.
#[derive(Clone, Debug)]
pub struct View {
    pub adj: Arc<SparseAdjacency>,
    pub features: Tensor,
    pub kept_edges: usize,
    pub masked_columns: usize,
}

fn make_view(
    g: &UnlabeledGraph<'_>,
    base: &Arc<SparseAdjacency>,
    edge_drop: f64,
    feature_mask: f64,
    seed: u64,
) -> View {
    let mut rng = rng_from(seed);
    let adj = if edge_drop > 0.0 {
        let kept: Vec<(usize, usize)> = g
            .edges
            .iter()
            .copied()
            .filter(|_| rng.gen::<f64>() >= edge_drop)
            .collect();
        Arc::new(SparseAdjacency::normalized(g.num_nodes, &kept))
    } else {
        Arc::clone(base)
    };
    let kept_edges = if edge_drop > 0.0 {
        // nnz = N self-loops + 2 per kept edge
        (adj.nnz() - g.num_nodes) / 2
    } else {
        g.edges.len()
    };
    let mut features = g.features.clone();
    let mut masked_columns = 0;
    if feature_mask > 0.0 {
        let masked: Vec<bool> = (0..features.cols()).map(|_| rng.gen::<f64>() < feature_mask).collect();
        masked_columns = masked.iter().filter(|&&m| m).count();
        if masked_columns > 0 {
            for i in 0..features.rows() {
                for (x, &m) in features.row_mut(i).iter_mut().zip(&masked) {
                    if m {
                        *x = 0.0;
                    }
                }
            }
        }
    }
    View {
        adj,
        features,
        kept_edges,
        masked_columns,
    }
}

/// Both views for `epoch`. Each view is re-derived from the base graph and
/// is a pure function of `(cfg.seed, epoch, view index)`.
pub fn make_views(
    g: &UnlabeledGraph<'_>,
    base: &Arc<SparseAdjacency>,
    cfg: &AugmentConfig,
    epoch: u64,
) -> (View, View) {
    let epoch_seed = derive_indexed(cfg.seed, epoch);
    let view = |k: usize| {
        make_view(
            g,
            base,
            cfg.edge_drop[k],
            cfg.feature_mask[k],
            derive_indexed(epoch_seed, k as u64),
        )
    };
    (view(0), view(1))
}
