//! Shared fixtures for the kernel benchmarks.

use polycl_core::graphdata::Graph;
use polycl_core::rng::rng_from;
use polycl_core::tensor::Tensor;
use rand::Rng;

/// Random graph with about `avg_degree` neighbours per node and sparse
/// binary features (roughly citation-network density).
pub fn citation_like(n: usize, features: usize, avg_degree: usize, seed: u64) -> Graph {
    let mut rng = rng_from(seed);
    let edges: Vec<(usize, usize)> = (0..n * avg_degree / 2)
        .map(|_| (rng.gen_range(0..n), rng.gen_range(0..n)))
        .collect();
    let x = Tensor::from_fn(n, features, |_, _| if rng.gen_bool(0.013) { 1.0 } else { 0.0 });
    Graph::new(n, edges, x, vec![0; n], 1).expect("valid fixture")
}

pub fn dense(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = rng_from(seed);
    Tensor::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}
