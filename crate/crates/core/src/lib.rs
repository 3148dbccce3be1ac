//! Polynomial-only graph contrastive learning.
//!
//! Everything that touches node features is recorded on a [`tape::TapeGraph`],
//! so the same graph that is differentiated for training is also the
//! arithmetic circuit checked by [`hecheck`].

pub mod augment;
pub mod graphdata;
pub mod hecheck;
pub mod model;
pub mod objectives;
pub mod probe;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use graphdata::{Graph, SparseAdjacency, SplitMasks, UnlabeledGraph};
pub use tensor::Tensor;
