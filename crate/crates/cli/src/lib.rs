//! Experiment plumbing for the `polycl` binary: configuration, runners and
//! artifact writing.

pub mod config;
pub mod experiment;
