//! Heterogeneous graph collaborative filtering.
//!
//! The pipeline runs in five stages, one module each:
//!
//! * [`dataset`] parses implicit-feedback interaction files, filters sparse
//!   users and items, splits each user's history and samples BPR triples.
//! * [`hetgraph`] builds the user–item graph enriched with similarity-weighted
//!   user–user (and optionally item–item) edges plus self-loops, and its
//!   symmetric normalization.
//! * [`model`] holds the embedding table and per-layer weights and runs
//!   propagation over the normalized graph.
//! * [`training`] computes the BPR + L2 objective, its exact gradient, and
//!   runs mini-batch Adam with validation-based model selection.
//! * [`eval`] ranks all unseen items per user and reports recall@K / ndcg@K.
//!
//! [`experiment`] glues them together for single runs and ablation sweeps,
//! and [`synthetic`] generates interaction data with planted structure.

pub mod dataset;
pub mod eval;
pub mod experiment;
pub mod hetgraph;
pub mod model;
pub mod sparse;
pub mod synthetic;
pub mod training;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("empty input: {0}")]
    Empty(String),
    #[error("dataset eliminated by filter (min interactions > {0})")]
    FilteredOut(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("node {0} has zero degree; enable self-loops or drop isolated nodes")]
    ZeroDegree(usize),
    #[error("{kind} edges exceed budget: {pairs} co-occurring pairs > {budget}")]
    OverBudget {
        kind: &'static str,
        pairs: usize,
        budget: usize,
    },
    #[error("index {index} out of range (< {bound})")]
    OutOfRange { index: usize, bound: usize },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },
    #[error("bad file format in {path}: {msg}")]
    Format { path: String, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Derives an independent per-component seed from a run seed.
///
/// Every random stream in a run (split, init, sampling, dropout, graph
/// subsampling) takes its seed from here with a distinct `stream` tag, so
/// changing how one component consumes randomness never shifts another.
pub fn derive_seed(seed: u64, stream: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stream.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(seed ^ h)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
