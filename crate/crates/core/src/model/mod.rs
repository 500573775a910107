//! Embedding table, per-layer weights and embedding propagation.
//!
//! One propagation layer maps `X = E^(l-1)` to
//!
//! ```text
//! S = Ã X                      (every neighbour, self-loop included)
//! Q = S - diag(Ã) ⊙ X          (same sum without the self-loop)
//! Z = S W1 + (Q ⊙ X) W2
//! E^(l) = LeakyReLU(Z)
//! ```
//!
//! so node `i` receives `Σ_j Ã_ij (e_j W1 + (e_i ⊙ e_j) W2)` with the
//! element-wise interaction term dropped on its own self-loop. Layer 1
//! reads the adjacency without user–user edges; later layers read the full
//! one. Embeddings are row vectors, so `W` here is the transpose of the
//! column-vector form `W e`.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};

use ndarray::{s, Array2};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::hetgraph::{NormalizedAdjacency, PropagationGraphs};
use crate::{derive_seed, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim: usize,
    /// Number of propagation layers; 0 gives plain BPR matrix factorization.
    pub layers: usize,
    pub leaky_slope: f64,
    /// Dropout rate on layer outputs during training (0 disables it).
    pub message_dropout: f64,
    /// Whether the base embeddings take part in the final concatenation.
    /// Ignored when `layers == 0`.
    pub include_layer0: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            layers: 2,
            leaky_slope: 0.2,
            message_dropout: 0.0,
            include_layer0: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("embedding size must be >= 1".into()));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::Config(format!(
                "leaky slope must lie in (0, 1), got {}",
                self.leaky_slope
            )));
        }
        if !(0.0..1.0).contains(&self.message_dropout) {
            return Err(Error::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.message_dropout
            )));
        }
        Ok(())
    }

    /// Layers whose output is concatenated into the final embedding.
    pub fn concatenated_layers(&self) -> std::ops::RangeInclusive<usize> {
        let first = if self.include_layer0 || self.layers == 0 { 0 } else { 1 };
        first..=self.layers
    }

    pub fn final_width(&self) -> usize {
        self.dim * self.concatenated_layers().count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub w1: Array2<f64>,
    pub w2: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// `n_nodes × dim`, users first, then items.
    pub embeddings: Array2<f64>,
    pub layers: Vec<LayerWeights>,
}

impl ModelParams {
    pub fn n_nodes(&self) -> usize {
        self.embeddings.nrows()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.ncols()
    }

    pub fn n_params(&self) -> usize {
        self.embeddings.len() + self.layers.iter().map(|l| l.w1.len() + l.w2.len()).sum::<usize>()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            embeddings: Array2::zeros(self.embeddings.raw_dim()),
            layers: self
                .layers
                .iter()
                .map(|l| LayerWeights {
                    w1: Array2::zeros(l.w1.raw_dim()),
                    w2: Array2::zeros(l.w2.raw_dim()),
                })
                .collect(),
        }
    }

    /// Every parameter array in a fixed order: E, then W1, W2 per layer.
    pub fn arrays(&self) -> Vec<&Array2<f64>> {
        let mut out = vec![&self.embeddings];
        for l in &self.layers {
            out.push(&l.w1);
            out.push(&l.w2);
        }
        out
    }

    pub fn arrays_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = vec![&mut self.embeddings];
        for l in &mut self.layers {
            out.push(&mut l.w1);
            out.push(&mut l.w2);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.arrays().iter().all(|a| a.iter().all(|v| v.is_finite()))
    }
}

fn xavier(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-bound..=bound))
}

/// Glorot-uniform initialization of the table and every weight matrix.
pub fn init_params(cfg: &ModelConfig, n_nodes: usize, seed: u64) -> Result<ModelParams> {
    cfg.validate()?;
    if n_nodes < 2 {
        return Err(Error::Config("need at least two nodes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "init"));
    let embeddings = xavier(&mut rng, n_nodes, cfg.dim);
    let layers = (0..cfg.layers)
        .map(|_| LayerWeights {
            w1: xavier(&mut rng, cfg.dim, cfg.dim),
            w2: xavier(&mut rng, cfg.dim, cfg.dim),
        })
        .collect();
    Ok(ModelParams { embeddings, layers })
}

/// Intermediates of one propagation layer kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerCache {
    /// `Ã X`
    pub agg: Array2<f64>,
    /// `Ã X` without the self-loop term.
    pub agg_neighbors: Array2<f64>,
    /// Pre-activation `Z`.
    pub pre: Array2<f64>,
    /// Inverted-dropout multipliers, when dropout was applied.
    pub mask: Option<Array2<f64>>,
}

/// Layer outputs `E^(0..=L)` plus per-layer caches.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub outputs: Vec<Array2<f64>>,
    pub caches: Vec<LayerCache>,
}

pub fn leaky_relu(z: f64, slope: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        slope * z
    }
}

/// Adjacency read by layer `l` (1-based).
pub fn layer_adjacency(graphs: &PropagationGraphs, layer: usize) -> &NormalizedAdjacency {
    if layer == 1 {
        &graphs.layer1
    } else {
        &graphs.full
    }
}

/// Runs `cfg.layers` propagation layers. Dropout is applied only when an
/// RNG is supplied and `cfg.message_dropout > 0`.
pub fn propagate(
    params: &ModelParams,
    graphs: &PropagationGraphs,
    cfg: &ModelConfig,
    mut dropout_rng: Option<&mut dyn RngCore>,
) -> Result<ForwardTrace> {
    let n = params.n_nodes();
    if graphs.layer1.n_nodes() != n || graphs.full.n_nodes() != n {
        return Err(Error::Shape(format!(
            "adjacency has {} nodes, embedding table has {n} rows",
            graphs.full.n_nodes()
        )));
    }
    if params.layers.len() < cfg.layers {
        return Err(Error::Shape(format!(
            "config asks for {} layers, parameters hold {}",
            cfg.layers,
            params.layers.len()
        )));
    }
    let mut outputs = vec![params.embeddings.clone()];
    let mut caches = Vec::with_capacity(cfg.layers);
    for l in 1..=cfg.layers {
        let adj = layer_adjacency(graphs, l);
        let x = &outputs[l - 1];
        let w = &params.layers[l - 1];
        if w.w1.nrows() != x.ncols() || w.w2.nrows() != x.ncols() || w.w1.ncols() != w.w2.ncols() {
            return Err(Error::Shape(format!(
                "layer {l} weight shapes do not match input width {}",
                x.ncols()
            )));
        }
        let agg = adj.matrix.matmul(x.view())?;
        let diag = adj.matrix.diagonal();
        let mut agg_neighbors = agg.clone();
        for (mut row, (&a, xrow)) in agg_neighbors.rows_mut().into_iter().zip(diag.iter().zip(x.rows())) {
            if a != 0.0 {
                row.scaled_add(-a, &xrow);
            }
        }
        let inter = &agg_neighbors * x;
        let pre = agg.dot(&w.w1) + inter.dot(&w.w2);
        let mut out = pre.mapv(|z| leaky_relu(z, cfg.leaky_slope));
        let mask = match dropout_rng.as_deref_mut() {
            Some(rng) if cfg.message_dropout > 0.0 => {
                let p = cfg.message_dropout;
                let keep = 1.0 / (1.0 - p);
                let m = Array2::from_shape_simple_fn(out.raw_dim(), || if rng.gen::<f64>() < p { 0.0 } else { keep });
                out *= &m;
                Some(m)
            }
            _ => None,
        };
        outputs.push(out);
        caches.push(LayerCache {
            agg,
            agg_neighbors,
            pre,
            mask,
        });
    }
    Ok(ForwardTrace { outputs, caches })
}

/// Per-node concatenation of the selected layer outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalEmbeddings {
    pub n_users: usize,
    pub n_items: usize,
    pub data: Array2<f64>,
}

pub fn final_embeddings(trace: &ForwardTrace, cfg: &ModelConfig, n_users: usize) -> FinalEmbeddings {
    let layers: Vec<_> = cfg.concatenated_layers().map(|l| trace.outputs[l].view()).collect();
    let data = ndarray::concatenate(ndarray::Axis(1), &layers).expect("layer outputs share row count");
    FinalEmbeddings {
        n_users,
        n_items: data.nrows() - n_users,
        data,
    }
}

impl FinalEmbeddings {
    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    fn check_user(&self, u: usize) -> Result<()> {
        if u < self.n_users {
            Ok(())
        } else {
            Err(Error::OutOfRange {
                index: u,
                bound: self.n_users,
            })
        }
    }

    /// `e*_u · e*_v` with `v` an item index (not a node index).
    pub fn score(&self, u: usize, v: usize) -> Result<f64> {
        self.check_user(u)?;
        if v >= self.n_items {
            return Err(Error::OutOfRange {
                index: v,
                bound: self.n_items,
            });
        }
        Ok(self.data.row(u).dot(&self.data.row(self.n_users + v)))
    }

    /// Scores of user `u` against every item.
    pub fn score_all_items(&self, u: usize) -> Result<Vec<f64>> {
        self.check_user(u)?;
        let items = self.data.slice(s![self.n_users.., ..]);
        Ok(items.dot(&self.data.row(u)).to_vec())
    }

    /// Scores for a block of users: `|users| × n_items`.
    pub fn score_users(&self, users: &[usize]) -> Result<Array2<f64>> {
        for &u in users {
            self.check_user(u)?;
        }
        let rows = self.data.select(ndarray::Axis(0), users);
        let items = self.data.slice(s![self.n_users.., ..]);
        Ok(rows.dot(&items.t()))
    }
}

/// Forward pass without dropout followed by concatenation.
pub fn embed(
    params: &ModelParams,
    graphs: &PropagationGraphs,
    cfg: &ModelConfig,
    n_users: usize,
) -> Result<FinalEmbeddings> {
    let trace = propagate(params, graphs, cfg, None)?;
    Ok(final_embeddings(&trace, cfg, n_users))
}
