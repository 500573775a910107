//! Reverse pass through scoring, concatenation and every propagation layer.
//!
//! For one layer with input `X`, cached `S = ÃX`, `Q = S - diag(Ã)⊙X`,
//! `P = Q⊙X`, pre-activation `Z` and upstream gradient `G_Y`:
//!
//! ```text
//! G_Z  = G_Y ⊙ mask ⊙ LeakyReLU'(Z)
//! dW1  = Sᵀ G_Z          dW2 = Pᵀ G_Z
//! G_S  = G_Z W1ᵀ         G_P = G_Z W2ᵀ
//! G_X  = Ã (G_S + G_P⊙X) - diag(Ã)⊙(G_P⊙X) + G_P⊙Q
//! ```
//!
//! The last line uses the symmetry of every normalized adjacency (`Ãᵀ = Ã`).
//! Adjacency weights are constants; no gradient flows into them.

use ndarray::{s, Array2, Zip};

use super::{bpr_pair_loss, sigmoid, LossBreakdown, Objective, RegNorm};
use crate::dataset::BprTriple;
use crate::hetgraph::PropagationGraphs;
use crate::model::{final_embeddings, layer_adjacency, ForwardTrace, LayerWeights, ModelConfig, ModelParams};
use crate::{Error, Result};

/// Gradient of the objective with respect to every parameter, shaped like
/// [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub embeddings: Array2<f64>,
    pub layers: Vec<LayerWeights>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        let z = params.zeros_like();
        Self {
            embeddings: z.embeddings,
            layers: z.layers,
        }
    }

    /// Arrays in [`ModelParams::arrays`] order.
    pub fn arrays(&self) -> Vec<&Array2<f64>> {
        let mut out = vec![&self.embeddings];
        for l in &self.layers {
            out.push(&l.w1);
            out.push(&l.w2);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.arrays().iter().all(|a| a.iter().all(|v| v.is_finite()))
    }
}

fn check_batch(batch: &[BprTriple], n_users: usize, n_items: usize) -> Result<()> {
    for t in batch {
        if t.user as usize >= n_users {
            return Err(Error::OutOfRange {
                index: t.user as usize,
                bound: n_users,
            });
        }
        for i in [t.pos, t.neg] {
            if i as usize >= n_items {
                return Err(Error::OutOfRange {
                    index: i as usize,
                    bound: n_items,
                });
            }
        }
    }
    Ok(())
}

/// Loss and exact gradient for one batch, given a forward trace of `params`.
pub fn backward(
    params: &ModelParams,
    graphs: &PropagationGraphs,
    trace: &ForwardTrace,
    batch: &[BprTriple],
    cfg: &ModelConfig,
    objective: &Objective,
) -> Result<(LossBreakdown, Gradients)> {
    let n_users = graphs.full.n_users;
    let n_items = graphs.full.n_items;
    if trace.outputs.len() != cfg.layers + 1 || trace.outputs[0].dim() != params.embeddings.dim() {
        return Err(Error::Shape("trace does not match parameters".into()));
    }
    check_batch(batch, n_users, n_items)?;

    let fe = final_embeddings(trace, cfg, n_users);
    let f = &fe.data;
    let mut gf = Array2::<f64>::zeros(f.raw_dim());
    let mut l1 = 0.0;
    for t in batch {
        let (u, v, n) = (t.user as usize, n_users + t.pos as usize, n_users + t.neg as usize);
        let fu = f.row(u);
        let (fv, fn_) = (f.row(v), f.row(n));
        let diff = fu.dot(&fv) - fu.dot(&fn_);
        l1 += bpr_pair_loss(diff)?;
        // d/dx [-ln σ(x)] = σ(x) - 1
        let g = sigmoid(diff) - 1.0;
        let delta = &fv - &fn_;
        gf.row_mut(u).scaled_add(g, &delta);
        let fu = fu.to_owned();
        gf.row_mut(v).scaled_add(g, &fu);
        gf.row_mut(n).scaled_add(-g, &fu);
    }

    let d = params.dim();
    let mut grads_per_layer: Vec<Array2<f64>> = (0..=cfg.layers)
        .map(|_| Array2::zeros(params.embeddings.raw_dim()))
        .collect();
    for (slot, l) in cfg.concatenated_layers().enumerate() {
        grads_per_layer[l].assign(&gf.slice(s![.., slot * d..(slot + 1) * d]));
    }

    let mut grads = Gradients::zeros_like(params);
    for l in (1..=cfg.layers).rev() {
        let adj = layer_adjacency(graphs, l);
        let cache = &trace.caches[l - 1];
        let x = &trace.outputs[l - 1];
        let w = &params.layers[l - 1];

        let mut gz = std::mem::take(&mut grads_per_layer[l]);
        let slope = cfg.leaky_slope;
        Zip::from(&mut gz).and(&cache.pre).for_each(|g, &z| {
            if z <= 0.0 {
                *g *= slope;
            }
        });
        if let Some(mask) = &cache.mask {
            gz *= mask;
        }

        let p = &cache.agg_neighbors * x;
        grads.layers[l - 1].w1 = cache.agg.t().dot(&gz);
        grads.layers[l - 1].w2 = p.t().dot(&gz);

        let gs = gz.dot(&w.w1.t());
        let gp = gz.dot(&w.w2.t());
        let gq = &gp * x;
        let mut gx = adj.matrix.matmul((&gs + &gq).view())?;
        let diag = adj.matrix.diagonal();
        for (mut row, (&a, gq_row)) in gx.rows_mut().into_iter().zip(diag.iter().zip(gq.rows())) {
            if a != 0.0 {
                row.scaled_add(-a, &gq_row);
            }
        }
        gx += &(&gp * &cache.agg_neighbors);
        grads_per_layer[l - 1] += &gx;
    }
    grads.embeddings = std::mem::take(&mut grads_per_layer[0]);

    let mut l2 = 0.0;
    let e = &params.embeddings;
    for t in batch {
        for node in [t.user as usize, n_users + t.pos as usize, n_users + t.neg as usize] {
            let row = e.row(node);
            let sq = row.dot(&row);
            match objective.reg {
                RegNorm::Squared => {
                    l2 += sq;
                    grads.embeddings.row_mut(node).scaled_add(2.0 * objective.lambda, &row);
                }
                RegNorm::Unsquared => {
                    let norm = sq.sqrt();
                    l2 += norm;
                    if norm > 0.0 {
                        grads.embeddings.row_mut(node).scaled_add(objective.lambda / norm, &row);
                    }
                }
            }
        }
    }

    let breakdown = LossBreakdown::new(l1, l2, objective.lambda);
    if !breakdown.total.is_finite() || !grads.is_finite() {
        return Err(Error::NonFinite("loss or gradient".into()));
    }
    Ok((breakdown, grads))
}
