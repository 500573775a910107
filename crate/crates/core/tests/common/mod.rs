//! Independent reference implementations used by the integration tests.
//!
//! Nothing here calls into the library's numerical kernels: the oracles
//! work on dense `Vec<Vec<f64>>` matrices and explicit loops.
#![allow(dead_code)]

use std::collections::BTreeSet;

use hgcf::dataset::{BprTriple, InteractionDataset};
use hgcf::hetgraph::{PropagationGraphs, SparseAdjacency};
use hgcf::model::{propagate, ModelConfig, ModelParams};
use hgcf::training::{backward, objective_value, Objective};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Dense = Vec<Vec<f64>>;

/// u1:{v1,v2}, u2:{v1,v2,v3,v4}, u3:{v4,v5} with 0-based indices.
pub fn toy() -> InteractionDataset {
    InteractionDataset::from_partitions(
        5,
        vec![vec![0, 1], vec![0, 1, 2, 3], vec![3, 4]],
        vec![vec![]; 3],
        vec![vec![]; 3],
    )
    .unwrap()
}

/// Random training lists where every user has between `min_deg` and
/// `max_deg` items (clamped to the catalogue).
pub fn random_train(n_users: usize, n_items: usize, min_deg: usize, max_deg: usize, seed: u64) -> Vec<Vec<u32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_users)
        .map(|_| {
            let deg = rng.gen_range(min_deg..=max_deg).min(n_items);
            let mut s = BTreeSet::new();
            while s.len() < deg {
                s.insert(rng.gen_range(0..n_items) as u32);
            }
            s.into_iter().collect()
        })
        .collect()
}

pub fn train_only(n_items: usize, train: Vec<Vec<u32>>) -> InteractionDataset {
    let n = train.len();
    InteractionDataset::from_partitions(n_items, train, vec![vec![]; n], vec![vec![]; n]).unwrap()
}

/// Brute-force similarity between two explicit sets drawn from a universe
/// of size `n`. `None` when they share nothing.
pub fn brute_similarity(a: &[u32], b: &[u32], n: usize, measure: &str) -> Option<f64> {
    let sa: BTreeSet<_> = a.iter().collect();
    let sb: BTreeSet<_> = b.iter().collect();
    let c = sa.intersection(&sb).count() as f64;
    if c == 0.0 {
        return None;
    }
    let (na, nb, n) = (sa.len() as f64, sb.len() as f64, n as f64);
    Some(match measure {
        "pmi" => (c * n / (na * nb)).ln(),
        "cosine" => c / (na * nb).sqrt(),
        "jaccard" => c / sa.union(&sb).count() as f64,
        other => panic!("unknown measure {other}"),
    })
}

pub fn adjacency_dense(adj: &SparseAdjacency) -> Dense {
    let n = adj.n_nodes();
    let mut d = vec![vec![0.0; n]; n];
    for (i, j, w) in adj.matrix.iter() {
        d[i][j] = w;
    }
    d
}

/// `D^{-1/2} A D^{-1/2}` on a dense matrix with `d_i = Σ_j |A_ij|`.
pub fn dense_normalize(a: &Dense) -> Dense {
    let n = a.len();
    let deg: Vec<f64> = a.iter().map(|r| r.iter().map(|w| w.abs()).sum()).collect();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if a[i][j] != 0.0 {
                out[i][j] = a[i][j] / (deg[i].sqrt() * deg[j].sqrt());
            }
        }
    }
    out
}

/// Drops every user–user entry (off-diagonal, both ends below `n_users`).
pub fn drop_user_user(a: &Dense, n_users: usize) -> Dense {
    let mut out = a.clone();
    for i in 0..n_users {
        for j in 0..n_users {
            if i != j {
                out[i][j] = 0.0;
            }
        }
    }
    out
}

fn to_rows(x: &Array2<f64>) -> Dense {
    x.outer_iter().map(|r| r.to_vec()).collect()
}

/// Row vector times matrix, by hand.
fn vec_mat(v: &[f64], w: &Array2<f64>) -> Vec<f64> {
    let mut out = vec![0.0; w.ncols()];
    for (k, &vk) in v.iter().enumerate() {
        for (c, o) in out.iter_mut().enumerate() {
            *o += vk * w[[k, c]];
        }
    }
    out
}

/// Node-wise propagation: for each node `i`, sums the messages
/// `Ã_ij·W1ᵀ e_j` over every stored neighbour `j` (self-loop included) and
/// the interaction messages `Ã_ij·W2ᵀ (e_j ⊙ e_i)` over neighbours `j ≠ i`,
/// then applies LeakyReLU. Layer 1 reads `layer1`, later layers `full`.
pub fn per_edge_propagate(params: &ModelParams, layer1: &Dense, full: &Dense, layers: usize, slope: f64) -> Vec<Dense> {
    let mut outputs = vec![to_rows(&params.embeddings)];
    for l in 1..=layers {
        let a = if l == 1 { layer1 } else { full };
        let x = &outputs[l - 1];
        let w = &params.layers[l - 1];
        let width = w.w1.ncols();
        let mut next = Vec::with_capacity(x.len());
        for i in 0..x.len() {
            let mut z = vec![0.0; width];
            for j in 0..x.len() {
                let aij = a[i][j];
                if aij == 0.0 {
                    continue;
                }
                let lin = vec_mat(&x[j], &w.w1);
                for (zc, lc) in z.iter_mut().zip(&lin) {
                    *zc += aij * lc;
                }
                if j != i {
                    let had: Vec<f64> = x[j].iter().zip(&x[i]).map(|(p, q)| p * q).collect();
                    let inter = vec_mat(&had, &w.w2);
                    for (zc, ic) in z.iter_mut().zip(&inter) {
                        *zc += aij * ic;
                    }
                }
            }
            next.push(z.into_iter().map(|v| if v > 0.0 { v } else { slope * v }).collect());
        }
        outputs.push(next);
    }
    outputs
}

/// Outcome of a finite-difference comparison.
#[derive(Debug, Default, Clone, Copy)]
pub struct GradCheck {
    pub checked: usize,
    pub skipped_kink: usize,
    pub max_rel_err: f64,
}

/// Relative error with an absolute floor so entries that are zero in both
/// computations do not divide by zero.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn pre_signs(params: &ModelParams, graphs: &PropagationGraphs, cfg: &ModelConfig) -> Vec<bool> {
    let trace = propagate(params, graphs, cfg, None).unwrap();
    trace
        .caches
        .iter()
        .flat_map(|c| c.pre.iter().map(|&z| z > 0.0).collect::<Vec<_>>())
        .collect()
}

fn shifted(params: &ModelParams, array: usize, k: usize, delta: f64) -> ModelParams {
    let mut p = params.clone();
    p.arrays_mut()[array].as_slice_mut().unwrap()[k] += delta;
    p
}

/// Fourth-order central differences on every parameter entry:
/// `g ≈ (f(θ-2h) - 8f(θ-h) + 8f(θ+h) - f(θ+2h)) / 12h`. The higher order
/// allows a larger `h`, which keeps the roundoff of `f` (≈ ε|f|/h) well below
/// the smallest gradients being compared.
///
/// When a stencil point flips the sign of some pre-activation, `h` is cut
/// tenfold and retried down to `kink / 2`; an entry is skipped only when
/// even that stencil crosses a kink, i.e. it lies within `kink` of one.
pub fn finite_difference_check(
    params: &ModelParams,
    graphs: &PropagationGraphs,
    batch: &[BprTriple],
    cfg: &ModelConfig,
    objective: &Objective,
    h: f64,
    kink: f64,
) -> GradCheck {
    let trace = propagate(params, graphs, cfg, None).unwrap();
    let (_, grads) = backward(params, graphs, &trace, batch, cfg, objective).unwrap();
    let analytic: Vec<f64> = grads
        .arrays()
        .iter()
        .flat_map(|a| a.iter().copied().collect::<Vec<_>>())
        .collect();
    let base_signs = pre_signs(params, graphs, cfg);
    let f = |p: &ModelParams| objective_value(p, graphs, batch, cfg, objective).unwrap().total;

    let mut out = GradCheck::default();
    let mut flat = 0usize;
    for a in 0..params.arrays().len() {
        for k in 0..params.arrays()[a].len() {
            let mut step = h;
            let numeric = loop {
                let points: Vec<ModelParams> = [-2.0, -1.0, 1.0, 2.0]
                    .iter()
                    .map(|&s| shifted(params, a, k, s * step))
                    .collect();
                if points.iter().all(|p| pre_signs(p, graphs, cfg) == base_signs) {
                    let v: Vec<f64> = points.iter().map(f).collect();
                    break Some((v[0] - 8.0 * v[1] + 8.0 * v[2] - v[3]) / (12.0 * step));
                }
                if step <= kink / 2.0 {
                    break None;
                }
                step = (step / 10.0).max(kink / 2.0);
            };
            match numeric {
                Some(n) => {
                    out.max_rel_err = out.max_rel_err.max(rel_err(analytic[flat], n));
                    out.checked += 1;
                }
                None => out.skipped_kink += 1,
            }
            flat += 1;
        }
    }
    out
}

pub fn max_abs_diff(a: &Dense, b: &Dense) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(r, s)| r.iter().zip(s).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max)
}
