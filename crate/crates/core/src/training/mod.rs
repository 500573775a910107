//! BPR + L2 objective, exact gradients and mini-batch Adam training.

mod adam;
mod backward;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use backward::{backward, Gradients};

use std::fmt::Write as _;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{BprTriple, InteractionDataset, TripleSampler};
use crate::eval::{evaluate, EvalConfig};
use crate::hetgraph::PropagationGraphs;
use crate::model::{embed, final_embeddings, init_params, propagate, ModelConfig, ModelParams};
use crate::{derive_seed, Error, Result};

/// How the per-embedding regularizer measures size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum RegNorm {
    /// `‖e‖²`
    #[default]
    Squared,
    /// `‖e‖`
    Unsquared,
}

/// Trade-off and norm of the regularizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub lambda: f64,
    pub reg: RegNorm,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    /// Summed BPR term.
    pub bpr: f64,
    /// Summed regularizer, before scaling by λ.
    pub reg: f64,
    /// `bpr + λ·reg`
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(bpr: f64, reg: f64, lambda: f64) -> Self {
        Self {
            bpr,
            reg,
            total: bpr + lambda * reg,
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-ln σ(diff)`, evaluated without overflow.
pub(crate) fn bpr_pair_loss(diff: f64) -> Result<f64> {
    if !diff.is_finite() {
        return Err(Error::NonFinite(format!("score difference {diff}")));
    }
    Ok(if diff > 0.0 {
        (-diff).exp().ln_1p()
    } else {
        -diff + diff.exp().ln_1p()
    })
}

/// `Σ -ln σ(pos - neg)` over the batch (summed, not averaged).
pub fn bpr_loss(scores_pos: &[f64], scores_neg: &[f64]) -> Result<f64> {
    if scores_pos.len() != scores_neg.len() {
        return Err(Error::Shape(format!(
            "{} positive scores vs {} negative scores",
            scores_pos.len(),
            scores_neg.len()
        )));
    }
    scores_pos
        .iter()
        .zip(scores_neg)
        .map(|(&p, &n)| {
            if !p.is_finite() || !n.is_finite() {
                return Err(Error::NonFinite(format!("score pair ({p}, {n})")));
            }
            bpr_pair_loss(p - n)
        })
        .sum()
}

/// Sum over triples of the squared norms of the base embeddings of the
/// user, the positive and the negative item. Weight matrices are not
/// regularized.
pub fn l2_reg(params: &ModelParams, batch: &[BprTriple], n_users: usize) -> f64 {
    reg_term(params, batch, n_users, RegNorm::Squared)
}

pub fn reg_term(params: &ModelParams, batch: &[BprTriple], n_users: usize, norm: RegNorm) -> f64 {
    let e = &params.embeddings;
    batch
        .iter()
        .flat_map(|t| [t.user as usize, n_users + t.pos as usize, n_users + t.neg as usize])
        .map(|node| {
            let sq = e.row(node).dot(&e.row(node));
            match norm {
                RegNorm::Squared => sq,
                RegNorm::Unsquared => sq.sqrt(),
            }
        })
        .sum()
}

/// Objective value for `params` on a batch (forward pass without dropout).
pub fn objective_value(
    params: &ModelParams,
    graphs: &PropagationGraphs,
    batch: &[BprTriple],
    cfg: &ModelConfig,
    objective: &Objective,
) -> Result<LossBreakdown> {
    let n_users = graphs.full.n_users;
    let fe = embed(params, graphs, cfg, n_users)?;
    let mut pos = Vec::with_capacity(batch.len());
    let mut neg = Vec::with_capacity(batch.len());
    for t in batch {
        pos.push(fe.score(t.user as usize, t.pos as usize)?);
        neg.push(fe.score(t.user as usize, t.neg as usize)?);
    }
    let bpr = bpr_loss(&pos, &neg)?;
    let reg = reg_term(params, batch, n_users, objective.reg);
    Ok(LossBreakdown::new(bpr, reg, objective.lambda))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub lambda: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Validate every this many epochs (0 disables validation).
    pub eval_every: usize,
    /// Stop after this many validations without improvement (0 disables).
    pub patience: usize,
    pub seed: u64,
    pub reg: RegNorm,
    /// Cut-off of the validation recall used for model selection.
    pub select_k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            lambda: 1e-5,
            batch_size: 1024,
            epochs: 400,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            eval_every: 10,
            patience: 5,
            seed: 42,
            reg: RegNorm::Squared,
            select_k: 20,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if self.select_k == 0 {
            return Err(Error::Config("selection K must be >= 1".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn objective(&self) -> Objective {
        Objective {
            lambda: self.lambda,
            reg: self.reg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub l1: f64,
    pub l2: f64,
    pub val_recall: Option<f64>,
    pub val_ndcg: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_recall: Option<f64>,
}

impl TrainLog {
    /// `epoch,loss,l1,l2,val_recall20,val_ndcg20,seconds`; validation cells
    /// are empty for epochs without validation. `l2` is the unscaled
    /// regularizer, so `loss = l1 + λ·l2`.
    pub fn csv(&self) -> String {
        self.render(true)
    }

    /// Same as [`csv`](Self::csv) with the wall-time column left blank, for
    /// byte-for-byte comparisons between runs.
    pub fn csv_without_timing(&self) -> String {
        self.render(false)
    }

    fn render(&self, timing: bool) -> String {
        let mut s = String::from("epoch,loss,l1,l2,val_recall20,val_ndcg20,seconds\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.epochs {
            let secs = if timing {
                format!("{:.3}", r.seconds)
            } else {
                String::new()
            };
            writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.epoch,
                r.loss,
                r.l1,
                r.l2,
                opt(r.val_recall),
                opt(r.val_ndcg),
                secs
            )
            .unwrap();
        }
        s
    }

    /// True when every field but wall time agrees.
    pub fn same_trajectory(&self, other: &Self) -> bool {
        self.csv_without_timing() == other.csv_without_timing() && self.best_epoch == other.best_epoch
    }
}

/// Trains from a fresh initialization seeded by `train_cfg.seed`.
pub fn train(
    ds: &InteractionDataset,
    graphs: &PropagationGraphs,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<(ModelParams, TrainLog)> {
    let params = init_params(model_cfg, ds.n_nodes(), train_cfg.seed)?;
    train_from(params, ds, graphs, model_cfg, train_cfg)
}

/// Trains starting from `params`. Returns the parameters with the best
/// validation recall (or the last ones when validation never runs).
pub fn train_from(
    mut params: ModelParams,
    ds: &InteractionDataset,
    graphs: &PropagationGraphs,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<(ModelParams, TrainLog)> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    if graphs.n_nodes() != ds.n_nodes() || params.n_nodes() != ds.n_nodes() {
        return Err(Error::Shape(
            "graph, parameters and dataset disagree on node count".into(),
        ));
    }
    let sampler = TripleSampler::new(ds)?;
    let mut sample_rng = ChaCha8Rng::seed_from_u64(derive_seed(train_cfg.seed, "sample"));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(train_cfg.seed, "dropout"));
    let objective = train_cfg.objective();
    let adam = train_cfg.adam();
    let mut state = AdamState::new(&params);
    let n_batches = ds.n_train().div_ceil(train_cfg.batch_size).max(1);
    let validate = train_cfg.eval_every > 0 && ds.n_validation() > 0;
    let val_cfg = EvalConfig::validation(vec![train_cfg.select_k.min(ds.n_items)]);

    let mut log = TrainLog::default();
    let mut best: Option<(f64, ModelParams)> = None;
    let mut stale = 0usize;
    for epoch in 1..=train_cfg.epochs {
        let started = Instant::now();
        let (mut l1, mut l2) = (0.0, 0.0);
        for batch_no in 0..n_batches {
            let batch = sampler.sample(train_cfg.batch_size, &mut sample_rng);
            let trace = propagate(&params, graphs, model_cfg, Some(&mut dropout_rng))?;
            let (loss, grads) = match backward(&params, graphs, &trace, &batch, model_cfg, &objective) {
                Ok(v) => v,
                Err(Error::NonFinite(_)) => {
                    return Err(Error::Diverged {
                        epoch,
                        batch: batch_no,
                        loss: f64::NAN,
                    });
                }
                Err(e) => return Err(e),
            };
            if !loss.total.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_no,
                    loss: loss.total,
                });
            }
            l1 += loss.bpr;
            l2 += loss.reg;
            adam_step(&mut params, &grads, &mut state, &adam)?;
        }
        let mut record = EpochRecord {
            epoch,
            loss: l1 + train_cfg.lambda * l2,
            l1,
            l2,
            val_recall: None,
            val_ndcg: None,
            seconds: 0.0,
        };
        let mut stop = false;
        if validate && epoch % train_cfg.eval_every == 0 {
            let trace = propagate(&params, graphs, model_cfg, None)?;
            let fe = final_embeddings(&trace, model_cfg, ds.n_users);
            let report = evaluate(&fe, ds, &val_cfg)?;
            let (recall, ndcg) = (report.rows[0].recall, report.rows[0].ndcg);
            record.val_recall = Some(recall);
            record.val_ndcg = Some(ndcg);
            log::info!(
                "epoch {epoch}: loss {:.4} val recall {recall:.4} ndcg {ndcg:.4}",
                record.loss
            );
            if best.as_ref().is_none_or(|(r, _)| recall > *r) {
                best = Some((recall, params.clone()));
                log.best_epoch = epoch;
                log.best_val_recall = Some(recall);
                stale = 0;
            } else {
                stale += 1;
                stop = train_cfg.patience > 0 && stale >= train_cfg.patience;
            }
        } else {
            log::debug!("epoch {epoch}: loss {:.4}", record.loss);
        }
        record.seconds = started.elapsed().as_secs_f64();
        log.epochs.push(record);
        if stop {
            break;
        }
    }
    match best {
        Some((_, p)) => Ok((p, log)),
        None => {
            log.best_epoch = log.epochs.len();
            Ok((params, log))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn bpr_examples() {
        let tie = bpr_loss(&[0.3], &[0.3]).unwrap();
        assert!((tie - 2f64.ln()).abs() < 1e-15);
        assert!(bpr_loss(&[1e6], &[-1e6]).unwrap() < 1e-300);
        let v = bpr_loss(&[1.0], &[-1.0]).unwrap();
        // -ln(1 / (1 + e^-2))
        assert!((v - (1.0 + (-2.0f64).exp()).ln()).abs() < 1e-15);
        assert!((v - 0.126928).abs() < 1e-6);
        assert!(bpr_loss(&[f64::NAN], &[0.0]).is_err());
        assert!(bpr_loss(&[1.0], &[]).is_err());
    }

    #[test]
    fn l2_examples() {
        let params = ModelParams {
            embeddings: array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]],
            layers: vec![],
        };
        let t = BprTriple {
            user: 0,
            pos: 0,
            neg: 1,
        };
        assert_eq!(l2_reg(&params, &[t], 1), 4.0);
        assert_eq!(l2_reg(&params, &[t, t], 1), 8.0);
        let zero = params.zeros_like();
        assert_eq!(l2_reg(&zero, &[t], 1), 0.0);
        let unsq = reg_term(&params, &[t], 1, RegNorm::Unsquared);
        assert!((unsq - (2.0 + 2f64.sqrt())).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig {
            lr: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            lambda: -1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            batch_size: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
