//! Full-ranking top-K evaluation.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::InteractionDataset;
use crate::model::FinalEmbeddings;
use crate::{Error, Result};

/// Which held-out partition is scored, and which partitions are removed
/// from the candidate pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    Test,
    Validation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    pub target: Target,
    pub exclude_train: bool,
    pub exclude_validation: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            ks: vec![20],
            target: Target::Test,
            exclude_train: true,
            exclude_validation: true,
        }
    }
}

impl EvalConfig {
    /// Validation scoring used for model selection: train items excluded.
    pub fn validation(ks: Vec<usize>) -> Self {
        Self {
            ks,
            target: Target::Validation,
            exclude_train: true,
            exclude_validation: false,
        }
    }
}

/// Orders by score descending, then item index ascending.
fn rank_order(a: &(f64, u32), b: &(f64, u32)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// Top `k` items by score, skipping anything in the (ascending) exclusion
/// lists. Returns the whole pool when fewer than `k` candidates remain.
pub fn top_k(scores: &[f64], excluded: &[&[u32]], k: usize) -> Vec<u32> {
    let mut cand: Vec<(f64, u32)> = Vec::with_capacity(scores.len());
    let mut cursors = vec![0usize; excluded.len()];
    for (i, &s) in scores.iter().enumerate() {
        let i = i as u32;
        let mut skip = false;
        for (list, cur) in excluded.iter().zip(cursors.iter_mut()) {
            while *cur < list.len() && list[*cur] < i {
                *cur += 1;
            }
            if *cur < list.len() && list[*cur] == i {
                skip = true;
            }
        }
        if !skip {
            cand.push((s, i));
        }
    }
    if k < cand.len() {
        cand.select_nth_unstable_by(k, rank_order);
        cand.truncate(k);
    }
    cand.sort_unstable_by(rank_order);
    cand.into_iter().map(|(_, i)| i).collect()
}

/// Ranks all items for user `u`, never returning an excluded item.
pub fn rank_items(fe: &FinalEmbeddings, u: usize, excluded: &[u32], k: usize) -> Result<Vec<u32>> {
    let scores = fe.score_all_items(u)?;
    let mut sorted = excluded.to_vec();
    sorted.sort_unstable();
    let out = top_k(&scores, &[&sorted], k);
    if out.len() < k {
        log::warn!("user {u}: only {} candidates for top-{k}", out.len());
    }
    Ok(out)
}

/// `|topk ∩ test| / |test|` over the first `k` ranked items.
pub fn recall_at_k(topk: &[u32], test: &[u32], k: usize) -> f64 {
    if test.is_empty() {
        return 0.0;
    }
    let hits = topk.iter().take(k).filter(|i| test.contains(i)).count();
    hits as f64 / test.len() as f64
}

/// Binary-relevance NDCG with a `1 / log2(rank + 1)` discount and the
/// ideal DCG truncated at `min(k, |test|)`.
pub fn ndcg_at_k(topk: &[u32], test: &[u32], k: usize) -> f64 {
    if test.is_empty() {
        return 0.0;
    }
    let dcg: f64 = topk
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| test.contains(i))
        .map(|(r, _)| 1.0 / ((r + 2) as f64).log2())
        .sum();
    let idcg: f64 = (0..k.min(test.len())).map(|r| 1.0 / ((r + 2) as f64).log2()).sum();
    dcg / idcg
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub k: usize,
    pub recall: f64,
    pub ndcg: f64,
    pub n_users: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserMetrics {
    pub user: usize,
    /// Aligned with [`EvalReport::rows`].
    pub recall: Vec<f64>,
    pub ndcg: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<MetricRow>,
    pub per_user: Vec<UserMetrics>,
}

impl EvalReport {
    pub fn row(&self, k: usize) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.k == k)
    }

    pub fn recall(&self, k: usize) -> f64 {
        self.row(k).map_or(f64::NAN, |r| r.recall)
    }

    pub fn ndcg(&self, k: usize) -> f64 {
        self.row(k).map_or(f64::NAN, |r| r.ndcg)
    }

    pub fn table(&self) -> String {
        let mut s = format!("{:>5}  {:>8}  {:>8}  {:>7}\n", "K", "recall", "ndcg", "users");
        for r in &self.rows {
            writeln!(s, "{:>5}  {:>8.4}  {:>8.4}  {:>7}", r.k, r.recall, r.ndcg, r.n_users).unwrap();
        }
        s
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("K,recall,ndcg,n_users\n");
        for r in &self.rows {
            writeln!(s, "{},{},{},{}", r.k, r.recall, r.ndcg, r.n_users).unwrap();
        }
        s
    }

    pub fn per_user_csv(&self) -> String {
        let mut s = String::from("user,K,recall,ndcg\n");
        for u in &self.per_user {
            for (j, r) in self.rows.iter().enumerate() {
                writeln!(s, "{},{},{},{}", u.user, r.k, u.recall[j], u.ndcg[j]).unwrap();
            }
        }
        s
    }
}

const USER_BLOCK: usize = 256;

/// Mean per-user AUC of training positives against every item outside the
/// user's training list (ties count one half). Users with no training item
/// or no negative are skipped.
pub fn training_auc(fe: &FinalEmbeddings, ds: &InteractionDataset) -> Result<f64> {
    let mut total = 0.0;
    let mut users = 0usize;
    for u in 0..ds.n_users {
        let train = &ds.train[u];
        if train.is_empty() || train.len() >= ds.n_items {
            continue;
        }
        let scores = fe.score_all_items(u)?;
        let mut neg: Vec<f64> = (0..ds.n_items as u32)
            .filter(|i| train.binary_search(i).is_err())
            .map(|i| scores[i as usize])
            .collect();
        neg.sort_unstable_by(f64::total_cmp);
        let mut wins = 0.0;
        for &p in train {
            let s = scores[p as usize];
            let below = neg.partition_point(|&x| x < s);
            let tied = neg[below..].partition_point(|&x| x <= s);
            wins += below as f64 + 0.5 * tied as f64;
        }
        total += wins / (train.len() * neg.len()) as f64;
        users += 1;
    }
    if users == 0 {
        return Err(Error::Empty("no user with both positives and negatives".into()));
    }
    Ok(total / users as f64)
}

/// Mean recall@K / ndcg@K over users with a non-empty target list, in
/// ascending user order.
pub fn evaluate(fe: &FinalEmbeddings, ds: &InteractionDataset, cfg: &EvalConfig) -> Result<EvalReport> {
    if fe.n_users != ds.n_users || fe.n_items != ds.n_items {
        return Err(Error::Shape(format!(
            "embeddings cover {}+{} nodes, dataset has {}+{}",
            fe.n_users, fe.n_items, ds.n_users, ds.n_items
        )));
    }
    if cfg.ks.is_empty() {
        return Err(Error::Config("no K values requested".into()));
    }
    if let Some(&bad) = cfg.ks.iter().find(|&&k| k == 0 || k > ds.n_items) {
        return Err(Error::Config(format!("K = {bad} outside [1, {}]", ds.n_items)));
    }
    let k_max = *cfg.ks.iter().max().unwrap();
    let targets = match cfg.target {
        Target::Test => &ds.test,
        Target::Validation => &ds.validation,
    };
    let users: Vec<usize> = (0..ds.n_users).filter(|&u| !targets[u].is_empty()).collect();
    let mut per_user = Vec::with_capacity(users.len());
    for block in users.chunks(USER_BLOCK) {
        let scores = fe.score_users(block)?;
        for (row, &u) in scores.rows().into_iter().zip(block) {
            let mut excluded: Vec<&[u32]> = Vec::with_capacity(2);
            if cfg.exclude_train {
                excluded.push(&ds.train[u]);
            }
            if cfg.exclude_validation && cfg.target != Target::Validation {
                excluded.push(&ds.validation[u]);
            }
            let row = row.as_slice().expect("contiguous rows");
            let ranked = top_k(row, &excluded, k_max);
            let target = &targets[u];
            per_user.push(UserMetrics {
                user: u,
                recall: cfg.ks.iter().map(|&k| recall_at_k(&ranked, target, k)).collect(),
                ndcg: cfg.ks.iter().map(|&k| ndcg_at_k(&ranked, target, k)).collect(),
            });
        }
    }
    let n = per_user.len();
    let rows = cfg
        .ks
        .iter()
        .enumerate()
        .map(|(j, &k)| {
            let (r, g) = per_user
                .iter()
                .fold((0.0, 0.0), |(r, g), m| (r + m.recall[j], g + m.ndcg[j]));
            MetricRow {
                k,
                recall: if n > 0 { r / n as f64 } else { 0.0 },
                ndcg: if n > 0 { g / n as f64 } else { 0.0 },
                n_users: n,
            }
        })
        .collect();
    Ok(EvalReport { rows, per_user })
}
