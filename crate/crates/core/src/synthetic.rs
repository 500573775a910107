//! Synthetic implicit-feedback generators with known structure.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::RawInteractions;
use crate::{derive_seed, Error, Result};

fn records(lists: Vec<Vec<usize>>) -> RawInteractions {
    RawInteractions {
        records: lists
            .into_iter()
            .enumerate()
            .map(|(u, items)| (u.to_string(), items.into_iter().map(|i| i.to_string()).collect()))
            .collect(),
    }
}

/// Users and items are cut into `n_blocks` contiguous groups; every user
/// interacts with `items_per_user` distinct items drawn from its own group.
pub fn planted_blocks(
    n_users: usize,
    n_items: usize,
    n_blocks: usize,
    items_per_user: usize,
    seed: u64,
) -> Result<RawInteractions> {
    if n_blocks == 0 || n_users < n_blocks || n_items < n_blocks {
        return Err(Error::Config("need at least one user and item per block".into()));
    }
    let block_items = n_items / n_blocks;
    if items_per_user > block_items {
        return Err(Error::Config(format!(
            "{items_per_user} items per user exceeds block size {block_items}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "planted"));
    let lists = (0..n_users)
        .map(|u| {
            let b = u * n_blocks / n_users;
            let base = b * block_items;
            let mut picked = rand::seq::index::sample(&mut rng, block_items, items_per_user).into_vec();
            picked.sort_unstable();
            picked.into_iter().map(|i| base + i).collect()
        })
        .collect();
    Ok(records(lists))
}

/// Community-structured interactions with long-tailed item popularity.
///
/// Each user belongs to a primary and a secondary community. An interaction
/// is drawn from the primary community with probability `affinity·(1-mix)`,
/// from the secondary with `affinity·mix`, and from the whole catalogue
/// otherwise; within the chosen pool items are picked proportionally to a
/// Zipf-like popularity weight. User degrees are `min_degree` plus an
/// exponential tail with the given mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunityConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_communities: usize,
    pub min_degree: usize,
    pub mean_degree: f64,
    pub affinity: f64,
    pub mix: f64,
    pub popularity_exponent: f64,
    pub seed: u64,
}

impl Default for CommunityConfig {
    fn default() -> Self {
        Self {
            n_users: 943,
            n_items: 1682,
            n_communities: 12,
            min_degree: 20,
            mean_degree: 106.0,
            affinity: 0.7,
            mix: 0.3,
            popularity_exponent: 0.8,
            seed: 2020,
        }
    }
}

struct WeightedPool {
    items: Vec<usize>,
    cumulative: Vec<f64>,
}

impl WeightedPool {
    fn new(items: Vec<usize>, weight: &[f64]) -> Self {
        let mut acc = 0.0;
        let cumulative = items
            .iter()
            .map(|&i| {
                acc += weight[i];
                acc
            })
            .collect();
        Self { items, cumulative }
    }

    fn draw(&self, rng: &mut impl Rng) -> usize {
        let total = *self.cumulative.last().expect("non-empty pool");
        let x = rng.gen::<f64>() * total;
        let k = self.cumulative.partition_point(|&c| c <= x).min(self.items.len() - 1);
        self.items[k]
    }
}

pub fn community_interactions(cfg: &CommunityConfig) -> Result<RawInteractions> {
    if cfg.n_communities == 0 || cfg.n_items < cfg.n_communities || cfg.n_users == 0 {
        return Err(Error::Config("need at least one item per community".into()));
    }
    if !(0.0..=1.0).contains(&cfg.affinity) || !(0.0..=1.0).contains(&cfg.mix) {
        return Err(Error::Config("affinity and mix must lie in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "community"));
    let mut rank: Vec<usize> = (0..cfg.n_items).collect();
    rand::seq::SliceRandom::shuffle(rank.as_mut_slice(), &mut rng);
    let weight: Vec<f64> = rank
        .iter()
        .map(|&r| ((r + 1) as f64).powf(-cfg.popularity_exponent))
        .collect();
    let community_of: Vec<usize> = (0..cfg.n_items).map(|_| rng.gen_range(0..cfg.n_communities)).collect();
    let pools: Vec<WeightedPool> = (0..cfg.n_communities)
        .map(|c| {
            let mut members: Vec<usize> = (0..cfg.n_items).filter(|&i| community_of[i] == c).collect();
            if members.is_empty() {
                members.push(c % cfg.n_items);
            }
            WeightedPool::new(members, &weight)
        })
        .collect();
    let global = WeightedPool::new((0..cfg.n_items).collect(), &weight);
    let max_degree = cfg.n_items / 2;
    let tail = (cfg.mean_degree - cfg.min_degree as f64).max(0.0);

    let lists = (0..cfg.n_users)
        .map(|_| {
            let primary = rng.gen_range(0..cfg.n_communities);
            let secondary = rng.gen_range(0..cfg.n_communities);
            let extra = -tail * (1.0 - rng.gen::<f64>()).ln();
            let degree = (cfg.min_degree + extra as usize).min(max_degree).max(1);
            let mut chosen = std::collections::BTreeSet::new();
            let mut attempts = 0;
            while chosen.len() < degree && attempts < 50 * degree {
                attempts += 1;
                let r = rng.gen::<f64>();
                let item = if r < cfg.affinity * (1.0 - cfg.mix) {
                    pools[primary].draw(&mut rng)
                } else if r < cfg.affinity {
                    pools[secondary].draw(&mut rng)
                } else {
                    global.draw(&mut rng)
                };
                chosen.insert(item);
            }
            chosen.into_iter().collect()
        })
        .collect();
    Ok(records(lists))
}
