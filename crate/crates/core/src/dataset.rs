//! Interaction ingestion, min-degree filtering, per-user splitting and BPR
//! triple sampling.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{derive_seed, Error, Result};

/// Layout of an interaction file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InputFormat {
    /// `user_id item_id item_id ...`, one line per user.
    UserList,
    /// `user_id<TAB>item_id[<TAB>value]`, one interaction per line.
    Triples,
}

impl std::str::FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "user-list" | "userlist" => Ok(Self::UserList),
            "triple-per-line" | "triples" | "tsv" => Ok(Self::Triples),
            other => Err(Error::Config(format!("unknown input format '{other}'"))),
        }
    }
}

/// Interactions keyed by external ids, in input order, duplicates collapsed.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RawInteractions {
    pub records: Vec<(String, Vec<String>)>,
}

impl RawInteractions {
    pub fn n_interactions(&self) -> usize {
        self.records.iter().map(|(_, items)| items.len()).sum()
    }

    pub fn n_items(&self) -> usize {
        let mut seen = std::collections::HashSet::new();
        for (_, items) in &self.records {
            seen.extend(items.iter().map(String::as_str));
        }
        seen.len()
    }
}

pub fn parse_interactions(path: &Path, format: InputFormat) -> Result<RawInteractions> {
    let text = fs::read_to_string(path)?;
    parse_str(&text, format)
}

/// Parses interaction text. Users may be spread over several lines; their
/// items are merged in order of first appearance.
pub fn parse_str(text: &str, format: InputFormat) -> Result<RawInteractions> {
    let mut user_pos: HashMap<String, usize> = HashMap::new();
    let mut records: Vec<(String, Vec<String>)> = Vec::new();
    let mut seen: Vec<std::collections::HashSet<String>> = Vec::new();

    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if let Some(bad) = fields.iter().find(|f| f.chars().any(char::is_control)) {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("control character in id {bad:?}"),
            });
        }
        let (user, items): (&str, &[&str]) = match format {
            InputFormat::UserList => (fields[0], &fields[1..]),
            InputFormat::Triples => {
                if !(2..=3).contains(&fields.len()) {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: format!("expected 'user item [value]', found {} fields", fields.len()),
                    });
                }
                (fields[0], &fields[1..2])
            }
        };
        if items.is_empty() {
            continue;
        }
        let idx = *user_pos.entry(user.to_string()).or_insert_with(|| {
            records.push((user.to_string(), Vec::new()));
            seen.push(Default::default());
            records.len() - 1
        });
        for &item in items {
            if seen[idx].insert(item.to_string()) {
                records[idx].1.push(item.to_string());
            }
        }
    }
    if records.is_empty() {
        return Err(Error::Empty("no interactions found".into()));
    }
    Ok(RawInteractions { records })
}

/// Drops users and items with `k` or fewer interactions, repeating until no
/// further removal happens (dropping an item can push a user under the bar).
pub fn filter_min_interactions(raw: &RawInteractions, k: usize) -> Result<RawInteractions> {
    let mut item_index: HashMap<&str, usize> = HashMap::new();
    let mut lists: Vec<Vec<usize>> = raw
        .records
        .iter()
        .map(|(_, items)| {
            items
                .iter()
                .map(|it| {
                    let next = item_index.len();
                    *item_index.entry(it.as_str()).or_insert(next)
                })
                .collect()
        })
        .collect();
    let n_items = item_index.len();
    let mut user_alive = vec![true; lists.len()];
    let mut item_alive = vec![true; n_items];

    loop {
        let mut changed = false;
        let mut item_deg = vec![0usize; n_items];
        for (u, list) in lists.iter_mut().enumerate() {
            if !user_alive[u] {
                continue;
            }
            list.retain(|&i| item_alive[i]);
            if list.len() <= k {
                user_alive[u] = false;
                changed = true;
                continue;
            }
            for &i in list.iter() {
                item_deg[i] += 1;
            }
        }
        for (i, alive) in item_alive.iter_mut().enumerate() {
            if *alive && item_deg[i] <= k {
                *alive = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let records: Vec<_> = raw
        .records
        .iter()
        .zip(&lists)
        .zip(&user_alive)
        .filter(|(_, &alive)| alive)
        .map(|(((user, items), list), _)| {
            let kept: Vec<String> = items
                .iter()
                .filter(|it| item_alive[item_index[it.as_str()]])
                .cloned()
                .collect();
            debug_assert_eq!(kept.len(), list.len());
            (user.clone(), kept)
        })
        .collect();
    if records.is_empty() {
        return Err(Error::FilteredOut(k));
    }
    Ok(RawInteractions { records })
}

/// Split fractions and seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train_frac: f64,
    pub val_frac_of_train: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_frac: 0.8,
            val_frac_of_train: 0.1,
            seed: 42,
        }
    }
}

/// Provenance carried with a dataset bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub split: SplitConfig,
    pub min_interactions: Option<usize>,
}

/// Dense-indexed dataset with per-user train / validation / test lists.
///
/// Validation items are held out from the graph and from training
/// positives in the same way test items are.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionDataset {
    pub n_users: usize,
    pub n_items: usize,
    pub train: Vec<Vec<u32>>,
    pub validation: Vec<Vec<u32>>,
    pub test: Vec<Vec<u32>>,
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
    pub meta: DatasetMeta,
}

fn check_fraction(name: &str, f: f64) -> Result<()> {
    if f > 0.0 && f < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must lie in (0, 1), got {f}")))
    }
}

/// Per-user random split. Each user keeps `max(1, round(train_frac·deg))`
/// items in the training portion, a `val_frac_of_train` share of which is
/// moved to validation (never the last remaining training item).
pub fn split(raw: &RawInteractions, cfg: SplitConfig) -> Result<InteractionDataset> {
    check_fraction("train_frac", cfg.train_frac)?;
    check_fraction("val_frac_of_train", cfg.val_frac_of_train)?;
    if raw.records.is_empty() {
        return Err(Error::Empty("no users to split".into()));
    }
    let mut item_index: HashMap<&str, u32> = HashMap::new();
    let mut item_ids = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "split"));
    let n_users = raw.records.len();
    let (mut train, mut validation, mut test) = (
        Vec::with_capacity(n_users),
        Vec::with_capacity(n_users),
        Vec::with_capacity(n_users),
    );
    let mut user_ids = Vec::with_capacity(n_users);

    for (user, items) in &raw.records {
        if items.is_empty() {
            return Err(Error::Empty(format!("user {user} has no interactions")));
        }
        user_ids.push(user.clone());
        let mut idx: Vec<u32> = items
            .iter()
            .map(|it| {
                *item_index.entry(it.as_str()).or_insert_with(|| {
                    item_ids.push(it.clone());
                    (item_ids.len() - 1) as u32
                })
            })
            .collect();
        idx.shuffle(&mut rng);
        let deg = idx.len();
        let n_train_part = ((cfg.train_frac * deg as f64).round() as usize).clamp(1, deg);
        let n_val = ((cfg.val_frac_of_train * n_train_part as f64).round() as usize).min(n_train_part - 1);
        let mut val: Vec<u32> = idx[..n_val].to_vec();
        let mut tr: Vec<u32> = idx[n_val..n_train_part].to_vec();
        let mut te: Vec<u32> = idx[n_train_part..].to_vec();
        tr.sort_unstable();
        val.sort_unstable();
        te.sort_unstable();
        train.push(tr);
        validation.push(val);
        test.push(te);
    }

    Ok(InteractionDataset {
        n_users,
        n_items: item_ids.len(),
        train,
        validation,
        test,
        user_ids,
        item_ids,
        meta: DatasetMeta {
            split: cfg,
            min_interactions: None,
        },
    })
}

impl InteractionDataset {
    /// Builds a dataset directly from dense per-user lists. External ids are
    /// the decimal indices.
    pub fn from_partitions(
        n_items: usize,
        train: Vec<Vec<u32>>,
        validation: Vec<Vec<u32>>,
        test: Vec<Vec<u32>>,
    ) -> Result<Self> {
        let n_users = train.len();
        if validation.len() != n_users || test.len() != n_users {
            return Err(Error::Shape("partition lists must have one entry per user".into()));
        }
        let mut ds = Self {
            n_users,
            n_items,
            train,
            validation,
            test,
            user_ids: (0..n_users).map(|u| u.to_string()).collect(),
            item_ids: (0..n_items).map(|i| i.to_string()).collect(),
            meta: DatasetMeta {
                split: SplitConfig::default(),
                min_interactions: None,
            },
        };
        for list in ds
            .train
            .iter_mut()
            .chain(ds.validation.iter_mut())
            .chain(ds.test.iter_mut())
        {
            list.sort_unstable();
            list.dedup();
            if let Some(&bad) = list.iter().find(|&&i| i as usize >= n_items) {
                return Err(Error::OutOfRange {
                    index: bad as usize,
                    bound: n_items,
                });
            }
        }
        Ok(ds)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_users + self.n_items
    }

    pub fn n_train(&self) -> usize {
        self.train.iter().map(Vec::len).sum()
    }

    pub fn n_validation(&self) -> usize {
        self.validation.iter().map(Vec::len).sum()
    }

    pub fn n_test(&self) -> usize {
        self.test.iter().map(Vec::len).sum()
    }

    pub fn n_interactions(&self) -> usize {
        self.n_train() + self.n_validation() + self.n_test()
    }

    pub fn in_train(&self, user: usize, item: u32) -> bool {
        self.train[user].binary_search(&item).is_ok()
    }

    /// Users per item over the training partition, each list ascending.
    pub fn item_users(&self) -> Vec<Vec<u32>> {
        let mut out = vec![Vec::new(); self.n_items];
        for (u, items) in self.train.iter().enumerate() {
            for &i in items {
                out[i as usize].push(u as u32);
            }
        }
        out
    }

    /// One-line summary in the usual `users / items / interactions` form.
    pub fn stats_line(&self) -> String {
        format!(
            "users={} items={} interactions={} train={} valid={} test={}",
            self.n_users,
            self.n_items,
            self.n_interactions(),
            self.n_train(),
            self.n_validation(),
            self.n_test()
        )
    }

    /// Writes the bundle directory: `meta`, `train.txt`, `valid.txt`,
    /// `test.txt`, `user_map.tsv`, `item_map.tsv`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("meta"), self.meta_text())?;
        fs::write(dir.join("train.txt"), lists_text(&self.train))?;
        fs::write(dir.join("valid.txt"), lists_text(&self.validation))?;
        fs::write(dir.join("test.txt"), lists_text(&self.test))?;
        fs::write(dir.join("user_map.tsv"), map_text(&self.user_ids))?;
        fs::write(dir.join("item_map.tsv"), map_text(&self.item_ids))?;
        Ok(())
    }

    fn meta_text(&self) -> String {
        let mut s = String::new();
        let m = &self.meta;
        writeln!(s, "format=hgcf-dataset-v1").unwrap();
        writeln!(s, "n_users={}", self.n_users).unwrap();
        writeln!(s, "n_items={}", self.n_items).unwrap();
        writeln!(s, "n_train={}", self.n_train()).unwrap();
        writeln!(s, "n_valid={}", self.n_validation()).unwrap();
        writeln!(s, "n_test={}", self.n_test()).unwrap();
        writeln!(s, "seed={}", m.split.seed).unwrap();
        writeln!(s, "train_frac={}", m.split.train_frac).unwrap();
        writeln!(s, "val_frac_of_train={}", m.split.val_frac_of_train).unwrap();
        match m.min_interactions {
            Some(k) => writeln!(s, "min_interactions={k}").unwrap(),
            None => writeln!(s, "min_interactions=none").unwrap(),
        }
        s
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("meta");
        let meta = read_kv(&meta_path)?;
        let get = |k: &str| -> Result<&str> {
            meta.get(k).map(String::as_str).ok_or_else(|| Error::Format {
                path: meta_path.display().to_string(),
                msg: format!("missing key '{k}'"),
            })
        };
        let num = |k: &str| -> Result<u64> {
            get(k)?.parse().map_err(|_| Error::Format {
                path: meta_path.display().to_string(),
                msg: format!("bad value for '{k}'"),
            })
        };
        let real = |k: &str| -> Result<f64> {
            get(k)?.parse().map_err(|_| Error::Format {
                path: meta_path.display().to_string(),
                msg: format!("bad value for '{k}'"),
            })
        };
        let n_users = num("n_users")? as usize;
        let n_items = num("n_items")? as usize;
        let split = SplitConfig {
            train_frac: real("train_frac")?,
            val_frac_of_train: real("val_frac_of_train")?,
            seed: num("seed")?,
        };
        let min_interactions = match get("min_interactions")? {
            "none" => None,
            v => Some(v.parse().map_err(|_| Error::Format {
                path: meta_path.display().to_string(),
                msg: "bad min_interactions".into(),
            })?),
        };
        let train = read_lists(&dir.join("train.txt"), n_users, n_items)?;
        let validation = read_lists(&dir.join("valid.txt"), n_users, n_items)?;
        let test = read_lists(&dir.join("test.txt"), n_users, n_items)?;
        let user_ids = read_map(&dir.join("user_map.tsv"), n_users)?;
        let item_ids = read_map(&dir.join("item_map.tsv"), n_items)?;
        Ok(Self {
            n_users,
            n_items,
            train,
            validation,
            test,
            user_ids,
            item_ids,
            meta: DatasetMeta {
                split,
                min_interactions,
            },
        })
    }
}

fn lists_text(lists: &[Vec<u32>]) -> String {
    let mut s = String::new();
    for (u, items) in lists.iter().enumerate() {
        write!(s, "{u}").unwrap();
        for i in items {
            write!(s, " {i}").unwrap();
        }
        s.push('\n');
    }
    s
}

fn map_text(ids: &[String]) -> String {
    let mut s = String::new();
    for (i, id) in ids.iter().enumerate() {
        writeln!(s, "{i}\t{id}").unwrap();
    }
    s
}

pub(crate) fn read_kv(path: &Path) -> Result<HashMap<String, String>> {
    let text = fs::read_to_string(path)?;
    Ok(text
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect())
}

fn read_lists(path: &Path, n_users: usize, n_items: usize) -> Result<Vec<Vec<u32>>> {
    let text = fs::read_to_string(path)?;
    let bad = |line: usize, msg: &str| Error::Format {
        path: path.display().to_string(),
        msg: format!("line {line}: {msg}"),
    };
    let mut out = vec![Vec::new(); n_users];
    for (n, line) in text.lines().enumerate() {
        let mut fields = line.split_whitespace();
        let Some(u) = fields.next() else { continue };
        let u: usize = u.parse().map_err(|_| bad(n + 1, "bad user index"))?;
        if u >= n_users {
            return Err(bad(n + 1, "user index out of range"));
        }
        for f in fields {
            let i: u32 = f.parse().map_err(|_| bad(n + 1, "bad item index"))?;
            if i as usize >= n_items {
                return Err(bad(n + 1, "item index out of range"));
            }
            out[u].push(i);
        }
        out[u].sort_unstable();
    }
    Ok(out)
}

fn read_map(path: &Path, n: usize) -> Result<Vec<String>> {
    let text = fs::read_to_string(path)?;
    let ids: Vec<String> = text
        .lines()
        .filter_map(|l| l.split_once('\t').map(|(_, id)| id.to_string()))
        .collect();
    if ids.len() != n {
        return Err(Error::Format {
            path: path.display().to_string(),
            msg: format!("expected {n} entries, found {}", ids.len()),
        });
    }
    Ok(ids)
}

/// One BPR training example: a user, an observed item and an unobserved one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BprTriple {
    pub user: u32,
    pub pos: u32,
    pub neg: u32,
}

/// Uniform BPR sampler over users that have at least one training item and
/// at least one item they have not interacted with.
#[derive(Debug, Clone)]
pub struct TripleSampler<'a> {
    ds: &'a InteractionDataset,
    users: Vec<u32>,
}

impl<'a> TripleSampler<'a> {
    pub fn new(ds: &'a InteractionDataset) -> Result<Self> {
        let mut saturated = 0usize;
        let users: Vec<u32> = (0..ds.n_users)
            .filter(|&u| {
                let n = ds.train[u].len();
                if n >= ds.n_items && n > 0 {
                    saturated += 1;
                }
                n > 0 && n < ds.n_items
            })
            .map(|u| u as u32)
            .collect();
        if saturated > 0 {
            log::warn!("{saturated} user(s) interacted with every item; skipped for negative sampling");
        }
        if users.is_empty() {
            return Err(Error::Empty("no user admits a negative sample".into()));
        }
        Ok(Self { ds, users })
    }

    pub fn eligible_users(&self) -> &[u32] {
        &self.users
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Vec<BprTriple> {
        (0..batch_size)
            .map(|_| {
                let user = self.users[rng.gen_range(0..self.users.len())];
                let items = &self.ds.train[user as usize];
                let pos = items[rng.gen_range(0..items.len())];
                let neg = loop {
                    let cand = rng.gen_range(0..self.ds.n_items) as u32;
                    if items.binary_search(&cand).is_err() {
                        break cand;
                    }
                };
                BprTriple { user, pos, neg }
            })
            .collect()
    }
}

/// Draws `batch_size` triples; see [`TripleSampler`].
pub fn sample_triples<R: Rng + ?Sized>(
    ds: &InteractionDataset,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<BprTriple>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    Ok(TripleSampler::new(ds)?.sample(batch_size, rng))
}
