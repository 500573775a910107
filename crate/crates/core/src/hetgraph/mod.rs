//! Heterogeneous interaction graph construction.
//!
//! Node indices follow the embedding table layout: users occupy
//! `[0, n_users)` and items `[n_users, n_users + n_items)`. User–item
//! edges and self-loops carry weight 1; user–user (and optionally
//! item–item) edges carry a co-occurrence similarity and are kept only when
//! that similarity is strictly above the configured threshold.

mod bundle;
mod stats;

pub use bundle::{load_graph, save_graph, GraphBundle};
pub use stats::{graph_stats, hop_distance, GraphStats, StatsConfig};

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::InteractionDataset;
use crate::sparse::CsrMatrix;
use crate::{derive_seed, Error, Result};

/// Which optional edge families are added on top of the mandatory
/// user–item edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EdgeSet {
    pub user_user: bool,
    pub item_item: bool,
}

impl EdgeSet {
    pub const UI: Self = Self {
        user_user: false,
        item_item: false,
    };
    pub const UI_UU: Self = Self {
        user_user: true,
        item_item: false,
    };
    pub const UI_II: Self = Self {
        user_user: false,
        item_item: true,
    };
    pub const UI_UU_II: Self = Self {
        user_user: true,
        item_item: true,
    };
}

impl FromStr for EdgeSet {
    type Err = Error;

    /// Parses comma- or plus-separated lists such as `ui,uu` or `UI+UU+II`.
    fn from_str(s: &str) -> Result<Self> {
        let mut set = Self::UI;
        let mut has_ui = false;
        for part in s.split([',', '+']).map(str::trim).filter(|p| !p.is_empty()) {
            match part.to_ascii_lowercase().as_str() {
                "ui" => has_ui = true,
                "uu" => set.user_user = true,
                "ii" => set.item_item = true,
                other => return Err(Error::Config(format!("unknown edge type '{other}'"))),
            }
        }
        if !has_ui {
            return Err(Error::Config(format!(
                "edge set '{s}' must include ui (interaction edges are mandatory)"
            )));
        }
        Ok(set)
    }
}

impl fmt::Display for EdgeSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("UI")?;
        if self.user_user {
            f.write_str("+UU")?;
        }
        if self.item_item {
            f.write_str("+II")?;
        }
        Ok(())
    }
}

/// Co-occurrence similarity used for user–user and item–item weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Similarity {
    /// `ln(|A∩B|·|Ω| / (|A|·|B|))`
    Pmi,
    /// `|A∩B| / sqrt(|A|·|B|)`
    Cosine,
    /// `|A∩B| / |A∪B|`
    Jaccard,
}

impl FromStr for Similarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pmi" => Ok(Self::Pmi),
            "cosine" | "cos" => Ok(Self::Cosine),
            "jaccard" => Ok(Self::Jaccard),
            other => Err(Error::Config(format!("unknown similarity '{other}'"))),
        }
    }
}

impl fmt::Display for Similarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Pmi => "pmi",
            Self::Cosine => "cosine",
            Self::Jaccard => "jaccard",
        })
    }
}

/// How the first propagation layer is kept free of user–user messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Layer1Mode {
    /// Drop user–user edges from the raw graph, then normalize with the
    /// degrees of that reduced graph.
    #[default]
    Renormalize,
    /// Zero the user–user entries of the fully normalized matrix.
    Mask,
}

impl FromStr for Layer1Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "renormalize" | "renorm" => Ok(Self::Renormalize),
            "mask" => Ok(Self::Mask),
            other => Err(Error::Config(format!("unknown layer-1 mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    pub edges: EdgeSet,
    pub similarity: Similarity,
    /// Similarity edges are kept iff weight > threshold.
    pub threshold: f64,
    pub self_loops: bool,
    /// Maximum number of co-occurring pairs a similarity block may hold.
    pub pair_budget: Option<usize>,
    /// Per-node limit on `D(D-1)/2` pair updates in the inverted index.
    pub pair_cap_per_node: Option<usize>,
    /// When a node exceeds the cap, count only a random subset of its
    /// neighbours instead of just warning.
    pub subsample_over_cap: bool,
    pub seed: u64,
    pub layer1: Layer1Mode,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            edges: EdgeSet::UI_UU,
            similarity: Similarity::Pmi,
            threshold: 0.0,
            self_loops: true,
            pair_budget: None,
            pair_cap_per_node: None,
            subsample_over_cap: false,
            seed: 0,
            layer1: Layer1Mode::Renormalize,
        }
    }
}

impl GraphConfig {
    pub fn with_edges(mut self, edges: EdgeSet) -> Self {
        self.edges = edges;
        self
    }

    pub fn with_similarity(mut self, similarity: Similarity) -> Self {
        self.similarity = similarity;
        self
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.threshold.is_nan() {
            return Err(Error::Config("threshold must not be NaN".into()));
        }
        Ok(())
    }
}

/// Set sizes and pairwise intersection sizes for a family of sets
/// (items per user, or users per item).
///
/// Only pairs with a non-empty intersection are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct CooccurrenceCounts {
    universe: usize,
    set_sizes: Vec<usize>,
    /// For each `a`, `(b, |S_a ∩ S_b|)` with `b > a`, ascending in `b`.
    upper: Vec<Vec<(u32, u32)>>,
}

/// Options for co-occurrence accumulation.
#[derive(Debug, Clone, Copy, Default)]
pub struct CooccurrenceOptions {
    pub pair_budget: Option<usize>,
    pub pair_cap_per_node: Option<usize>,
    pub subsample_over_cap: bool,
    pub seed: u64,
}

impl CooccurrenceCounts {
    /// Counts intersections through the inverted index: each element of the
    /// universe contributes to the pairs among the sets that contain it.
    ///
    /// `sets[a]` lists the elements of set `a` (indices into `[0, universe)`).
    pub fn from_sets(
        sets: &[Vec<u32>],
        universe: usize,
        kind: &'static str,
        opts: CooccurrenceOptions,
    ) -> Result<Self> {
        let n = sets.len();
        let mut inverted: Vec<Vec<u32>> = vec![Vec::new(); universe];
        for (a, set) in sets.iter().enumerate() {
            for &x in set {
                let x = x as usize;
                if x >= universe {
                    return Err(Error::OutOfRange {
                        index: x,
                        bound: universe,
                    });
                }
                inverted[x].push(a as u32);
            }
        }
        // Elements whose pair load exceeds the cap; when subsampling, only
        // the members listed here (sorted) take part in that element's pairs.
        let mut restricted: Vec<Option<Vec<u32>>> = vec![None; universe];
        if let Some(cap) = opts.pair_cap_per_node {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, kind));
            for (x, members) in inverted.iter().enumerate() {
                let d = members.len();
                if d * d.saturating_sub(1) / 2 <= cap {
                    continue;
                }
                if opts.subsample_over_cap {
                    let mut keep = members.clone();
                    keep.shuffle(&mut rng);
                    let mut r = d;
                    while r > 1 && r * (r - 1) / 2 > cap {
                        r -= 1;
                    }
                    keep.truncate(r);
                    keep.sort_unstable();
                    log::warn!("{kind}: node {x} with degree {d} exceeds pair cap {cap}; sampled {r} members");
                    restricted[x] = Some(keep);
                } else {
                    log::warn!("{kind}: node {x} with degree {d} exceeds pair cap {cap}");
                }
            }
        }

        let mut counts = vec![0u32; n];
        let mut touched: Vec<u32> = Vec::new();
        let mut upper = Vec::with_capacity(n);
        let mut total_pairs = 0usize;
        for (a, set) in sets.iter().enumerate() {
            for &x in set {
                let x = x as usize;
                let members: &[u32] = match &restricted[x] {
                    Some(keep) => {
                        if keep.binary_search(&(a as u32)).is_err() {
                            continue;
                        }
                        keep
                    }
                    None => &inverted[x],
                };
                // Members are ascending, so skip everything up to and including a.
                let start = members.partition_point(|&b| b as usize <= a);
                for &b in &members[start..] {
                    if counts[b as usize] == 0 {
                        touched.push(b);
                    }
                    counts[b as usize] += 1;
                }
            }
            touched.sort_unstable();
            let row: Vec<(u32, u32)> = touched.iter().map(|&b| (b, counts[b as usize])).collect();
            for &b in &touched {
                counts[b as usize] = 0;
            }
            touched.clear();
            total_pairs += row.len();
            if let Some(budget) = opts.pair_budget {
                if total_pairs > budget {
                    return Err(Error::OverBudget {
                        kind,
                        pairs: total_pairs,
                        budget,
                    });
                }
            }
            upper.push(row);
        }
        Ok(Self {
            universe,
            set_sizes: sets.iter().map(Vec::len).collect(),
            upper,
        })
    }

    /// Item sets of every user over the training partition.
    pub fn users(ds: &InteractionDataset) -> Result<Self> {
        Self::from_sets(&ds.train, ds.n_items, "UU", CooccurrenceOptions::default())
    }

    /// User sets of every item over the training partition.
    pub fn items(ds: &InteractionDataset) -> Result<Self> {
        Self::from_sets(&ds.item_users(), ds.n_users, "II", CooccurrenceOptions::default())
    }

    pub fn universe(&self) -> usize {
        self.universe
    }

    pub fn n_sets(&self) -> usize {
        self.set_sizes.len()
    }

    pub fn set_size(&self, a: usize) -> usize {
        self.set_sizes[a]
    }

    /// Number of co-occurring unordered pairs.
    pub fn n_pairs(&self) -> usize {
        self.upper.iter().map(Vec::len).sum()
    }

    /// `|S_a ∩ S_b|` (zero for non-co-occurring pairs and for `a == b`).
    pub fn count(&self, a: usize, b: usize) -> u32 {
        if a == b {
            return 0;
        }
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let row = &self.upper[lo];
        row.binary_search_by_key(&(hi as u32), |&(x, _)| x)
            .map(|k| row[k].1)
            .unwrap_or(0)
    }

    /// Iterates `(a, b, count)` with `a < b`.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize, u32)> + '_ {
        self.upper
            .iter()
            .enumerate()
            .flat_map(|(a, row)| row.iter().map(move |&(b, c)| (a, b as usize, c)))
    }

    /// Similarity of sets `a` and `b`, absent when they share nothing.
    pub fn similarity(&self, a: usize, b: usize, measure: Similarity) -> Option<f64> {
        if a == b {
            return None;
        }
        similarity_from_counts(
            self.count(a, b),
            self.set_sizes[a],
            self.set_sizes[b],
            self.universe,
            measure,
        )
    }
}

/// Similarity from raw counts: intersection size, the two set sizes and
/// the universe size. `None` when the intersection is empty.
pub fn similarity_from_counts(
    shared: u32,
    size_a: usize,
    size_b: usize,
    universe: usize,
    measure: Similarity,
) -> Option<f64> {
    if shared == 0 {
        return None;
    }
    let c = f64::from(shared);
    let (na, nb) = (size_a as f64, size_b as f64);
    Some(match measure {
        // Integer products stay exact, so equal joint and independent
        // frequencies give exactly 0.
        Similarity::Pmi => (c * universe as f64 / (na * nb)).ln(),
        Similarity::Cosine => c / (na * nb).sqrt(),
        Similarity::Jaccard => c / (na + nb - c),
    })
}

/// Similarity weight between users `u` and `v`.
pub fn similarity_weight(counts: &CooccurrenceCounts, u: usize, v: usize, measure: Similarity) -> Option<f64> {
    counts.similarity(u, v, measure)
}

/// Type of a stored adjacency entry, derived from its block position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeKind {
    UserItem,
    UserUser,
    ItemItem,
    SelfLoop,
}

impl EdgeKind {
    pub fn tag(self) -> &'static str {
        match self {
            Self::UserItem => "ui",
            Self::UserUser => "uu",
            Self::ItemItem => "ii",
            Self::SelfLoop => "self",
        }
    }

    pub fn from_tag(s: &str) -> Option<Self> {
        match s {
            "ui" => Some(Self::UserItem),
            "uu" => Some(Self::UserUser),
            "ii" => Some(Self::ItemItem),
            "self" => Some(Self::SelfLoop),
            _ => None,
        }
    }
}

/// Classifies entry `(i, j)` given the number of user nodes.
pub fn edge_kind(n_users: usize, i: usize, j: usize) -> EdgeKind {
    match (i == j, i < n_users, j < n_users) {
        (true, _, _) => EdgeKind::SelfLoop,
        (false, true, true) => EdgeKind::UserUser,
        (false, false, false) => EdgeKind::ItemItem,
        _ => EdgeKind::UserItem,
    }
}

/// Raw weighted symmetric adjacency over users followed by items.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseAdjacency {
    pub n_users: usize,
    pub n_items: usize,
    pub matrix: CsrMatrix,
}

impl SparseAdjacency {
    pub fn n_nodes(&self) -> usize {
        self.n_users + self.n_items
    }

    pub fn kind(&self, i: usize, j: usize) -> EdgeKind {
        edge_kind(self.n_users, i, j)
    }

    /// Stored entries `(i, j, w, kind)` in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64, EdgeKind)> + '_ {
        self.matrix
            .iter()
            .map(|(i, j, w)| (i, j, w, edge_kind(self.n_users, i, j)))
    }

    /// Number of stored entries of the given kind (both directions counted).
    pub fn count_kind(&self, kind: EdgeKind) -> usize {
        self.entries().filter(|e| e.3 == kind).count()
    }

    /// Copy with every entry of `kind` removed.
    pub fn without(&self, kind: EdgeKind) -> Self {
        let n_users = self.n_users;
        Self {
            n_users,
            n_items: self.n_items,
            matrix: self.matrix.filter(|i, j, _| edge_kind(n_users, i, j) != kind),
        }
    }
}

fn similarity_triplets(
    counts: &CooccurrenceCounts,
    measure: Similarity,
    threshold: f64,
    offset: usize,
    out: &mut Vec<(usize, usize, f64)>,
) {
    let universe = counts.universe;
    for (a, b, c) in counts.pairs() {
        let w = similarity_from_counts(c, counts.set_sizes[a], counts.set_sizes[b], universe, measure)
            .expect("stored pairs co-occur");
        if w > threshold && w != 0.0 {
            out.push((offset + a, offset + b, w));
            out.push((offset + b, offset + a, w));
        }
    }
}

/// Builds the raw adjacency for `cfg` from the training partition.
pub fn build_adjacency(ds: &InteractionDataset, cfg: &GraphConfig) -> Result<SparseAdjacency> {
    cfg.validate()?;
    let (n_users, n_items) = (ds.n_users, ds.n_items);
    let n = n_users + n_items;
    let mut triplets = Vec::with_capacity(2 * ds.n_train() + n);
    for (u, items) in ds.train.iter().enumerate() {
        for &v in items {
            let j = n_users + v as usize;
            triplets.push((u, j, 1.0));
            triplets.push((j, u, 1.0));
        }
    }
    let opts = CooccurrenceOptions {
        pair_budget: cfg.pair_budget,
        pair_cap_per_node: cfg.pair_cap_per_node,
        subsample_over_cap: cfg.subsample_over_cap,
        seed: cfg.seed,
    };
    if cfg.edges.user_user {
        let counts = CooccurrenceCounts::from_sets(&ds.train, n_items, "UU", opts)?;
        similarity_triplets(&counts, cfg.similarity, cfg.threshold, 0, &mut triplets);
    }
    if cfg.edges.item_item {
        let counts = CooccurrenceCounts::from_sets(&ds.item_users(), n_users, "II", opts)?;
        similarity_triplets(&counts, cfg.similarity, cfg.threshold, n_users, &mut triplets);
    }
    if cfg.self_loops {
        triplets.extend((0..n).map(|i| (i, i, 1.0)));
    }
    Ok(SparseAdjacency {
        n_users,
        n_items,
        matrix: CsrMatrix::from_triplets(n, n, triplets)?,
    })
}

/// `D^{-1/2} A D^{-1/2}` with `d_i = Σ_j |A_ij|`, plus the degrees used.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    pub n_users: usize,
    pub n_items: usize,
    pub matrix: CsrMatrix,
    pub degrees: Vec<f64>,
}

impl NormalizedAdjacency {
    pub fn n_nodes(&self) -> usize {
        self.n_users + self.n_items
    }

    pub fn kind(&self, i: usize, j: usize) -> EdgeKind {
        edge_kind(self.n_users, i, j)
    }

    /// Copy with every entry of `kind` removed and degrees left untouched.
    pub fn without(&self, kind: EdgeKind) -> Self {
        let n_users = self.n_users;
        Self {
            n_users,
            n_items: self.n_items,
            matrix: self.matrix.filter(|i, j, _| edge_kind(n_users, i, j) != kind),
            degrees: self.degrees.clone(),
        }
    }
}

pub fn normalize(adj: &SparseAdjacency) -> Result<NormalizedAdjacency> {
    let n = adj.n_nodes();
    let mut degrees = vec![0.0; n];
    for (i, d) in degrees.iter_mut().enumerate() {
        *d = adj.matrix.row(i).1.iter().map(|w| w.abs()).sum();
        if *d == 0.0 {
            return Err(Error::ZeroDegree(i));
        }
    }
    let matrix = adj.matrix.map_values(|i, j, w| w / (degrees[i] * degrees[j]).sqrt());
    Ok(NormalizedAdjacency {
        n_users: adj.n_users,
        n_items: adj.n_items,
        matrix,
        degrees,
    })
}

/// Normalized adjacency for the first propagation layer: the configured
/// graph without user–user edges, normalized with its own degrees.
pub fn layer1_adjacency(ds: &InteractionDataset, cfg: &GraphConfig) -> Result<NormalizedAdjacency> {
    let mut reduced = cfg.clone();
    reduced.edges.user_user = false;
    normalize(&build_adjacency(ds, &reduced)?)
}

/// The pair of normalized adjacencies consumed by propagation.
#[derive(Debug, Clone)]
pub struct PropagationGraphs {
    /// Used by the first layer; never contains user–user entries.
    pub layer1: NormalizedAdjacency,
    /// Used by layers two and up.
    pub full: NormalizedAdjacency,
}

impl PropagationGraphs {
    pub fn from_raw(raw: &SparseAdjacency, mode: Layer1Mode) -> Result<Self> {
        let full = normalize(raw)?;
        let layer1 = match mode {
            Layer1Mode::Renormalize => normalize(&raw.without(EdgeKind::UserUser))?,
            Layer1Mode::Mask => full.without(EdgeKind::UserUser),
        };
        Ok(Self { layer1, full })
    }

    /// Same matrix for every layer; for tests and bipartite baselines.
    pub fn uniform(adj: NormalizedAdjacency) -> Self {
        Self {
            layer1: adj.clone(),
            full: adj,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.full.n_nodes()
    }
}

/// Builds the raw graph and both normalized adjacencies.
pub fn build_graphs(ds: &InteractionDataset, cfg: &GraphConfig) -> Result<(SparseAdjacency, PropagationGraphs)> {
    let raw = build_adjacency(ds, cfg)?;
    let graphs = PropagationGraphs::from_raw(&raw, cfg.layer1)?;
    Ok((raw, graphs))
}
