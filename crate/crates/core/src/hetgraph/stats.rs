use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{EdgeKind, SparseAdjacency};
use crate::derive_seed;

#[derive(Debug, Clone, Copy)]
pub struct StatsConfig {
    /// Users used as BFS sources; all users when the graph has fewer.
    pub max_sources: usize,
    pub seed: u64,
}

impl Default for StatsConfig {
    fn default() -> Self {
        Self {
            max_sources: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphStats {
    pub n_users: usize,
    pub n_items: usize,
    /// Undirected edge counts (each symmetric pair once, self-loops once).
    pub ui_edges: usize,
    pub uu_edges: usize,
    pub ii_edges: usize,
    pub self_loops: usize,
    /// Off-diagonal undirected edges over `n(n-1)/2`.
    pub density: f64,
    pub degree_min: usize,
    pub degree_max: usize,
    pub degree_mean: f64,
    pub degree_median: f64,
    /// `(neighbour count, number of nodes)` excluding self-loops, ascending.
    pub degree_histogram: Vec<(usize, usize)>,
    /// Hop distance → number of sampled user–item pairs at that distance.
    pub hop_histogram: BTreeMap<usize, usize>,
    pub unreachable_pairs: usize,
    pub bfs_sources: usize,
}

/// Unweighted hop distance between two nodes, ignoring self-loops.
pub fn hop_distance(adj: &SparseAdjacency, src: usize, dst: usize) -> Option<usize> {
    bfs(adj, src)[dst]
}

fn bfs(adj: &SparseAdjacency, src: usize) -> Vec<Option<usize>> {
    let n = adj.n_nodes();
    let mut dist = vec![None; n];
    dist[src] = Some(0);
    let mut queue = VecDeque::from([src]);
    while let Some(i) = queue.pop_front() {
        let d = dist[i].unwrap();
        for &j in adj.matrix.row(i).0 {
            if dist[j].is_none() {
                dist[j] = Some(d + 1);
                queue.push_back(j);
            }
        }
    }
    dist
}

pub fn graph_stats(adj: &SparseAdjacency, cfg: StatsConfig) -> GraphStats {
    let n = adj.n_nodes();
    let (mut ui, mut uu, mut ii, mut sl) = (0, 0, 0, 0);
    for (i, j, _, kind) in adj.entries() {
        match kind {
            EdgeKind::SelfLoop => sl += 1,
            _ if i > j => {}
            EdgeKind::UserItem => ui += 1,
            EdgeKind::UserUser => uu += 1,
            EdgeKind::ItemItem => ii += 1,
        }
    }
    let mut degrees: Vec<usize> = (0..n)
        .map(|i| adj.matrix.row(i).0.iter().filter(|&&j| j != i).count())
        .collect();
    let mut histogram: BTreeMap<usize, usize> = BTreeMap::new();
    for &d in &degrees {
        *histogram.entry(d).or_default() += 1;
    }
    degrees.sort_unstable();
    let median = match n {
        0 => 0.0,
        _ if n % 2 == 1 => degrees[n / 2] as f64,
        _ => (degrees[n / 2 - 1] + degrees[n / 2]) as f64 / 2.0,
    };
    let pairs = n as f64 * (n as f64 - 1.0) / 2.0;

    let mut sources: Vec<usize> = (0..adj.n_users).collect();
    if sources.len() > cfg.max_sources {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "graph-stats"));
        sources.shuffle(&mut rng);
        sources.truncate(cfg.max_sources);
        sources.sort_unstable();
    }
    let mut hops: BTreeMap<usize, usize> = BTreeMap::new();
    let mut unreachable = 0;
    for &s in &sources {
        let dist = bfs(adj, s);
        for d in &dist[adj.n_users..] {
            match d {
                Some(d) => *hops.entry(*d).or_default() += 1,
                None => unreachable += 1,
            }
        }
    }

    GraphStats {
        n_users: adj.n_users,
        n_items: adj.n_items,
        ui_edges: ui,
        uu_edges: uu,
        ii_edges: ii,
        self_loops: sl,
        density: if pairs > 0.0 {
            (ui + uu + ii) as f64 / pairs
        } else {
            0.0
        },
        degree_min: degrees.first().copied().unwrap_or(0),
        degree_max: degrees.last().copied().unwrap_or(0),
        degree_mean: if n > 0 {
            degrees.iter().sum::<usize>() as f64 / n as f64
        } else {
            0.0
        },
        degree_median: median,
        degree_histogram: histogram.into_iter().collect(),
        hop_histogram: hops,
        unreachable_pairs: unreachable,
        bfs_sources: sources.len(),
    }
}

impl GraphStats {
    pub fn report(&self) -> String {
        let mut s = String::new();
        writeln!(
            s,
            "nodes        {} ({} users, {} items)",
            self.n_users + self.n_items,
            self.n_users,
            self.n_items
        )
        .unwrap();
        writeln!(s, "edges ui     {}", self.ui_edges).unwrap();
        writeln!(s, "edges uu     {}", self.uu_edges).unwrap();
        writeln!(s, "edges ii     {}", self.ii_edges).unwrap();
        writeln!(s, "self-loops   {}", self.self_loops).unwrap();
        writeln!(s, "density      {:.6e}", self.density).unwrap();
        writeln!(
            s,
            "degree       min {} / median {} / mean {:.3} / max {}",
            self.degree_min, self.degree_median, self.degree_mean, self.degree_max
        )
        .unwrap();
        writeln!(s, "user->item hop distances over {} source users:", self.bfs_sources).unwrap();
        for (d, c) in &self.hop_histogram {
            writeln!(s, "  {d:>3} hops  {c}").unwrap();
        }
        writeln!(s, "  unreachable {}", self.unreachable_pairs).unwrap();
        s
    }

    pub fn degree_csv(&self) -> String {
        let mut s = String::from("degree,count\n");
        for (d, c) in &self.degree_histogram {
            writeln!(s, "{d},{c}").unwrap();
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hetgraph::tests::toy;
    use crate::hetgraph::{build_adjacency, EdgeSet, GraphConfig};

    #[test]
    fn toy_hop_distances() {
        let ds = toy();
        let v5 = ds.n_users + 4;
        let bip = build_adjacency(&ds, &GraphConfig::default().with_edges(EdgeSet::UI)).unwrap();
        assert_eq!(hop_distance(&bip, 0, v5), Some(5));
        let het = build_adjacency(&ds, &GraphConfig::default().with_threshold(-0.5)).unwrap();
        assert_eq!(hop_distance(&het, 0, v5), Some(3));
    }

    #[test]
    fn disconnected_pairs_are_unreachable() {
        let ds = crate::dataset::InteractionDataset::from_partitions(
            2,
            vec![vec![0], vec![1]],
            vec![vec![]; 2],
            vec![vec![]; 2],
        )
        .unwrap();
        let a = build_adjacency(&ds, &GraphConfig::default()).unwrap();
        assert_eq!(hop_distance(&a, 0, 3), None);
        let st = graph_stats(&a, StatsConfig::default());
        assert_eq!(st.unreachable_pairs, 2);
        assert_eq!(st.hop_histogram.get(&1), Some(&2));
        assert_eq!(st.ui_edges, 2);
        assert_eq!(st.self_loops, 4);
        assert_eq!(st.degree_csv(), "degree,count\n1,4\n");
    }
}
