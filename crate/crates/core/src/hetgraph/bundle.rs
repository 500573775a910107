//! On-disk graph bundle: `graph.meta` (config echo, counts, checksum) and
//! `edges.tsv` (`i j w type`, one stored entry per line).
//!
//! Weights are written with the shortest representation that parses back to
//! the same `f64`, so a reload is bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{EdgeKind, GraphConfig, SparseAdjacency};
use crate::dataset::read_kv;
use crate::sparse::CsrMatrix;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GraphBundle {
    pub config: GraphConfig,
    pub adjacency: SparseAdjacency,
}

fn edges_text(adj: &SparseAdjacency) -> String {
    let mut s = String::from("i\tj\tw\ttype\n");
    for (i, j, w, kind) in adj.entries() {
        writeln!(s, "{i}\t{j}\t{w}\t{}", kind.tag()).unwrap();
    }
    s
}

fn checksum(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn save_graph(dir: &Path, cfg: &GraphConfig, adj: &SparseAdjacency) -> Result<()> {
    fs::create_dir_all(dir)?;
    let edges = edges_text(adj);
    let mut meta = String::new();
    writeln!(meta, "format=hgcf-graph-v1").unwrap();
    writeln!(
        meta,
        "config={}",
        serde_json::to_string(cfg).expect("config serializes")
    )
    .unwrap();
    writeln!(meta, "n_users={}", adj.n_users).unwrap();
    writeln!(meta, "n_items={}", adj.n_items).unwrap();
    writeln!(meta, "nnz={}", adj.matrix.nnz()).unwrap();
    for kind in [
        EdgeKind::UserItem,
        EdgeKind::UserUser,
        EdgeKind::ItemItem,
        EdgeKind::SelfLoop,
    ] {
        writeln!(meta, "entries_{}={}", kind.tag(), adj.count_kind(kind)).unwrap();
    }
    writeln!(meta, "sha256={}", checksum(edges.as_bytes())).unwrap();
    fs::write(dir.join("edges.tsv"), edges)?;
    fs::write(dir.join("graph.meta"), meta)?;
    Ok(())
}

pub fn load_graph(dir: &Path) -> Result<GraphBundle> {
    let meta_path = dir.join("graph.meta");
    let edges_path = dir.join("edges.tsv");
    let bad = |path: &Path, msg: String| Error::Format {
        path: path.display().to_string(),
        msg,
    };
    let meta = read_kv(&meta_path)?;
    let field = |k: &str| meta.get(k).ok_or_else(|| bad(&meta_path, format!("missing key '{k}'")));
    let config: GraphConfig =
        serde_json::from_str(field("config")?).map_err(|e| bad(&meta_path, format!("config: {e}")))?;
    let n_users: usize = field("n_users")?
        .parse()
        .map_err(|_| bad(&meta_path, "n_users".into()))?;
    let n_items: usize = field("n_items")?
        .parse()
        .map_err(|_| bad(&meta_path, "n_items".into()))?;

    let text = fs::read_to_string(&edges_path)?;
    if checksum(text.as_bytes()) != *field("sha256")? {
        return Err(bad(&edges_path, "checksum mismatch".into()));
    }
    let n = n_users + n_items;
    let mut triplets = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split('\t').collect();
        let parsed = (|| -> Option<(usize, usize, f64, EdgeKind)> {
            if f.len() != 4 {
                return None;
            }
            Some((
                f[0].parse().ok()?,
                f[1].parse().ok()?,
                f[2].parse().ok()?,
                EdgeKind::from_tag(f[3])?,
            ))
        })();
        let Some((i, j, w, kind)) = parsed else {
            return Err(bad(&edges_path, format!("line {}: malformed edge", lineno + 1)));
        };
        if i >= n || j >= n || super::edge_kind(n_users, i, j) != kind {
            return Err(bad(&edges_path, format!("line {}: inconsistent edge", lineno + 1)));
        }
        triplets.push((i, j, w));
    }
    Ok(GraphBundle {
        config,
        adjacency: SparseAdjacency {
            n_users,
            n_items,
            matrix: CsrMatrix::from_triplets(n, n, triplets)?,
        },
    })
}
