//! Single training runs and ablation sweeps over graph and depth settings.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::InteractionDataset;
use crate::eval::{evaluate, EvalConfig, EvalReport};
use crate::hetgraph::{build_graphs, EdgeKind, EdgeSet, GraphConfig, Similarity};
use crate::model::{embed, ModelConfig, ModelParams};
use crate::training::{train, TrainConfig, TrainLog};
use crate::{Error, Result};

/// Everything needed to go from a dataset to a test report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub graph: GraphConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            graph: GraphConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub params: ModelParams,
    pub log: TrainLog,
    pub report: EvalReport,
    pub uu_entries: usize,
    pub ii_entries: usize,
    pub seconds: f64,
}

/// Builds the graph, trains with validation-based selection and evaluates
/// the selected parameters on the test partition.
pub fn run(ds: &InteractionDataset, spec: &RunSpec) -> Result<RunResult> {
    let started = Instant::now();
    let (raw, graphs) = build_graphs(ds, &spec.graph)?;
    let (params, log) = train(ds, &graphs, &spec.model, &spec.train)?;
    let fe = embed(&params, &graphs, &spec.model, ds.n_users)?;
    let report = evaluate(&fe, ds, &spec.eval)?;
    Ok(RunResult {
        params,
        log,
        report,
        uu_entries: raw.count_kind(EdgeKind::UserUser),
        ii_entries: raw.count_kind(EdgeKind::ItemItem),
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Axes of an ablation sweep; cells are their cross product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub edges: Vec<EdgeSet>,
    pub similarities: Vec<Similarity>,
    pub thresholds: Vec<f64>,
    pub layers: Vec<usize>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub edges: EdgeSet,
    pub similarity: Similarity,
    pub threshold: f64,
    pub layers: usize,
    pub seed: u64,
}

impl SweepGrid {
    pub fn cells(&self) -> Result<Vec<Cell>> {
        let mut out = Vec::new();
        for &edges in &self.edges {
            for &similarity in &self.similarities {
                for &threshold in &self.thresholds {
                    for &layers in &self.layers {
                        for &seed in &self.seeds {
                            out.push(Cell {
                                edges,
                                similarity,
                                threshold,
                                layers,
                                seed,
                            });
                        }
                    }
                }
            }
        }
        if out.is_empty() {
            return Err(Error::Config("no cells".into()));
        }
        Ok(out)
    }
}

impl Cell {
    pub fn spec(&self, base: &RunSpec) -> RunSpec {
        let mut spec = base.clone();
        spec.graph.edges = self.edges;
        spec.graph.similarity = self.similarity;
        spec.graph.threshold = self.threshold;
        spec.graph.seed = self.seed;
        spec.model.layers = self.layers;
        spec.train.seed = self.seed;
        spec
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellOutcome {
    pub cell: Cell,
    /// `Err` holds the failure message; the sweep carries on regardless.
    pub result: std::result::Result<CellMetrics, String>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellMetrics {
    pub recall: f64,
    pub ndcg: f64,
    pub best_epoch: usize,
    pub uu_entries: usize,
}

/// Runs one cell; failures are captured rather than propagated.
pub fn run_cell(ds: &InteractionDataset, base: &RunSpec, cell: Cell) -> CellOutcome {
    let started = Instant::now();
    let mut spec = cell.spec(base);
    if !spec.eval.ks.contains(&20) && ds.n_items >= 20 {
        spec.eval.ks.push(20);
    }
    let k = if ds.n_items >= 20 { 20 } else { spec.eval.ks[0] };
    let result = run(ds, &spec)
        .map(|r| CellMetrics {
            recall: r.report.recall(k),
            ndcg: r.report.ndcg(k),
            best_epoch: r.log.best_epoch,
            uu_entries: r.uu_entries,
        })
        .map_err(|e| e.to_string());
    CellOutcome {
        cell,
        result,
        seconds: started.elapsed().as_secs_f64(),
    }
}

pub const SWEEP_HEADER: &str =
    "edges,similarity,threshold,layers,seed,status,recall20,ndcg20,best_epoch,uu_entries,seconds,message";

impl CellOutcome {
    pub fn csv_row(&self) -> String {
        let c = &self.cell;
        let mut s = String::new();
        write!(
            s,
            "{},{},{},{},{},",
            c.edges, c.similarity, c.threshold, c.layers, c.seed
        )
        .unwrap();
        match &self.result {
            Ok(m) => write!(
                s,
                "ok,{},{},{},{},{:.3},",
                m.recall, m.ndcg, m.best_epoch, m.uu_entries, self.seconds
            )
            .unwrap(),
            Err(msg) => write!(s, "failed,,,,,{:.3},\"{}\"", self.seconds, msg.replace('"', "'")).unwrap(),
        }
        s
    }
}

pub fn sweep_csv(outcomes: &[CellOutcome]) -> String {
    let mut s = String::from(SWEEP_HEADER);
    s.push('\n');
    for o in outcomes {
        s.push_str(&o.csv_row());
        s.push('\n');
    }
    s
}
