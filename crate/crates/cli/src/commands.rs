use std::fs;
use std::path::Path;

use anyhow::{anyhow, Context, Result};
use hgcf::dataset::{filter_min_interactions, parse_interactions, split, InteractionDataset, SplitConfig};
use hgcf::eval::{evaluate, EvalConfig, Target};
use hgcf::experiment::{run_cell, sweep_csv, CellOutcome, RunSpec, SweepGrid};
use hgcf::hetgraph::{
    build_adjacency, graph_stats, load_graph, save_graph, GraphConfig, PropagationGraphs, StatsConfig,
};
use hgcf::model::{embed, load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, ModelConfig};
use hgcf::synthetic::{community_interactions, planted_blocks, CommunityConfig};
use hgcf::training::{train, RegNorm, TrainConfig};
use rayon::prelude::*;

use crate::{
    AblateArgs, BuildGraphArgs, Command, EvaluateArgs, GraphOpts, ModelOpts, PrepareArgs, SynthArgs, TrainArgs,
    TrainOpts, Usage,
};

const CONFIG_ECHO: &str = "config.txt";

pub fn run(cmd: Command, echo: &str) -> Result<()> {
    match cmd {
        Command::Prepare(a) => prepare(a, echo),
        Command::BuildGraph(a) => build_graph(a, echo),
        Command::Train(a) => train_cmd(a, echo),
        Command::Evaluate(a) => evaluate_cmd(a, echo),
        Command::Ablate(a) => ablate(a, echo),
        Command::Synth(a) => synth(a),
    }
}

fn write(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

fn output_dir(dir: &Path, echo: &str) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write(dir, CONFIG_ECHO, echo)
}

fn load_dataset(dir: &Path) -> Result<InteractionDataset> {
    InteractionDataset::load(dir).with_context(|| format!("loading dataset bundle {}", dir.display()))
}

fn graph_config(edges: hgcf::hetgraph::EdgeSet, threshold: f64, g: &GraphOpts, seed: u64) -> GraphConfig {
    GraphConfig {
        edges,
        similarity: g.sim,
        threshold,
        self_loops: g.self_loops,
        pair_budget: g.pair_budget,
        pair_cap_per_node: g.pair_cap,
        subsample_over_cap: g.subsample_over_cap,
        seed,
        layer1: g.layer1_mode,
    }
}

fn model_config(layers: usize, m: &ModelOpts) -> ModelConfig {
    ModelConfig {
        dim: m.dim,
        layers,
        leaky_slope: m.leaky_slope,
        message_dropout: m.dropout,
        include_layer0: !m.no_layer0,
    }
}

fn train_config(t: &TrainOpts, seed: u64) -> Result<TrainConfig> {
    let reg = match t.reg.as_str() {
        "squared" => RegNorm::Squared,
        "unsquared" => RegNorm::Unsquared,
        other => return Err(Usage(format!("unknown regularizer '{other}' (squared|unsquared)")).into()),
    };
    Ok(TrainConfig {
        lr: t.lr,
        lambda: t.lambda,
        batch_size: t.batch,
        epochs: t.epochs,
        eval_every: t.eval_every,
        patience: t.patience,
        seed,
        reg,
        select_k: t.select_k,
        ..Default::default()
    })
}

fn prepare(a: PrepareArgs, echo: &str) -> Result<()> {
    let mut raw = parse_interactions(&a.input, a.format).with_context(|| format!("reading {}", a.input.display()))?;
    if let Some(k) = a.min_inter {
        raw = filter_min_interactions(&raw, k)?;
    }
    let cfg = SplitConfig {
        train_frac: a.train_frac,
        val_frac_of_train: a.val_frac,
        seed: a.seed,
    };
    let mut ds = split(&raw, cfg)?;
    ds.meta.min_interactions = a.min_inter;
    output_dir(&a.out, echo)?;
    ds.save(&a.out)?;
    println!("{}", ds.stats_line());
    Ok(())
}

fn build_graph(a: BuildGraphArgs, echo: &str) -> Result<()> {
    let ds = load_dataset(&a.data)?;
    let cfg = graph_config(a.edges, a.threshold, &a.graph, a.seed);
    let adj = match build_adjacency(&ds, &cfg) {
        Err(e @ hgcf::Error::OverBudget { .. }) => {
            return Err(anyhow!(e).context("OOM-equivalent: graph not built"));
        }
        other => other?,
    };
    // Both normalized forms must exist before the graph is worth saving.
    PropagationGraphs::from_raw(&adj, cfg.layer1)?;
    let stats = graph_stats(
        &adj,
        StatsConfig {
            max_sources: a.stats_sources,
            seed: a.seed,
        },
    );
    output_dir(&a.out, echo)?;
    save_graph(&a.out, &cfg, &adj)?;
    let report = stats.report();
    write(&a.out, "stats.txt", &report)?;
    write(&a.out, "degrees.csv", stats.degree_csv())?;
    print!("{report}");
    Ok(())
}

fn load_graphs(dir: &Path, ds: &InteractionDataset) -> Result<PropagationGraphs> {
    let bundle = load_graph(dir).with_context(|| format!("loading graph bundle {}", dir.display()))?;
    let adj = &bundle.adjacency;
    if adj.n_users != ds.n_users || adj.n_items != ds.n_items {
        return Err(Usage(format!(
            "graph has {} users and {} items, dataset has {} and {}",
            adj.n_users, adj.n_items, ds.n_users, ds.n_items
        ))
        .into());
    }
    Ok(PropagationGraphs::from_raw(adj, bundle.config.layer1)?)
}

fn train_cmd(a: TrainArgs, echo: &str) -> Result<()> {
    let ds = load_dataset(&a.data)?;
    let graphs = load_graphs(&a.graph, &ds)?;
    let mcfg = model_config(a.layers, &a.model);
    let tcfg = train_config(&a.train, a.seed)?;
    mcfg.validate()?;
    tcfg.validate()?;
    let (params, log) = train(&ds, &graphs, &mcfg, &tcfg).context("training failed")?;
    output_dir(&a.out, echo)?;
    let ckpt = Checkpoint {
        model: mcfg,
        params,
        meta: CheckpointMeta {
            epoch: log.best_epoch,
            seed: a.seed,
            n_users: ds.n_users,
            n_items: ds.n_items,
            echo: serde_json::Value::String(echo.to_string()),
        },
    };
    save_checkpoint(&a.out.join("model.ckpt"), &ckpt)?;
    // Wall time goes to its own file so the log itself is reproducible.
    write(&a.out, "log.csv", log.csv_without_timing())?;
    let timing: String = std::iter::once("epoch,seconds\n".to_string())
        .chain(log.epochs.iter().map(|r| format!("{},{:.3}\n", r.epoch, r.seconds)))
        .collect();
    write(&a.out, "timing.csv", timing)?;
    let best = match log.best_val_recall {
        Some(r) => format!("epoch={}\nval_recall{}={r}\n", log.best_epoch, tcfg.select_k),
        None => format!("epoch={}\n", log.best_epoch),
    };
    write(&a.out, "best.txt", &best)?;
    print!("{best}");
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs, echo: &str) -> Result<()> {
    if !a.checkpoint.is_file() {
        return Err(Usage(format!("checkpoint {} not found", a.checkpoint.display())).into());
    }
    let target = match a.target.as_str() {
        "test" => Target::Test,
        "validation" | "valid" => Target::Validation,
        other => return Err(Usage(format!("unknown target '{other}' (test|validation)")).into()),
    };
    let ds = load_dataset(&a.data)?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    if ckpt.meta.n_users != ds.n_users || ckpt.meta.n_items != ds.n_items {
        return Err(Usage("checkpoint was trained on a different dataset".into()).into());
    }
    let graphs = load_graphs(&a.graph, &ds)?;
    let fe = embed(&ckpt.params, &graphs, &ckpt.model, ds.n_users)?;
    let cfg = EvalConfig {
        ks: a.k.clone(),
        target,
        ..Default::default()
    };
    let report = evaluate(&fe, &ds, &cfg)?;
    output_dir(&a.out, echo)?;
    let table = report.table();
    write(&a.out, "metrics.txt", &table)?;
    write(&a.out, "metrics.csv", report.csv())?;
    if a.per_user {
        write(&a.out, "per_user.csv", report.per_user_csv())?;
    }
    print!("{table}");
    Ok(())
}

/// Worker threads for sweeps: `HGCF_THREADS`, default 1.
fn thread_count() -> Result<usize> {
    match std::env::var("HGCF_THREADS") {
        Ok(v) => v
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Usage(format!("HGCF_THREADS must be a positive integer, got '{v}'")).into()),
        Err(_) => Ok(1),
    }
}

fn ablate(a: AblateArgs, echo: &str) -> Result<()> {
    let grid = SweepGrid {
        edges: a.edges.clone(),
        similarities: a.sims.clone(),
        thresholds: a.thresholds.clone(),
        layers: a.layers.clone(),
        seeds: a.seeds.clone(),
    };
    let cells = grid.cells()?;
    let ds = load_dataset(&a.data)?;
    let first = a.seeds[0];
    let base = RunSpec {
        graph: graph_config(a.edges[0], a.thresholds[0], &a.graph, first),
        model: model_config(a.layers[0], &a.model),
        train: train_config(&a.train, first)?,
        eval: EvalConfig::default(),
    };
    base.model.validate()?;
    base.train.validate()?;
    output_dir(&a.out, echo)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(thread_count()?).build()?;
    log::info!("{} cells on {} thread(s)", cells.len(), pool.current_num_threads());
    let outcomes: Vec<CellOutcome> = pool.install(|| {
        cells
            .par_iter()
            .map(|&cell| {
                let o = run_cell(&ds, &base, cell);
                match &o.result {
                    Ok(m) => log::info!("{:?}: recall@20 {:.4}", cell, m.recall),
                    Err(e) => log::warn!("{:?} failed: {e}", cell),
                }
                o
            })
            .collect()
    });
    let csv = sweep_csv(&outcomes);
    write(&a.out, "sweep.csv", &csv)?;
    print!("{csv}");
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let raw = match a.kind.as_str() {
        "planted" => planted_blocks(a.users, a.items, a.groups, a.degree as usize, a.seed)?,
        "community" => community_interactions(&CommunityConfig {
            n_users: a.users,
            n_items: a.items,
            n_communities: a.groups,
            min_degree: a.min_degree,
            mean_degree: a.degree,
            seed: a.seed,
            ..Default::default()
        })?,
        other => return Err(Usage(format!("unknown kind '{other}' (planted|community)")).into()),
    };
    let mut s = String::new();
    for (user, items) in &raw.records {
        s.push_str(user);
        for i in items {
            s.push(' ');
            s.push_str(i);
        }
        s.push('\n');
    }
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(&a.out, s).with_context(|| format!("writing {}", a.out.display()))?;
    println!("users={} interactions={}", raw.records.len(), raw.n_interactions());
    Ok(())
}
