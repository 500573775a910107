mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use hgcf::dataset::InputFormat;
use hgcf::hetgraph::{EdgeSet, Layer1Mode, Similarity};

#[derive(Parser, Debug)]
#[command(name = "hgcf", version, about = "Heterogeneous graph collaborative filtering")]
pub struct Cli {
    /// `key = value` file; keys are long option names, flags on the command
    /// line win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// More logging (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Parse, filter and split raw interactions into a dataset bundle.
    Prepare(PrepareArgs),
    /// Build the interaction graph, its bundle and connectivity statistics.
    BuildGraph(BuildGraphArgs),
    /// Train a model and keep the checkpoint with the best validation recall.
    Train(TrainArgs),
    /// Score a checkpoint on held-out interactions.
    Evaluate(EvaluateArgs),
    /// Run a grid of graph and depth settings and collect one CSV row per cell.
    Ablate(AblateArgs),
    /// Write a synthetic interaction file in user-list format.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
pub struct PrepareArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// user-list (`user item item ...`) or triples (`user item [value]`).
    #[arg(long, default_value = "user-list")]
    pub format: InputFormat,
    /// Keep users and items with more than this many interactions.
    #[arg(long)]
    pub min_inter: Option<usize>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.8)]
    pub train_frac: f64,
    /// Share of each user's training portion held out for validation.
    #[arg(long, default_value_t = 0.1)]
    pub val_frac: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct GraphOpts {
    #[arg(long, default_value = "pmi")]
    pub sim: Similarity,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub self_loops: bool,
    /// Fail when a similarity block would hold more co-occurring pairs.
    #[arg(long)]
    pub pair_budget: Option<usize>,
    /// Warn (or subsample, see --subsample-over-cap) above this many pairs per node.
    #[arg(long)]
    pub pair_cap: Option<usize>,
    #[arg(long)]
    pub subsample_over_cap: bool,
    /// renormalize (layer 1 normalizes the graph without UU edges) or mask.
    #[arg(long, default_value = "renormalize")]
    pub layer1_mode: Layer1Mode,
}

#[derive(Args, Debug)]
pub struct BuildGraphArgs {
    /// Dataset bundle directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Edge types, e.g. `ui`, `ui,uu`, `ui,uu,ii`.
    #[arg(long, default_value = "ui,uu")]
    pub edges: EdgeSet,
    #[arg(short = 't', long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub threshold: f64,
    #[command(flatten)]
    pub graph: GraphOpts,
    /// Users sampled as BFS sources for the hop histogram.
    #[arg(long, default_value_t = 200)]
    pub stats_sources: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct ModelOpts {
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.2)]
    pub leaky_slope: f64,
    #[arg(long, default_value_t = 0.0)]
    pub dropout: f64,
    /// Leave the base embeddings out of the final concatenation.
    #[arg(long)]
    pub no_layer0: bool,
}

#[derive(Args, Debug, Clone)]
pub struct TrainOpts {
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1024)]
    pub batch: usize,
    #[arg(long, default_value_t = 400)]
    pub epochs: usize,
    /// Validations without improvement before stopping (0 disables).
    #[arg(long, default_value_t = 5)]
    pub patience: usize,
    /// Validate every this many epochs (0 disables selection).
    #[arg(long, default_value_t = 10)]
    pub eval_every: usize,
    #[arg(long, default_value_t = 20)]
    pub select_k: usize,
    /// squared or unsquared embedding norm in the regularizer.
    #[arg(long, default_value = "squared")]
    pub reg: String,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Graph bundle directory.
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[command(flatten)]
    pub model: ModelOpts,
    #[command(flatten)]
    pub train: TrainOpts,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Cut-offs, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "20")]
    pub k: Vec<usize>,
    /// test or validation.
    #[arg(long, default_value = "test")]
    pub target: String,
    /// Also write per-user metrics.
    #[arg(long)]
    pub per_user: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Edge sets separated by `;`, each like `ui,uu` (or `ui+uu`).
    #[arg(long, value_delimiter = ';', default_value = "ui,uu")]
    pub edges: Vec<EdgeSet>,
    #[arg(long, value_delimiter = ',', default_value = "pmi")]
    pub sims: Vec<Similarity>,
    #[arg(long, value_delimiter = ',', default_value = "0", allow_hyphen_values = true)]
    pub thresholds: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "2")]
    pub layers: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "42")]
    pub seeds: Vec<u64>,
    #[command(flatten)]
    pub graph: GraphOpts,
    #[command(flatten)]
    pub model: ModelOpts,
    #[command(flatten)]
    pub train: TrainOpts,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// planted (disjoint blocks) or community (overlapping, long-tailed).
    #[arg(long, default_value = "community")]
    pub kind: String,
    #[arg(long, default_value_t = 943)]
    pub users: usize,
    #[arg(long, default_value_t = 1682)]
    pub items: usize,
    /// Blocks or communities.
    #[arg(long, default_value_t = 12)]
    pub groups: usize,
    /// Items per user for planted data; mean degree for community data.
    #[arg(long, default_value_t = 106.0)]
    pub degree: f64,
    /// Minimum degree for community data.
    #[arg(long, default_value_t = 20)]
    pub min_degree: usize,
    #[arg(long, default_value_t = 2020)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Usage problems found after argument parsing (exit code 2).
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

/// 2 for bad input or usage, 3 for failures while running.
fn exit_code(err: &anyhow::Error) -> u8 {
    use hgcf::Error as E;
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Parse { .. }
                | E::Empty(_)
                | E::FilteredOut(_)
                | E::Config(_)
                | E::Format { .. }
                | E::Io(_)
                | E::OutOfRange { .. }
                | E::Shape(_) => 2,
                _ => 3,
            };
        }
        if cause.is::<std::io::Error>() {
            return 2;
        }
    }
    3
}

/// Parses the command line, then re-parses with config-file entries added
/// for every option the user did not give.
fn parse(argv: Vec<OsString>) -> Result<(Cli, String), clap::Error> {
    let cmd = Cli::command();
    let first = cmd.clone().try_get_matches_from(&argv)?;
    let (name, sub) = first.subcommand().expect("subcommand is required");
    let mut argv = argv;
    if let Some(path) = sub.get_one::<PathBuf>("config") {
        let entries = config::read_config(path)
            .map_err(|e| Cli::command().error(clap::error::ErrorKind::Io, format!("{e:#}")))?;
        let sub_cmd = cmd.find_subcommand(name).expect("known subcommand");
        argv.extend(config::config_args(sub_cmd, sub, &entries));
    }
    let matches = cmd.clone().try_get_matches_from(&argv)?;
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let echo = config::echo(cmd.find_subcommand(name).expect("known subcommand"), sub);
    let cli = Cli::from_arg_matches(&matches)?;
    Ok((cli, echo))
}

fn main() -> ExitCode {
    let (cli, echo) = match parse(std::env::args_os().collect()) {
        Ok(v) => v,
        Err(e) => e.exit(),
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match commands::run(cli.command, &echo) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
