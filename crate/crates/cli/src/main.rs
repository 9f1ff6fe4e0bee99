//! `svdatk` — desk-scale workbench for SVD-feature-fusion transfer
//! attacks: generate data, train the toy models, craft attacks, measure
//! transfer, sweep ablations, and render similarity / saliency reports.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use svdatk_cli::commands::{self, sweep::Axis};
use svdatk_cli::{CliError, RunConfig};

#[derive(Parser)]
#[command(name = "svdatk", version, about, max_term_width = 100)]
struct Cli {
    /// Config file with `key = value` lines (CLI flags override it).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Master seed for data, weights, and attacks.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Output directory for all artifacts.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Worker threads (0 = library default).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    /// Extra config overrides, e.g. `--set attack_n=100` (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic-shapes dataset splits.
    GenData,
    /// Train every configured architecture and write checkpoints.
    Train,
    /// Craft an adversarial batch on the source model.
    Attack,
    /// Evaluate crafted batches against every target model.
    Eval,
    /// Re-run the attack across a parameter grid and plot the results.
    Sweep {
        /// Parameter to vary.
        #[arg(long, value_enum)]
        axis: AxisArg,
    },
    /// Representation-similarity reports (layerwise and cross-model).
    Cka,
    /// Render saliency maps for clean and adversarial images.
    Cam,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Beta,
    Topk,
    Layer,
}

impl From<AxisArg> for Axis {
    fn from(a: AxisArg) -> Axis {
        match a {
            AxisArg::Beta => Axis::Beta,
            AxisArg::Topk => Axis::Topk,
            AxisArg::Layer => Axis::Layer,
        }
    }
}

fn build_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        cfg.load_file(path)?;
    }
    for pair in &cli.set {
        cfg.set_pair(pair)?;
    }
    if let Some(seed) = cli.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    if let Some(out) = &cli.out {
        cfg.set("out", &out.display().to_string())?;
    }
    if let Some(threads) = cli.threads {
        cfg.set("threads", &threads.to_string())?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = build_config(&cli)?;
    let threads = cfg.usize("threads")?;
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Invalid(format!("thread pool: {e}")))?;
    }
    match cli.cmd {
        Cmd::GenData => commands::gen_data::run(&cfg),
        Cmd::Train => commands::train::run(&cfg),
        Cmd::Attack => commands::attack::run(&cfg).map(|_| ()),
        Cmd::Eval => commands::eval::run(&cfg).map(|_| ()),
        Cmd::Sweep { axis } => commands::sweep::run(&cfg, axis.into()).map(|_| ()),
        Cmd::Cka => commands::cka::run(&cfg),
        Cmd::Cam => commands::cam::run(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
