use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use racc::cli::{cmd_ablate, cmd_bench, cmd_eval, cmd_gen, cmd_pretrain, cmd_train, RunConfig, Toggle};
use racc::modulator::Variant;

#[derive(Parser)]
#[command(name = "racc", version, about = "Retrieval-augmented answering with compressed contexts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; missing fields use the defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for task generation, RACC initialization and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Artifact directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    no_pipe: bool,
    #[arg(long, global = true)]
    no_prdb: bool,
    #[arg(long, global = true)]
    no_dcse: bool,
    #[arg(long, global = true)]
    no_rgca: bool,
    /// Retrieved documents per instance.
    #[arg(long, global = true)]
    k: Option<usize>,
    #[arg(long, global = true, value_enum)]
    variant: Option<VariantArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Homo,
    Hetero,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus and VQA instances.
    Gen,
    /// Stage-0 pretraining of the frozen models.
    Pretrain,
    /// Train the RACC parameters.
    Train,
    /// Evaluate VQA accuracy and PRRecall.
    Eval,
    /// Compare latency with and without pre-saved document prompts.
    Bench {
        /// Build the prompt cache before timing.
        #[arg(long)]
        pre_save: bool,
    },
    /// Train every combination of the given toggles.
    Ablate {
        #[arg(long, value_delimiter = ',', default_values = ["pipe", "dcse", "rgca", "prdb"])]
        vary: Vec<String>,
    },
}

fn config(c: &Common) -> racc::Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::from_toml_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg = cfg.with_seed(s);
    }
    if let Some(o) = &c.out {
        cfg.out = o.clone();
    }
    let t = &mut cfg.racc.toggles;
    t.pipe &= !c.no_pipe;
    t.prdb &= !c.no_prdb;
    t.dcse &= !c.no_dcse;
    t.rgca &= !c.no_rgca;
    if let Some(k) = c.k {
        cfg.train.k = k;
    }
    if let Some(v) = c.variant {
        cfg.train.variant = match v {
            VariantArg::Homo => Variant::Homo,
            VariantArg::Hetero => Variant::Hetero,
        };
    }
    Ok(cfg)
}

fn run(cli: Cli) -> racc::Result<()> {
    let cfg = config(&cli.common)?;
    match cli.command {
        Command::Gen => cmd_gen(&cfg).map(|_| ()),
        Command::Pretrain => cmd_pretrain(&cfg),
        Command::Train => cmd_train(&cfg).map(|_| ()),
        Command::Eval => cmd_eval(&cfg).map(|r| print!("{}", r.to_table())),
        Command::Bench { pre_save } => cmd_bench(&cfg, pre_save).map(|r| print!("{}", r.to_table())),
        Command::Ablate { vary } => {
            let vary = vary.iter().map(|s| s.parse()).collect::<racc::Result<Vec<Toggle>>>()?;
            cmd_ablate(&cfg, &vary).map(|rows| print!("{}", racc::cli::ablation_table(&rows)))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
