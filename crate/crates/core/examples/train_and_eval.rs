//! The full pipeline: generate, pretrain, train RACC and evaluate.
//!
//! Usage: `cargo run --release --example train_and_eval -- [out_dir] [train_steps]`

use std::path::PathBuf;

use racc::cli::{cmd_eval, cmd_gen, cmd_pretrain, cmd_train, RunConfig};

fn main() -> racc::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let mut cfg = RunConfig {
        out: args.next().map_or_else(|| PathBuf::from("runs/example"), PathBuf::from),
        ..Default::default()
    };
    if let Some(steps) = args.next().and_then(|s| s.parse().ok()) {
        cfg.train.steps = steps;
    }
    cmd_gen(&cfg)?;
    cmd_pretrain(&cfg)?;
    cmd_train(&cfg)?;
    let report = cmd_eval(&cfg)?;
    print!("{}", report.to_table());
    Ok(())
}
