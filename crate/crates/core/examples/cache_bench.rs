//! Pre-saves compressed document prompts and times answering with and without them.
//!
//! Usage: `cargo run --release --example cache_bench -- [out_dir]`
//! Reuses artifacts from the `train_and_eval` example when present, otherwise
//! runs a short pipeline first.

use std::path::PathBuf;

use racc::cli::{cmd_bench, cmd_gen, cmd_pretrain, cmd_train, RunConfig};

fn main() -> racc::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut cfg = RunConfig {
        out: std::env::args().nth(1).map_or_else(|| PathBuf::from("runs/example"), PathBuf::from),
        ..Default::default()
    };
    if !cfg.paths().racc().exists() {
        cfg.pretrain.steps = 300;
        cfg.train.steps = 200;
        cmd_gen(&cfg)?;
        cmd_pretrain(&cfg)?;
        cmd_train(&cfg)?;
    }
    let report = cmd_bench(&cfg, true)?;
    print!("{}", report.to_table());
    Ok(())
}
