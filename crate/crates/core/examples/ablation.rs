//! Trains every on/off combination of two method toggles and prints the grid.
//!
//! Usage: `cargo run --release --example ablation -- [train_steps]`

use racc::cli::{ablation_table, cmd_ablate, cmd_gen, cmd_pretrain, RunConfig, Toggle};

fn main() -> racc::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut cfg = RunConfig {
        out: "runs/ablation".into(),
        ..Default::default()
    };
    cfg.train.steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(600);
    if !cfg.paths().hyper_model().exists() {
        cmd_gen(&cfg)?;
        cmd_pretrain(&cfg)?;
    }
    let rows = cmd_ablate(&cfg, &[Toggle::Dcse, Toggle::Rgca])?;
    print!("{}", ablation_table(&rows));
    Ok(())
}
