//! Stage-0 pretraining of the frozen hyper model: learns to read facts from context.
//!
//! Usage: `cargo run --release --example pretrain -- [steps]`

use racc::retrieval::{generate_task, TaskConfig};
use racc::tinylm::{pretrain, qa_accuracy_with_context, ModelConfig, PretrainConfig, TinyLm};

fn main() -> racc::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let task = generate_task(&TaskConfig::default())?;
    let vocab = task.vocabulary()?;
    let cfg = PretrainConfig {
        steps,
        ..Default::default()
    };
    let mut model = TinyLm::new(ModelConfig::hyper(vocab.len()), cfg.seed)?;
    let losses = pretrain(&mut model, &vocab, &cfg)?;
    println!("final loss {:.4}", losses.last().copied().unwrap_or(f64::NAN));
    for ctx in [true, false] {
        let acc = qa_accuracy_with_context(&model, &vocab, &cfg, 200, 99, ctx)?;
        println!("accuracy {} context: {acc:.3}", if ctx { "with" } else { "without" });
    }
    Ok(())
}
