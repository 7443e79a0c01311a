//! Generates the synthetic knowledge-based VQA task and prints a few samples.

use racc::retrieval::{generate_task, TaskConfig};

fn main() -> racc::Result<()> {
    let task = generate_task(&TaskConfig::default())?;
    let vocab = task.vocabulary()?;
    println!(
        "{} documents, {} train / {} val instances, vocabulary of {} tokens",
        task.corpus.len(),
        task.train.len(),
        task.val.len(),
        vocab.len()
    );
    println!("\nfirst documents:");
    for d in task.corpus.iter().take(4) {
        println!("  [{}] {}", d.id, d.text);
    }
    println!("  ...");
    for d in task.corpus.iter().rev().take(3) {
        println!("  [{}] {}", d.id, d.text);
    }
    println!("\nval instances:");
    for inst in task.val.iter().take(5) {
        println!(
            "  #{} image codes {:?}.. question `{}` answers {:?}",
            inst.id,
            &inst.image.codes()[..3],
            inst.question,
            inst.answers
        );
    }
    Ok(())
}
