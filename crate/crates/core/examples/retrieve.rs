//! Retrieves documents for val questions and reports PRRecall@K.

use racc::retrieval::retriever::DEFAULT_DIM;
use racc::retrieval::{generate_task, prrecall_at_k, Retriever, TaskConfig};

fn main() -> racc::Result<()> {
    let task = generate_task(&TaskConfig::default())?;
    let vocab = task.vocabulary()?;
    let r = Retriever::new(&task.corpus, &vocab, task.config.n_patches, DEFAULT_DIM, 1)?;

    let inst = &task.val[0];
    let set = r.retrieve_labeled(inst, &task.corpus, 5)?;
    println!("question `{}`, answers {:?}", inst.question, inst.answers);
    for ((id, p), rel) in set.doc_ids.iter().zip(&set.scores).zip(&set.pseudo_relevant) {
        let mark = if *rel { "*" } else { " " };
        println!("  {mark} p={p:.3}  {}", task.corpus[*id as usize].text);
    }

    let sets = task
        .val
        .iter()
        .map(|i| r.retrieve_labeled(i, &task.corpus, 10))
        .collect::<racc::Result<Vec<_>>>()?;
    for k in [1, 2, 3, 5, 10] {
        println!("PRRecall@{k:<2} {:.3}", prrecall_at_k(&sets, k)?);
    }
    Ok(())
}
