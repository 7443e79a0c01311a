//! Compresses documents and an image-question pair into fixed-length soft prompts.

use racc::compressor::{
    compress_decoupled, compress_document, compress_joint, normalize_text, PromptBank, HARD_PROMPT_DOC, HARD_PROMPT_VQ,
};
use racc::numerics::{Graph, ParamSet};
use racc::retrieval::{generate_task, TaskConfig};
use racc::tinylm::{ModelConfig, TinyLm};

fn main() -> racc::Result<()> {
    let task = generate_task(&TaskConfig::default())?;
    let vocab = task.vocabulary()?;
    let hyper = TinyLm::new(ModelConfig::hyper(vocab.len()), 1)?;

    // learnable prompts initialized from hard-prompt embeddings
    let mut ps = ParamSet::new();
    let bank = PromptBank::pipe_init(&mut ps, HARD_PROMPT_DOC, HARD_PROMPT_VQ, &vocab, &hyper, 16, 12)?;
    println!("theta_d from `{}`", normalize_text(HARD_PROMPT_DOC));

    let mut g = Graph::new();
    let hp = hyper.bind(&mut g, false);
    let p = ps.bind(&mut g, false);
    for doc in task.corpus.iter().take(3) {
        let tokens = vocab.tokenize(&doc.text)?;
        let c = compress_document(&hyper, &mut g, &hp, p[bank.theta_d], &tokens, None)?;
        let v = g.value(c);
        println!("{:>2} tokens -> {:?} prompt, norm {:.3}: {}", tokens.len(), v.shape(), v.norm(), doc.text);
    }

    let inst = &task.val[0];
    let q = vocab.tokenize(&inst.question)?;
    let joint = compress_joint(&hyper, &mut g, &hp, p[bank.theta_vq], &inst.image, &q)?;
    let img_only = compress_decoupled(&hyper, &mut g, &hp, p[bank.theta_vq], Some(&inst.image), None)?;
    let q_only = compress_decoupled(&hyper, &mut g, &hp, p[bank.theta_vq], None, Some(&q))?;
    println!(
        "joint {:?}, image-only differs by {:.3}, question-only by {:.3}",
        g.value(joint).shape(),
        g.value(joint).max_abs_diff(g.value(img_only)),
        g.value(joint).max_abs_diff(g.value(q_only))
    );
    Ok(())
}
