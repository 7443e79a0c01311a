//! Stage-0 pretraining: teaches the toy models to read facts from context.
//!
//! Every example comes from a freshly randomized world, so the only way to
//! answer is to read the context. A model trained this way knows nothing
//! about any particular task world once frozen.

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{AdamWConfig, Graph, Optimizer, ScheduleState};
use crate::retrieval::task::{sample_pretrain_example, PretrainExample};
use crate::tinylm::model::{ArchKind, BaseInput, TinyLm};
use crate::tinylm::vocab::{Vocabulary, BOS, EOS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub warmup: usize,
    pub lr_peak: f64,
    /// Weight of the auxiliary language-modeling loss on the context.
    pub lm_weight: f64,
    pub seed: u64,
    pub n_entities: usize,
    pub n_attributes: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch: 4,
            warmup: 50,
            lr_peak: 2e-3,
            lm_weight: 0.25,
            seed: 11,
            n_entities: 100,
            n_attributes: 4,
        }
    }
}

struct Encoded {
    example: PretrainExample,
    question: Vec<usize>,
    context: Vec<usize>,
    answer: Vec<usize>,
}

fn encode(vocab: &Vocabulary, example: PretrainExample) -> Result<Encoded> {
    Ok(Encoded {
        question: vocab.tokenize(&example.question)?,
        context: vocab.tokenize(&example.context)?,
        answer: vocab.tokenize(&example.answer)?,
        example,
    })
}

fn sample(rng: &mut ChaCha8Rng, model: &TinyLm, vocab: &Vocabulary, cfg: &PretrainConfig) -> Result<Encoded> {
    let c = model.config();
    encode(
        vocab,
        sample_pretrain_example(rng, cfg.n_entities, cfg.n_attributes, c.n_patches, c.patch_width),
    )
}

/// Trains every parameter of `model` in place. Returns the per-step mean loss.
pub fn pretrain(model: &mut TinyLm, vocab: &Vocabulary, cfg: &PretrainConfig) -> Result<Vec<f64>> {
    if cfg.batch == 0 || cfg.steps == 0 {
        return Err(Error::Config("pretraining needs a positive batch and step count".into()));
    }
    if vocab.len() != model.config().vocab_size {
        return Err(Error::Config(format!(
            "vocabulary has {} tokens but the model expects {}",
            vocab.len(),
            model.config().vocab_size
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let schedule = ScheduleState::new(cfg.warmup, cfg.steps, cfg.lr_peak * 0.01, cfg.lr_peak)?;
    let mut opt = Optimizer::new(model.params(), AdamWConfig::default());
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut g = Graph::new();
        let p = model.bind(&mut g, true);
        let mut terms = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            let ex = sample(&mut rng, model, vocab, cfg)?;
            let input = BaseInput {
                image: &ex.example.image,
                question: &ex.question,
                context: &ex.context,
            };
            let out = model.base_forward(&mut g, &p, &input, None, &ex.answer)?;
            let qa = g.cross_entropy(out.logits, &out.targets)?;
            let lm = match model.config().arch {
                ArchKind::DecoderOnly => {
                    // Layout: image, question, <sep>, context, <bos>, answer.
                    let start = ex.example.image.n_patches() + ex.question.len() + 1;
                    let mut targets = vec![None; out.targets.len()];
                    for j in 0..ex.context.len() - 1 {
                        targets[start + j] = Some(ex.context[j + 1]);
                    }
                    g.cross_entropy(out.logits, &targets)?
                }
                ArchKind::EncoderDecoder => {
                    let x = model.embed_tokens(&mut g, &p, &ex.context)?;
                    let mem = model.encode(&mut g, &p, x, None)?;
                    let mut dec_in = vec![BOS];
                    dec_in.extend_from_slice(&ex.context);
                    let mut targets: Vec<Option<usize>> = ex.context.iter().map(|&t| Some(t)).collect();
                    targets.push(Some(EOS));
                    let y = model.embed_tokens(&mut g, &p, &dec_in)?;
                    let (h, _) = model.decode(&mut g, &p, y, Some(mem), None)?;
                    let logits = model.lm_head(&mut g, &p, h)?;
                    g.cross_entropy(logits, &targets)?
                }
            };
            let lm = g.scale(lm, cfg.lm_weight)?;
            terms.push(g.add(qa, lm)?);
        }
        let mut total = terms[0];
        for &t in &terms[1..] {
            total = g.add(total, t)?;
        }
        let loss = g.scale(total, 1.0 / cfg.batch as f64)?;
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss { step, value });
        }
        let grads = g.backward(loss)?;
        let per_param: Vec<_> = p.vars().iter().map(|&v| grads.get(v).cloned()).collect();
        opt.step(model.params_mut(), &per_param, &schedule.at(step))?;
        if step % 100 == 0 {
            info!("pretrain step {step}: loss {value:.4}");
        }
        losses.push(value);
    }
    Ok(losses)
}

/// Fraction of fresh random-world examples answered exactly when the gold
/// fact is given in context (`with_context`) or withheld.
pub fn qa_accuracy_with_context(
    model: &TinyLm,
    vocab: &Vocabulary,
    cfg: &PretrainConfig,
    n: usize,
    seed: u64,
    with_context: bool,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::EmptyInput("evaluation examples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0;
    for _ in 0..n {
        let ex = sample(&mut rng, model, vocab, cfg)?;
        let input = BaseInput {
            image: &ex.example.image,
            question: &ex.question,
            context: if with_context { &ex.context } else { &[] },
        };
        if model.generate(&input, None, 4)? == ex.answer {
            hits += 1;
        }
    }
    Ok(hits as f64 / n as f64)
}
