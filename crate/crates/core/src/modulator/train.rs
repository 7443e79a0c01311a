use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modulator::pipeline::{Frozen, PreparedDoc, PreparedInstance, Racc, StateMemo};
use crate::numerics::{AdamWConfig, Graph, Optimizer, ScheduleState};
use crate::retrieval::{Document, Retriever, VqaInstance};
use crate::tinylm::{SyntheticImage, Vocabulary};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// The base model is the hyper model itself.
    Homo,
    /// A separate, wider decoder-only base model.
    Hetero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Retrieved documents per instance.
    pub k: usize,
    pub batch: usize,
    pub warmup: usize,
    pub steps: usize,
    pub lr_floor: f64,
    pub lr_peak: f64,
    pub seed: u64,
    pub variant: Variant,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 5,
            batch: 2,
            warmup: 100,
            steps: 2000,
            lr_floor: 1e-5,
            lr_peak: 1e-3,
            seed: 7,
            variant: Variant::Homo,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.batch == 0 {
            return Err(Error::Config("K and batch size must be at least 1".into()));
        }
        ScheduleState::new(self.warmup, self.steps, self.lr_floor, self.lr_peak).map(|_| ())
    }
}

/// Tokenizes instances and attaches their labeled top-`k` documents.
pub fn prepare_instances(
    instances: &[VqaInstance],
    corpus: &[Document],
    retriever: &Retriever,
    vocab: &Vocabulary,
    k: usize,
) -> Result<Vec<PreparedInstance>> {
    instances
        .iter()
        .map(|inst| {
            let set = retriever.retrieve_labeled(inst, corpus, k)?;
            let docs = set
                .doc_ids
                .iter()
                .map(|&id| {
                    let d = corpus.get(id as usize).filter(|d| d.id == id).ok_or(Error::NotFound(id))?;
                    let image = match &d.image_codes {
                        Some(c) => Some(SyntheticImage::from_codes(c.clone(), inst.image.patch_width())?),
                        None => None,
                    };
                    Ok(PreparedDoc {
                        id,
                        tokens: vocab.tokenize(&d.text)?,
                        image,
                    })
                })
                .collect::<Result<_>>()?;
            Ok(PreparedInstance {
                id: inst.id,
                image: inst.image.clone(),
                question: vocab.tokenize(&inst.question)?,
                answer: vocab.tokenize(inst.target_answer())?,
                answers: inst.answers.clone(),
                docs,
                scores: set.scores,
                flags: set.pseudo_relevant,
            })
        })
        .collect()
}

/// One optimizer update on `batch`; returns the mean loss.
pub fn train_step(
    racc: &mut Racc,
    frozen: Frozen<'_>,
    batch: &[&PreparedInstance],
    opt: &mut Optimizer,
    schedule: &ScheduleState,
    memo: &mut StateMemo,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("training batch"));
    }
    let mut g = Graph::new();
    let p = racc.params().bind(&mut g, true);
    let hp = frozen.hyper.bind(&mut g, false);
    let bp = frozen.base.bind(&mut g, false);
    let mut total = None;
    for inst in batch {
        let l = racc.loss(&mut g, &p, &hp, &bp, frozen, inst, true, Some(memo))?;
        total = Some(match total {
            None => l,
            Some(t) => g.add(t, l)?,
        });
    }
    let loss = g.scale(total.expect("non-empty batch"), 1.0 / batch.len() as f64)?;
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss {
            step: schedule.step,
            value,
        });
    }
    let grads = g.backward(loss)?;
    let per_param: Vec<_> = p.vars().iter().map(|&v| grads.get(v).cloned()).collect();
    opt.step(racc.params_mut(), &per_param, schedule)?;
    Ok(value)
}

/// Trains `racc` for `cfg.steps` updates over shuffled epochs of `data`.
/// Returns the loss of every step.
pub fn train(
    racc: &mut Racc,
    frozen: Frozen<'_>,
    data: &[PreparedInstance],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(usize, f64),
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyInput("training instances"));
    }
    let schedule = ScheduleState::new(cfg.warmup, cfg.steps, cfg.lr_floor, cfg.lr_peak)?;
    let mut opt = Optimizer::new(racc.params(), AdamWConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut memo = StateMemo::default();
    let mut order: Vec<usize> = Vec::new();
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch);
        while batch.len() < cfg.batch {
            if order.is_empty() {
                order = (0..data.len()).collect();
                order.shuffle(&mut rng);
                order.reverse();
            }
            batch.push(&data[order.pop().expect("refilled")]);
        }
        let loss = train_step(racc, frozen, &batch, &mut opt, &schedule.at(step), &mut memo)?;
        if step % 100 == 0 {
            info!("step {step}: loss {loss:.4}");
        }
        debug!("step {step}: loss {loss:.6}");
        on_step(step, loss);
        losses.push(loss);
    }
    Ok(losses)
}
