use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregator::{dcse_enhance, rgca_forward, CrossAttentionBlock, RgcaStack};
use crate::compressor::{compress_states, encode_document, encode_vq, prdb_gate, PromptBank, HARD_PROMPT_DOC, HARD_PROMPT_VQ};
use crate::error::{shape_err, Error, Result};
use crate::modulator::{generate_modulation, MlpSet};
use crate::numerics::{Bound, Graph, ParamSet, Tensor, Var};
use crate::tinylm::{BaseInput, PrefixKv, SyntheticImage, TinyLm, Vocabulary};

/// Method switches for ablations. All on is the full method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Toggles {
    pub pipe: bool,
    pub prdb: bool,
    pub dcse: bool,
    pub rgca: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Self {
            pipe: true,
            prdb: true,
            dcse: true,
            rgca: true,
        }
    }
}

impl Toggles {
    pub fn all_off() -> Self {
        Self {
            pipe: false,
            prdb: false,
            dcse: false,
            rgca: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RaccConfig {
    pub l_d: usize,
    pub l_vq: usize,
    pub n_r: usize,
    pub agg_heads: usize,
    /// Hidden width of each modulation MLP; 0 means `2 * d_hyper`.
    pub mlp_hidden: usize,
    pub max_answer_len: usize,
    pub toggles: Toggles,
    pub seed: u64,
}

impl Default for RaccConfig {
    fn default() -> Self {
        Self {
            l_d: 16,
            l_vq: 12,
            n_r: 3,
            agg_heads: 4,
            mlp_hidden: 0,
            max_answer_len: 4,
            toggles: Toggles::default(),
            seed: 7,
        }
    }
}

/// The frozen hyper and base models. They may be the same model.
#[derive(Clone, Copy)]
pub struct Frozen<'a> {
    pub hyper: &'a TinyLm,
    pub base: &'a TinyLm,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreparedDoc {
    pub id: u64,
    pub tokens: Vec<usize>,
    pub image: Option<SyntheticImage>,
}

/// A tokenized instance with its retrieved documents.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedInstance {
    pub id: u64,
    pub image: SyntheticImage,
    pub question: Vec<usize>,
    /// Training target (most frequent annotation).
    pub answer: Vec<usize>,
    pub answers: Vec<String>,
    pub docs: Vec<PreparedDoc>,
    pub scores: Vec<f64>,
    pub flags: Vec<bool>,
}

/// Memoized frozen encoder states keyed by input content. The hyper encoder
/// has no trainable inputs, so reusing its states leaves values and gradients unchanged.
#[derive(Default)]
pub struct StateMemo {
    map: HashMap<(Vec<u32>, Vec<usize>), Tensor>,
}

impl StateMemo {
    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

fn memo_key(image: Option<&SyntheticImage>, tokens: &[usize], tag: usize) -> (Vec<u32>, Vec<usize>) {
    let mut codes: Vec<u32> = image.map(|i| i.codes().to_vec()).unwrap_or_default();
    codes.push(u32::MAX - tag as u32);
    (codes, tokens.to_vec())
}

fn states(
    g: &mut Graph,
    memo: Option<&mut StateMemo>,
    key: (Vec<u32>, Vec<usize>),
    compute: impl FnOnce(&mut Graph) -> Result<Var>,
) -> Result<Var> {
    match memo {
        None => compute(g),
        Some(m) => {
            if let Some(t) = m.map.get(&key) {
                return Ok(g.constant(t.clone()));
            }
            let v = compute(g)?;
            m.map.insert(key, g.value(v).clone());
            Ok(v)
        }
    }
}

/// Source of pre-computed document prompts (the pre-saved cache).
pub trait DocPromptSource {
    fn doc_prompt(&mut self, id: u64) -> Result<Tensor>;
}

/// Trainable RACC parameters: prompt bank, DCSE block, RGCA stack and MLPs.
#[derive(Clone, Debug)]
pub struct Racc {
    config: RaccConfig,
    params: ParamSet,
    bank: PromptBank,
    dcse: CrossAttentionBlock,
    rgca: RgcaStack,
    mlps: MlpSet,
    d_hyper: usize,
    d_base: usize,
}

impl Racc {
    /// Builds randomly initialized parameters for the given widths.
    pub fn with_dims(config: RaccConfig, d_hyper: usize, d_base: usize, m: usize) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut ps = ParamSet::new();
        let bank = PromptBank::random(&mut ps, config.l_d, config.l_vq, d_hyper, &mut rng)?;
        let dcse = CrossAttentionBlock::new(&mut ps, "dcse", d_hyper, config.agg_heads, false, &mut rng)?;
        let rgca = RgcaStack::new(&mut ps, config.n_r, d_hyper, config.agg_heads, &mut rng)?;
        let hidden = if config.mlp_hidden == 0 { 2 * d_hyper } else { config.mlp_hidden };
        let mlps = MlpSet::new(&mut ps, m, d_hyper, hidden, d_base, &mut rng)?;
        Ok(Self {
            config,
            params: ps,
            bank,
            dcse,
            rgca,
            mlps,
            d_hyper,
            d_base,
        })
    }

    /// Fresh parameters for a hyper/base pair; prompts use hard-prompt embeddings when PIPE is on.
    pub fn new(config: RaccConfig, frozen: Frozen<'_>, vocab: &Vocabulary) -> Result<Self> {
        let mut r = Self::with_dims(
            config,
            frozen.hyper.config().d_model,
            frozen.base.config().d_model,
            frozen.base.config().n_layers(),
        )?;
        if r.config.toggles.pipe {
            let mut scratch = ParamSet::new();
            let b = PromptBank::pipe_init(
                &mut scratch,
                HARD_PROMPT_DOC,
                HARD_PROMPT_VQ,
                vocab,
                frozen.hyper,
                r.config.l_d,
                r.config.l_vq,
            )?;
            r.params.set(r.bank.theta_d, scratch.get(b.theta_d).clone());
            r.params.set(r.bank.theta_vq, scratch.get(b.theta_vq).clone());
        }
        Ok(r)
    }

    pub fn config(&self) -> &RaccConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn bank(&self) -> PromptBank {
        self.bank
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.d_hyper, self.d_base, self.mlps.len())
    }

    pub fn theta_d(&self) -> &Tensor {
        self.params.get(self.bank.theta_d)
    }

    fn check(&self, frozen: Frozen<'_>) -> Result<()> {
        let (h, b) = (frozen.hyper.config(), frozen.base.config());
        if h.d_model != self.d_hyper || b.d_model != self.d_base {
            return Err(shape_err(
                "racc",
                format!(
                    "parameters built for widths {}/{} but models have {}/{}",
                    self.d_hyper, self.d_base, h.d_model, b.d_model
                ),
            ));
        }
        if b.n_layers() != self.mlps.len() {
            return Err(Error::PrefixLayers {
                expected: b.n_layers(),
                got: self.mlps.len(),
            });
        }
        Ok(())
    }

    /// Runs compression, PRDB (training only), DCSE, RGCA and the MLPs.
    /// Returns the per-layer prefix for the base model.
    #[allow(clippy::too_many_arguments)]
    pub fn modulation(
        &self,
        g: &mut Graph,
        p: &Bound,
        hp: &Bound,
        frozen: Frozen<'_>,
        inst: &PreparedInstance,
        training: bool,
        mut memo: Option<&mut StateMemo>,
        cache: Option<&mut dyn DocPromptSource>,
    ) -> Result<Vec<(Var, Var)>> {
        self.check(frozen)?;
        let k = inst.docs.len();
        if k == 0 {
            return Err(Error::EmptyInput("retrieved documents"));
        }
        if inst.scores.len() != k || (training && inst.flags.len() != k) {
            return Err(Error::LengthMismatch(format!(
                "{k} documents, {} scores, {} flags",
                inst.scores.len(),
                inst.flags.len()
            )));
        }
        let t = self.config.toggles;
        let hyper = frozen.hyper;
        let theta_d = p[self.bank.theta_d];
        let theta_vq = p[self.bank.theta_vq];

        let mut docs = Vec::with_capacity(k);
        match cache {
            Some(src) => {
                for d in &inst.docs {
                    docs.push(g.constant(src.doc_prompt(d.id)?));
                }
            }
            None => {
                for d in &inst.docs {
                    let s = states(g, memo.as_deref_mut(), memo_key(d.image.as_ref(), &d.tokens, 0), |g| {
                        encode_document(hyper, g, hp, &d.tokens, d.image.as_ref())
                    })?;
                    docs.push(compress_states(hyper, g, hp, s, theta_d)?);
                }
            }
        }
        if training && t.prdb {
            docs = prdb_gate(g, &docs, &inst.flags)?;
        }

        let img = Some(&inst.image);
        let q = Some(inst.question.as_slice());
        let joint = states(g, memo.as_deref_mut(), memo_key(img, &inst.question, 1), |g| {
            encode_vq(hyper, g, hp, img, q)
        })?;
        let theta_vq_i = compress_states(hyper, g, hp, joint, theta_vq)?;

        if t.dcse {
            let sv = states(g, memo.as_deref_mut(), memo_key(img, &[], 2), |g| {
                encode_vq(hyper, g, hp, img, None)
            })?;
            let sq = states(g, memo, memo_key(None, &inst.question, 3), |g| {
                encode_vq(hyper, g, hp, None, q)
            })?;
            let theta_v = compress_states(hyper, g, hp, sv, theta_vq)?;
            let theta_q = compress_states(hyper, g, hp, sq, theta_vq)?;
            docs = dcse_enhance(&self.dcse, g, p, &docs, theta_v, theta_q)?;
        }

        let scores = t.rgca.then_some(inst.scores.as_slice());
        let star = rgca_forward(&self.rgca, g, p, theta_vq_i, &docs, scores)?;
        generate_modulation(&self.mlps, g, p, star)
    }

    /// Teacher-forced answer loss for one instance.
    #[allow(clippy::too_many_arguments)]
    pub fn loss(
        &self,
        g: &mut Graph,
        p: &Bound,
        hp: &Bound,
        bp: &Bound,
        frozen: Frozen<'_>,
        inst: &PreparedInstance,
        training: bool,
        memo: Option<&mut StateMemo>,
    ) -> Result<Var> {
        let prefix = self.modulation(g, p, hp, frozen, inst, training, memo, None)?;
        let input = BaseInput {
            image: &inst.image,
            question: &inst.question,
            context: &[],
        };
        let out = frozen.base.base_forward(g, bp, &input, Some(&prefix), &inst.answer)?;
        lm_loss(g, out.logits, &out.targets)
    }

    /// The materialized prefix for one instance.
    pub fn prefix(
        &self,
        frozen: Frozen<'_>,
        inst: &PreparedInstance,
        cache: Option<&mut dyn DocPromptSource>,
    ) -> Result<PrefixKv> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let hp = frozen.hyper.bind(&mut g, false);
        let kv = self.modulation(&mut g, &p, &hp, frozen, inst, false, None, cache)?;
        Ok(PrefixKv {
            layers: kv
                .into_iter()
                .map(|(k, v)| (g.value(k).clone(), g.value(v).clone()))
                .collect(),
        })
    }

    /// Greedy answer tokens. Deterministic.
    pub fn answer(
        &self,
        frozen: Frozen<'_>,
        inst: &PreparedInstance,
        cache: Option<&mut dyn DocPromptSource>,
    ) -> Result<Vec<usize>> {
        let prefix = self.prefix(frozen, inst, cache)?;
        let input = BaseInput {
            image: &inst.image,
            question: &inst.question,
            context: &[],
        };
        frozen.base.generate(&input, Some(&prefix), self.config.max_answer_len)
    }
}

/// Mean cross-entropy over answer positions; other positions must be `None`.
pub fn lm_loss(g: &mut Graph, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
    if targets.iter().all(Option::is_none) {
        return Err(Error::EmptyInput("answer"));
    }
    g.cross_entropy(logits, targets)
}
