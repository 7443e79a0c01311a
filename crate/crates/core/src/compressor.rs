//! Soft-prompt compression of documents and image/question pairs.

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::numerics::{Bound, Graph, ParamId, ParamSet, Tensor, Var};
use crate::tinylm::{Segment, SyntheticImage, TinyLm, Vocabulary};

pub const HARD_PROMPT_DOC: &str = "Summarize the key information of the given passage in a concise manner.";
pub const HARD_PROMPT_VQ: &str = "Summarize the image and the question in a concise manner.";

/// Lowercases and splits trailing punctuation so free text matches the word vocabulary.
pub fn normalize_text(text: &str) -> String {
    let mut out = String::with_capacity(text.len() + 8);
    for ch in text.chars() {
        if matches!(ch, '.' | ',' | '?' | '!') {
            out.push(' ');
            out.push(ch);
            out.push(' ');
        } else {
            out.extend(ch.to_lowercase());
        }
    }
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Learnable prompt matrices fed to the hyper decoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PromptBank {
    pub theta_d: ParamId,
    pub theta_vq: ParamId,
    pub l_d: usize,
    pub l_vq: usize,
}

impl PromptBank {
    /// Gaussian initialization with the same scale as token embeddings.
    pub fn random<R: Rng + ?Sized>(ps: &mut ParamSet, l_d: usize, l_vq: usize, d: usize, rng: &mut R) -> Result<Self> {
        if l_d == 0 || l_vq == 0 {
            return Err(Error::EmptyInput("learnable prompts"));
        }
        let theta_d = ps.add("theta_d", Tensor::randn(&[l_d, d], 1.0, rng));
        let theta_vq = ps.add("theta_vq", Tensor::randn(&[l_vq, d], 1.0, rng));
        Ok(Self {
            theta_d,
            theta_vq,
            l_d,
            l_vq,
        })
    }

    /// Rows copied from the hyper model's embeddings of two hard prompts.
    pub fn pipe_init(
        ps: &mut ParamSet,
        hard_d: &str,
        hard_vq: &str,
        vocab: &Vocabulary,
        hyper: &TinyLm,
        l_d: usize,
        l_vq: usize,
    ) -> Result<Self> {
        let rows = |text: &str, l: usize| -> Result<Tensor> {
            let ids = vocab.tokenize(&normalize_text(text))?;
            let emb = ids
                .iter()
                .map(|&i| hyper.token_embedding(i))
                .collect::<Result<Vec<_>>>()?;
            pipe_rows(&emb, l)
        };
        let theta_d = ps.add("theta_d", rows(hard_d, l_d)?);
        let theta_vq = ps.add("theta_vq", rows(hard_vq, l_vq)?);
        Ok(Self {
            theta_d,
            theta_vq,
            l_d,
            l_vq,
        })
    }
}

/// `l` rows from the given embeddings: truncated when longer, cycled when shorter.
pub fn pipe_rows(embeddings: &[Vec<f64>], l: usize) -> Result<Tensor> {
    if embeddings.is_empty() {
        return Err(Error::EmptyInput("hard prompt"));
    }
    if l == 0 {
        return Err(Error::EmptyInput("learnable prompts"));
    }
    let rows: Vec<Vec<f64>> = (0..l).map(|i| embeddings[i % embeddings.len()].clone()).collect();
    Tensor::from_rows(&rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SourceKind {
    Document,
    JointVq,
    Vision,
    Question,
}

/// A materialized compressed prompt, `[L, d_hyper]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CompressedPrompt {
    pub rows: Tensor,
    pub source_kind: SourceKind,
    pub source_id: u64,
}

/// Frozen hyper encoder states for a document (text plus optional patches).
pub fn encode_document(
    hyper: &TinyLm,
    g: &mut Graph,
    hp: &Bound,
    tokens: &[usize],
    image: Option<&SyntheticImage>,
) -> Result<Var> {
    if tokens.is_empty() {
        return Err(Error::EmptyInput("document"));
    }
    let mut segs = Vec::with_capacity(2);
    if let Some(img) = image {
        segs.push(Segment::Image(img));
    }
    segs.push(Segment::Tokens(tokens));
    let x = hyper.embed_sequence(g, hp, &segs)?;
    hyper.hyper_encode(g, hp, x)
}

/// Encoder states for the joint input (both parts) or one decoupled part.
pub fn encode_vq(
    hyper: &TinyLm,
    g: &mut Graph,
    hp: &Bound,
    image: Option<&SyntheticImage>,
    question: Option<&[usize]>,
) -> Result<Var> {
    let mut segs = Vec::with_capacity(2);
    if let Some(img) = image {
        segs.push(Segment::Image(img));
    }
    if let Some(q) = question {
        if q.is_empty() {
            return Err(Error::EmptyInput("question"));
        }
        segs.push(Segment::Tokens(q));
    }
    let x = hyper.embed_sequence(g, hp, &segs)?;
    hyper.hyper_encode(g, hp, x)
}

/// Decodes learnable prompts `theta` against encoder `states`.
pub fn compress_states(hyper: &TinyLm, g: &mut Graph, hp: &Bound, states: Var, theta: Var) -> Result<Var> {
    hyper.hyper_decode(g, hp, states, theta)
}

pub fn compress_document(
    hyper: &TinyLm,
    g: &mut Graph,
    hp: &Bound,
    theta_d: Var,
    tokens: &[usize],
    image: Option<&SyntheticImage>,
) -> Result<Var> {
    let s = encode_document(hyper, g, hp, tokens, image)?;
    compress_states(hyper, g, hp, s, theta_d)
}

pub fn compress_joint(
    hyper: &TinyLm,
    g: &mut Graph,
    hp: &Bound,
    theta_vq: Var,
    image: &SyntheticImage,
    question: &[usize],
) -> Result<Var> {
    let s = encode_vq(hyper, g, hp, Some(image), Some(question))?;
    compress_states(hyper, g, hp, s, theta_vq)
}

/// Compresses exactly one of `image` or `question` with the shared `theta_vq`.
pub fn compress_decoupled(
    hyper: &TinyLm,
    g: &mut Graph,
    hp: &Bound,
    theta_vq: Var,
    image: Option<&SyntheticImage>,
    question: Option<&[usize]>,
) -> Result<Var> {
    if image.is_some() == question.is_some() {
        return Err(Error::Config(
            "decoupled compression takes exactly one of image or question".into(),
        ));
    }
    let s = encode_vq(hyper, g, hp, image, question)?;
    compress_states(hyper, g, hp, s, theta_vq)
}

/// Cuts the backward path through prompts whose flag is false. Forward values are untouched.
pub fn prdb_gate(g: &mut Graph, prompts: &[Var], flags: &[bool]) -> Result<Vec<Var>> {
    if prompts.len() != flags.len() {
        return Err(Error::LengthMismatch(format!(
            "{} prompts but {} relevance flags",
            prompts.len(),
            flags.len()
        )));
    }
    prompts
        .iter()
        .zip(flags)
        .map(|(&p, &keep)| if keep { Ok(p) } else { g.stop_gradient(p) })
        .collect()
}

/// Compresses one document outside any training graph.
pub fn compress_document_value(
    hyper: &TinyLm,
    theta_d: &Tensor,
    id: u64,
    tokens: &[usize],
    image: Option<&SyntheticImage>,
) -> Result<CompressedPrompt> {
    if theta_d.shape().get(1) != Some(&hyper.config().d_model) {
        return Err(shape_err("compress_document", format!("theta_d has shape {:?}", theta_d.shape())));
    }
    let mut g = Graph::new();
    let hp = hyper.bind(&mut g, false);
    let t = g.constant(theta_d.clone());
    let out = compress_document(hyper, &mut g, &hp, t, tokens, image)?;
    Ok(CompressedPrompt {
        rows: g.value(out).clone(),
        source_kind: SourceKind::Document,
        source_id: id,
    })
}
