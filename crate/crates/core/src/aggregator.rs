//! Query-enhanced document prompts and retrieval-guided cross-attention.

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::numerics::{Bound, Graph, ParamSet, Tensor, Var};
use crate::tinylm::layers::{AttnExtras, MultiHeadAttention, Norm};

/// Residual multi-head cross-attention with a zero-initialized output
/// projection and an optional layer norm after the residual.
#[derive(Clone, Debug)]
pub struct CrossAttentionBlock {
    pub attn: MultiHeadAttention,
    pub post_norm: Option<Norm>,
}

impl CrossAttentionBlock {
    pub fn new<R: Rng + ?Sized>(
        ps: &mut ParamSet,
        name: &str,
        d: usize,
        n_heads: usize,
        post_norm: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if n_heads == 0 || !d.is_multiple_of(n_heads) {
            return Err(Error::Config(format!("width {d} is not divisible by {n_heads} heads")));
        }
        let attn = MultiHeadAttention::new(ps, &format!("{name}.attn"), d, n_heads, true, rng);
        let post_norm = post_norm.then(|| Norm::new(ps, &format!("{name}.norm"), d));
        Ok(Self { attn, post_norm })
    }

    pub fn n_heads(&self) -> usize {
        self.attn.n_heads
    }

    /// Returns the block output and the per-head attention probabilities.
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        query: Var,
        context: Var,
        gate: Option<&Tensor>,
    ) -> Result<(Var, Vec<Var>)> {
        let (qd, cd) = (g.value(query).dims2()?.1, g.value(context).dims2()?.1);
        if qd != self.attn.d_model || cd != self.attn.d_model {
            return Err(shape_err(
                "cross-attention",
                format!("query width {qd} and context width {cd}, block width {}", self.attn.d_model),
            ));
        }
        let extras = AttnExtras {
            gate,
            ..Default::default()
        };
        let a = self.attn.forward(g, p, query, context, &extras)?;
        let mut out = g.add(query, a.out)?;
        if let Some(n) = &self.post_norm {
            out = n.forward(g, p, out)?;
        }
        Ok((out, a.probs))
    }
}

/// Document prompts attend to the decoupled image and question prompts.
/// Output blocks have the same shapes as the input blocks.
pub fn dcse_enhance(
    block: &CrossAttentionBlock,
    g: &mut Graph,
    p: &Bound,
    doc_prompts: &[Var],
    theta_v: Var,
    theta_q: Var,
) -> Result<Vec<Var>> {
    if doc_prompts.is_empty() {
        return Err(Error::EmptyInput("document prompts"));
    }
    let lens: Vec<usize> = doc_prompts.iter().map(|&d| g.value(d).shape()[0]).collect();
    let docs = g.concat(doc_prompts, 0)?;
    let ctx = g.concat(&[theta_v, theta_q], 0)?;
    let (out, _) = block.forward(g, p, docs, ctx, None)?;
    let mut start = 0;
    lens.iter()
        .map(|&l| {
            let s = g.slice(out, 0, start, l);
            start += l;
            s
        })
        .collect()
}

/// Tiles each document's score over its key columns: `[n_heads, l_query, sum(doc_lens)]`.
pub fn broadcast_scores(scores: &[f64], n_heads: usize, l_query: usize, doc_lens: &[usize]) -> Result<Tensor> {
    if scores.len() != doc_lens.len() {
        return Err(Error::LengthMismatch(format!(
            "{} scores for {} documents",
            scores.len(),
            doc_lens.len()
        )));
    }
    if let Some(&bad) = scores.iter().find(|&&s| s.is_nan() || s <= 0.0) {
        return Err(Error::NonPositiveScore(bad));
    }
    let row: Vec<f64> = scores
        .iter()
        .zip(doc_lens)
        .flat_map(|(&s, &l)| std::iter::repeat_n(s, l))
        .collect();
    let cols = row.len();
    let mut data = Vec::with_capacity(n_heads * l_query * cols);
    for _ in 0..n_heads * l_query {
        data.extend_from_slice(&row);
    }
    Tensor::new(&[n_heads, l_query, cols], data)
}

/// `n_r` gated cross-attention blocks with the image-question prompt as the running query.
#[derive(Clone, Debug)]
pub struct RgcaStack {
    pub blocks: Vec<CrossAttentionBlock>,
}

impl RgcaStack {
    pub fn new<R: Rng + ?Sized>(
        ps: &mut ParamSet,
        n_r: usize,
        d: usize,
        n_heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if n_r == 0 {
            return Err(Error::Config("at least one aggregation block is required".into()));
        }
        let blocks = (0..n_r)
            .map(|i| CrossAttentionBlock::new(ps, &format!("rgca{i}"), d, n_heads, true, rng))
            .collect::<Result<_>>()?;
        Ok(Self { blocks })
    }
}

/// Aggregates document prompts into `theta_vq`. `scores = None` disables gating.
pub fn rgca_forward(
    stack: &RgcaStack,
    g: &mut Graph,
    p: &Bound,
    theta_vq: Var,
    docs: &[Var],
    scores: Option<&[f64]>,
) -> Result<Var> {
    if docs.is_empty() {
        return Err(Error::EmptyInput("document prompts"));
    }
    let lens: Vec<usize> = docs.iter().map(|&d| g.value(d).shape()[0]).collect();
    let ctx = g.concat(docs, 0)?;
    let l_query = g.value(theta_vq).dims2()?.0;
    let mut q = theta_vq;
    for block in &stack.blocks {
        let gate = scores
            .map(|s| broadcast_scores(s, block.n_heads(), l_query, &lens))
            .transpose()?;
        q = block.forward(g, p, q, ctx, gate.as_ref())?.0;
    }
    Ok(q)
}

/// Softmax of one logit row after score gating, summed per document.
pub fn gated_attention_mass(logits: &[f64], scores: &[f64], doc_lens: &[usize]) -> Result<Vec<f64>> {
    let gate = broadcast_scores(scores, 1, 1, doc_lens)?;
    if gate.numel() != logits.len() {
        return Err(shape_err(
            "gated_attention_mass",
            format!("{} logits for {} key columns", logits.len(), gate.numel()),
        ));
    }
    let mut g = Graph::new();
    let l = g.constant(Tensor::new(&[1, logits.len()], logits.to_vec())?);
    let gv = g.constant(gate.reshape(&[1, logits.len()])?);
    let sim = g.mul(l, gv)?;
    let probs = g.softmax(sim)?;
    let w = g.value(probs).data();
    let mut start = 0;
    Ok(doc_lens
        .iter()
        .map(|&len| {
            let m = w[start..start + len].iter().sum();
            start += len;
            m
        })
        .collect())
}
