//! Transformer building blocks expressed as graph compositions.

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::numerics::{Bound, Graph, ParamId, ParamSet, Tensor, Var};

/// Large negative logit used for masked attention entries.
pub const MASKED: f64 = -1e9;

fn init_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    Tensor::randn(&[rows, cols], 1.0 / (rows as f64).sqrt(), rng)
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        ps: &mut ParamSet,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let w = ps.add(format!("{name}.w"), init_matrix(d_in, d_out, rng));
        let b = bias.then(|| ps.add(format!("{name}.b"), Tensor::zeros(&[d_out])));
        Self { w, b }
    }

    /// Zero weights and bias; the layer starts out as the constant zero map.
    pub fn zeros(ps: &mut ParamSet, name: &str, d_in: usize, d_out: usize, bias: bool) -> Self {
        let w = ps.add(format!("{name}.w"), Tensor::zeros(&[d_in, d_out]));
        let b = bias.then(|| ps.add(format!("{name}.b"), Tensor::zeros(&[d_out])));
        Self { w, b }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let y = g.matmul(x, p[self.w])?;
        match self.b {
            Some(b) => g.add(y, p[b]),
            None => Ok(y),
        }
    }
}

/// Layer normalization with learned gain and bias.
#[derive(Clone, Debug)]
pub struct Norm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl Norm {
    pub fn new(ps: &mut ParamSet, name: &str, d: usize) -> Self {
        Self {
            gain: ps.add(format!("{name}.gain"), Tensor::ones(&[d])),
            bias: ps.add(format!("{name}.bias"), Tensor::zeros(&[d])),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let n = g.layer_norm(x)?;
        let n = g.mul(n, p[self.gain])?;
        g.add(n, p[self.bias])
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new<R: Rng + ?Sized>(ps: &mut ParamSet, name: &str, d: usize, d_ff: usize, rng: &mut R) -> Self {
        Self {
            up: Linear::new(ps, &format!("{name}.up"), d, d_ff, true, rng),
            down: Linear::new(ps, &format!("{name}.down"), d_ff, d, true, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let h = self.up.forward(g, p, x)?;
        let h = g.relu(h)?;
        self.down.forward(g, p, h)
    }
}

/// Optional extras for one attention call.
#[derive(Default)]
pub struct AttnExtras<'a> {
    /// Key/value rows prepended to the projected keys and values, `[L, d]` each.
    pub prefix: Option<(Var, Var)>,
    /// Multiplicative gate on the scaled logits, `[heads, q_len, k_len]`.
    pub gate: Option<&'a Tensor>,
    /// Additive mask on the logits after gating, `[q_len, k_len]` (prefix columns included).
    pub mask: Option<&'a Tensor>,
}

/// Multi-head attention without biases; heads are contiguous column blocks.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub n_heads: usize,
    pub d_model: usize,
    pub scale: f64,
}

/// Attention output together with the per-head probability matrices.
pub struct AttnOutput {
    pub out: Var,
    pub probs: Vec<Var>,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(
        ps: &mut ParamSet,
        name: &str,
        d_model: usize,
        n_heads: usize,
        zero_out: bool,
        rng: &mut R,
    ) -> Self {
        let wq = ps.add(format!("{name}.wq"), init_matrix(d_model, d_model, rng));
        let wk = ps.add(format!("{name}.wk"), init_matrix(d_model, d_model, rng));
        let wv = ps.add(format!("{name}.wv"), init_matrix(d_model, d_model, rng));
        let wo_init = if zero_out {
            Tensor::zeros(&[d_model, d_model])
        } else {
            init_matrix(d_model, d_model, rng)
        };
        let wo = ps.add(format!("{name}.wo"), wo_init);
        Self {
            wq,
            wk,
            wv,
            wo,
            n_heads,
            d_model,
            scale: 1.0 / ((d_model / n_heads) as f64).sqrt(),
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        query: Var,
        context: Var,
        extras: &AttnExtras<'_>,
    ) -> Result<AttnOutput> {
        let dh = self.d_model / self.n_heads;
        let q = g.matmul(query, p[self.wq])?;
        let mut k = g.matmul(context, p[self.wk])?;
        let mut v = g.matmul(context, p[self.wv])?;
        if let Some((pk, pv)) = extras.prefix {
            k = g.concat(&[pk, k], 0)?;
            v = g.concat(&[pv, v], 0)?;
        }
        let q_len = g.value(q).shape()[0];
        let k_len = g.value(k).shape()[0];
        if let Some(gate) = extras.gate {
            if gate.shape() != [self.n_heads, q_len, k_len] {
                return Err(shape_err(
                    "attention gate",
                    format!("expected [{}, {q_len}, {k_len}], got {:?}", self.n_heads, gate.shape()),
                ));
            }
        }
        let mask = match extras.mask {
            Some(m) if m.shape() != [q_len, k_len] => {
                return Err(shape_err(
                    "attention mask",
                    format!("expected [{q_len}, {k_len}], got {:?}", m.shape()),
                ))
            }
            Some(m) => Some(g.constant(m.clone())),
            None => None,
        };
        let kt = g.transpose(k)?;
        let mut heads = Vec::with_capacity(self.n_heads);
        let mut probs = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let qh = g.slice(q, 1, h * dh, dh)?;
            let kh = g.slice(kt, 0, h * dh, dh)?;
            let vh = g.slice(v, 1, h * dh, dh)?;
            let sim = g.matmul(qh, kh)?;
            let mut sim = g.scale(sim, self.scale)?;
            if let Some(gate) = extras.gate {
                let per_head = q_len * k_len;
                let slab = gate.data()[h * per_head..(h + 1) * per_head].to_vec();
                let gv = g.constant(Tensor::new(&[q_len, k_len], slab)?);
                sim = g.mul(sim, gv)?;
            }
            if let Some(m) = mask {
                sim = g.add(sim, m)?;
            }
            let attn = g.softmax(sim)?;
            heads.push(g.matmul(attn, vh)?);
            probs.push(attn);
        }
        let merged = g.concat(&heads, 1)?;
        let out = g.matmul(merged, p[self.wo])?;
        Ok(AttnOutput { out, probs })
    }
}

/// Fixed sinusoidal position table `[len, d]`.
pub fn sinusoidal_positions(len: usize, d: usize) -> Tensor {
    let mut data = Vec::with_capacity(len * d);
    for pos in 0..len {
        for i in 0..d {
            let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = pos as f64 * rate;
            data.push(if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    Tensor::new(&[len, d], data).expect("positive position table")
}

/// Causal mask over `prefix_len` always-visible columns followed by `len` sequence columns.
pub fn causal_mask(len: usize, prefix_len: usize) -> Tensor {
    let cols = prefix_len + len;
    let mut data = vec![0.0; len * cols];
    for i in 0..len {
        for j in (i + 1)..len {
            data[i * cols + prefix_len + j] = MASKED;
        }
    }
    Tensor::new(&[len, cols], data).expect("positive mask")
}
