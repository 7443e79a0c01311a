use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::numerics::{Bound, Graph, ParamId, ParamSet, Tensor, Var};
use crate::tinylm::image::SyntheticImage;
use crate::tinylm::layers::{
    causal_mask, sinusoidal_positions, AttnExtras, FeedForward, MultiHeadAttention, Norm,
};
use crate::tinylm::vocab::{BOS, EOS, SEP};

const SNAPSHOT_MAGIC: &[u8; 4] = b"TLM1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArchKind {
    EncoderDecoder,
    DecoderOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: ArchKind,
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub d_ff: usize,
    pub n_patches: usize,
    pub patch_width: usize,
}

impl ModelConfig {
    /// Encoder-decoder used for compression (and as the base model in the homo variant).
    pub fn hyper(vocab_size: usize) -> Self {
        Self {
            arch: ArchKind::EncoderDecoder,
            vocab_size,
            d_model: 64,
            n_heads: 4,
            n_enc_layers: 2,
            n_dec_layers: 2,
            d_ff: 128,
            n_patches: 8,
            patch_width: 8,
        }
    }

    /// Wider decoder-only base model for the hetero variant.
    pub fn hetero_base(vocab_size: usize) -> Self {
        Self {
            arch: ArchKind::DecoderOnly,
            vocab_size,
            d_model: 96,
            n_heads: 4,
            n_enc_layers: 0,
            n_dec_layers: 4,
            d_ff: 128,
            n_patches: 8,
            patch_width: 8,
        }
    }

    /// Number of attention layers that receive a key/value prefix.
    pub fn n_layers(&self) -> usize {
        self.n_enc_layers + self.n_dec_layers
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad("d_model must be divisible by n_heads");
        }
        if self.n_dec_layers == 0 {
            return bad("at least one decoder layer is required");
        }
        match self.arch {
            ArchKind::EncoderDecoder if self.n_enc_layers == 0 => {
                return bad("encoder-decoder needs encoder layers")
            }
            ArchKind::DecoderOnly if self.n_enc_layers != 0 => {
                return bad("decoder-only models have no encoder layers")
            }
            _ => {}
        }
        if self.vocab_size <= SEP || self.d_ff == 0 || self.n_patches == 0 || self.patch_width == 0 {
            return bad("vocab, d_ff and patch grid must be positive");
        }
        Ok(())
    }
}

/// Per-layer key/value prefix tensors, `[L, d_model]` each.
#[derive(Clone, Debug, PartialEq)]
pub struct PrefixKv {
    pub layers: Vec<(Tensor, Tensor)>,
}

impl PrefixKv {
    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn len(&self) -> usize {
        self.layers.first().map_or(0, |(k, _)| k.shape()[0])
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bind(&self, g: &mut Graph) -> Vec<(Var, Var)> {
        self.layers
            .iter()
            .map(|(k, v)| (g.constant(k.clone()), g.constant(v.clone())))
            .collect()
    }
}

/// One piece of a mixed input sequence.
#[derive(Clone, Copy, Debug)]
pub enum Segment<'a> {
    Tokens(&'a [usize]),
    Image(&'a SyntheticImage),
}

/// What the base model reads before answering. `context` is the in-context
/// knowledge (empty when knowledge arrives through a prefix instead).
#[derive(Clone, Copy, Debug)]
pub struct BaseInput<'a> {
    pub image: &'a SyntheticImage,
    pub question: &'a [usize],
    pub context: &'a [usize],
}

/// Teacher-forced output of the base model.
pub struct BaseOutput {
    /// `[positions, vocab]`
    pub logits: Var,
    /// Answer token expected at each position, `None` where the loss is masked.
    pub targets: Vec<Option<usize>>,
    /// Self-attention probabilities, per prefixed layer then per head.
    pub self_attention: Vec<Vec<Var>>,
}

#[derive(Clone, Debug)]
struct EncoderLayer {
    norm1: Norm,
    attn: MultiHeadAttention,
    norm2: Norm,
    ff: FeedForward,
}

#[derive(Clone, Debug)]
struct DecoderLayer {
    norm1: Norm,
    self_attn: MultiHeadAttention,
    cross: Option<(Norm, MultiHeadAttention)>,
    norm2: Norm,
    ff: FeedForward,
}

/// Small pre-norm transformer, either encoder-decoder or decoder-only.
#[derive(Clone, Debug)]
pub struct TinyLm {
    config: ModelConfig,
    params: ParamSet,
    tok_emb: ParamId,
    img_proj: ParamId,
    encoder: Vec<EncoderLayer>,
    enc_norm: Option<Norm>,
    decoder: Vec<DecoderLayer>,
    dec_norm: Norm,
    head: ParamId,
}

impl TinyLm {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut rng;
        let d = config.d_model;
        let mut ps = ParamSet::new();
        let tok_emb = ps.add("tok_emb", Tensor::randn(&[config.vocab_size, d], 1.0, rng));
        let img_proj = ps.add(
            "img_proj",
            Tensor::randn(&[config.patch_width, d], 1.0, rng),
        );
        let encoder = (0..config.n_enc_layers)
            .map(|i| {
                let n = format!("enc{i}");
                EncoderLayer {
                    norm1: Norm::new(&mut ps, &format!("{n}.norm1"), d),
                    attn: MultiHeadAttention::new(&mut ps, &format!("{n}.attn"), d, config.n_heads, false, rng),
                    norm2: Norm::new(&mut ps, &format!("{n}.norm2"), d),
                    ff: FeedForward::new(&mut ps, &format!("{n}.ff"), d, config.d_ff, rng),
                }
            })
            .collect();
        let enc_norm = (config.arch == ArchKind::EncoderDecoder).then(|| Norm::new(&mut ps, "enc_norm", d));
        let decoder = (0..config.n_dec_layers)
            .map(|i| {
                let n = format!("dec{i}");
                let norm1 = Norm::new(&mut ps, &format!("{n}.norm1"), d);
                let self_attn =
                    MultiHeadAttention::new(&mut ps, &format!("{n}.self_attn"), d, config.n_heads, false, rng);
                let cross = (config.arch == ArchKind::EncoderDecoder).then(|| {
                    (
                        Norm::new(&mut ps, &format!("{n}.norm_cross"), d),
                        MultiHeadAttention::new(&mut ps, &format!("{n}.cross_attn"), d, config.n_heads, false, rng),
                    )
                });
                DecoderLayer {
                    norm1,
                    self_attn,
                    cross,
                    norm2: Norm::new(&mut ps, &format!("{n}.norm2"), d),
                    ff: FeedForward::new(&mut ps, &format!("{n}.ff"), d, config.d_ff, rng),
                }
            })
            .collect();
        let dec_norm = Norm::new(&mut ps, "dec_norm", d);
        let head = ps.add(
            "head",
            Tensor::randn(&[d, config.vocab_size], 1.0 / (d as f64).sqrt(), rng),
        );
        Ok(Self {
            config,
            params: ps,
            tok_emb,
            img_proj,
            encoder,
            enc_norm,
            decoder,
            dec_norm,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        self.params.bind(g, trainable)
    }

    /// Raw token embedding rows (used to seed learnable prompts).
    pub fn token_embedding(&self, id: usize) -> Result<Vec<f64>> {
        let table = self.params.get(self.tok_emb);
        if id >= self.config.vocab_size {
            return Err(shape_err("token_embedding", format!("id {id} out of range")));
        }
        Ok(table.row(id).to_vec())
    }

    pub fn embed_tokens(&self, g: &mut Graph, p: &Bound, ids: &[usize]) -> Result<Var> {
        g.embedding(p[self.tok_emb], ids)
    }

    /// Frozen linear projection of the patch grid, `[patches, d_model]`.
    pub fn embed_image(&self, g: &mut Graph, p: &Bound, img: &SyntheticImage) -> Result<Var> {
        if img.patch_width() != self.config.patch_width {
            return Err(shape_err(
                "embed_image",
                format!("patch width {} but model expects {}", img.patch_width(), self.config.patch_width),
            ));
        }
        if img.n_patches() != self.config.n_patches {
            return Err(shape_err(
                "embed_image",
                format!("{} patches but model expects {}", img.n_patches(), self.config.n_patches),
            ));
        }
        let f = g.constant(img.features().clone());
        g.matmul(f, p[self.img_proj])
    }

    pub fn embed_sequence(&self, g: &mut Graph, p: &Bound, segments: &[Segment<'_>]) -> Result<Var> {
        let mut parts = Vec::with_capacity(segments.len());
        for s in segments {
            match s {
                Segment::Tokens([]) => {}
                Segment::Tokens(ids) => parts.push(self.embed_tokens(g, p, ids)?),
                Segment::Image(img) => parts.push(self.embed_image(g, p, img)?),
            }
        }
        if parts.is_empty() {
            return Err(Error::EmptyInput("model input sequence"));
        }
        g.concat(&parts, 0)
    }

    fn with_positions(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (len, d) = g.value(x).dims2()?;
        if d != self.config.d_model {
            return Err(shape_err(
                "model input",
                format!("width {d} but the model has d_model {}", self.config.d_model),
            ));
        }
        let pos = g.constant(sinusoidal_positions(len, d));
        g.add(x, pos)
    }

    fn check_prefix(&self, prefix: Option<&[(Var, Var)]>, g: &Graph) -> Result<()> {
        let Some(prefix) = prefix else { return Ok(()) };
        if prefix.len() != self.config.n_layers() {
            return Err(Error::PrefixLayers {
                expected: self.config.n_layers(),
                got: prefix.len(),
            });
        }
        let first = g.value(prefix[0].0).shape().to_vec();
        for (k, v) in prefix {
            let (ks, vs) = (g.value(*k).shape(), g.value(*v).shape());
            if ks != first.as_slice() || vs != first.as_slice() || first.get(1) != Some(&self.config.d_model) {
                return Err(shape_err(
                    "prefix",
                    format!("layers must all be [L, {}], got {ks:?}/{vs:?}", self.config.d_model),
                ));
            }
        }
        Ok(())
    }

    /// Bidirectional encoder stack; `prefixes` must hold one entry per encoder layer.
    pub fn encode(&self, g: &mut Graph, p: &Bound, x: Var, prefixes: Option<&[(Var, Var)]>) -> Result<Var> {
        let enc_norm = self
            .enc_norm
            .as_ref()
            .ok_or_else(|| Error::Config("decoder-only model has no encoder".into()))?;
        let mut h = self.with_positions(g, x)?;
        for (i, layer) in self.encoder.iter().enumerate() {
            let n = layer.norm1.forward(g, p, h)?;
            let extras = AttnExtras {
                prefix: prefixes.map(|pr| pr[i]),
                ..Default::default()
            };
            let a = layer.attn.forward(g, p, n, n, &extras)?;
            h = g.add(h, a.out)?;
            let n = layer.norm2.forward(g, p, h)?;
            let f = layer.ff.forward(g, p, n)?;
            h = g.add(h, f)?;
        }
        enc_norm.forward(g, p, h)
    }

    /// Causal decoder stack. Returns final hidden states and per-layer self-attention probabilities.
    pub fn decode(
        &self,
        g: &mut Graph,
        p: &Bound,
        x: Var,
        memory: Option<Var>,
        prefixes: Option<&[(Var, Var)]>,
    ) -> Result<(Var, Vec<Vec<Var>>)> {
        let mut h = self.with_positions(g, x)?;
        let len = g.value(h).shape()[0];
        let prefix_len = prefixes.map_or(0, |pr| g.value(pr[0].0).shape()[0]);
        let mask = causal_mask(len, prefix_len);
        let mut probs = Vec::with_capacity(self.decoder.len());
        for (i, layer) in self.decoder.iter().enumerate() {
            let n = layer.norm1.forward(g, p, h)?;
            let extras = AttnExtras {
                prefix: prefixes.map(|pr| pr[i]),
                mask: Some(&mask),
                ..Default::default()
            };
            let a = layer.self_attn.forward(g, p, n, n, &extras)?;
            probs.push(a.probs);
            h = g.add(h, a.out)?;
            if let Some((norm, cross)) = &layer.cross {
                let mem = memory.ok_or_else(|| Error::Config("encoder-decoder decode needs memory".into()))?;
                let n = norm.forward(g, p, h)?;
                let c = cross.forward(g, p, n, mem, &AttnExtras::default())?;
                h = g.add(h, c.out)?;
            }
            let n = layer.norm2.forward(g, p, h)?;
            let f = layer.ff.forward(g, p, n)?;
            h = g.add(h, f)?;
        }
        Ok((self.dec_norm.forward(g, p, h)?, probs))
    }

    pub fn lm_head(&self, g: &mut Graph, p: &Bound, h: Var) -> Result<Var> {
        g.matmul(h, p[self.head])
    }

    /// Encoder hidden states for a mixed token/patch sequence, `[len, d_model]`.
    pub fn hyper_encode(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        if self.config.arch != ArchKind::EncoderDecoder {
            return Err(Error::Config("compression needs an encoder-decoder model".into()));
        }
        self.encode(g, p, x, None)
    }

    /// Runs the frozen decoder over learnable prompt rows against encoder states.
    /// Output is `[prompt_len, d_model]`.
    pub fn hyper_decode(&self, g: &mut Graph, p: &Bound, states: Var, prompts: Var) -> Result<Var> {
        let (len, width) = g.value(prompts).dims2()?;
        if len == 0 {
            return Err(Error::EmptyInput("learnable prompts"));
        }
        if width != self.config.d_model {
            return Err(shape_err(
                "hyper_decode",
                format!("prompt width {width} but the model has d_model {}", self.config.d_model),
            ));
        }
        Ok(self.decode(g, p, prompts, Some(states), None)?.0)
    }

    fn input_segments<'a>(input: &BaseInput<'a>) -> Vec<Segment<'a>> {
        let mut segs = vec![Segment::Image(input.image), Segment::Tokens(input.question)];
        if !input.context.is_empty() {
            segs.push(Segment::Tokens(&[SEP]));
            segs.push(Segment::Tokens(input.context));
        }
        segs
    }

    /// Teacher-forced answer logits with an optional per-layer key/value prefix.
    pub fn base_forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        input: &BaseInput<'_>,
        prefix: Option<&[(Var, Var)]>,
        answer: &[usize],
    ) -> Result<BaseOutput> {
        self.check_prefix(prefix, g)?;
        let mut dec_in = vec![BOS];
        dec_in.extend_from_slice(answer);
        let mut answer_targets: Vec<Option<usize>> = answer.iter().map(|&a| Some(a)).collect();
        answer_targets.push(Some(EOS));
        let n_enc = self.config.n_enc_layers;
        match self.config.arch {
            ArchKind::EncoderDecoder => {
                let x = self.embed_sequence(g, p, &Self::input_segments(input))?;
                let memory = self.encode(g, p, x, prefix.map(|pr| &pr[..n_enc]))?;
                let y = self.embed_tokens(g, p, &dec_in)?;
                let (h, probs) = self.decode(g, p, y, Some(memory), prefix.map(|pr| &pr[n_enc..]))?;
                let logits = self.lm_head(g, p, h)?;
                Ok(BaseOutput {
                    logits,
                    targets: answer_targets,
                    self_attention: probs,
                })
            }
            ArchKind::DecoderOnly => {
                let mut segs = Self::input_segments(input);
                segs.push(Segment::Tokens(&dec_in));
                let x = self.embed_sequence(g, p, &segs)?;
                let total = g.value(x).shape()[0];
                let (h, probs) = self.decode(g, p, x, None, prefix)?;
                let logits = self.lm_head(g, p, h)?;
                let mut targets = vec![None; total - dec_in.len()];
                targets.extend(answer_targets);
                Ok(BaseOutput {
                    logits,
                    targets,
                    self_attention: probs,
                })
            }
        }
    }

    /// Greedy decoding until `<eos>` or `max_len` tokens. Deterministic.
    pub fn generate(&self, input: &BaseInput<'_>, prefix: Option<&PrefixKv>, max_len: usize) -> Result<Vec<usize>> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let prefix_vars = prefix.map(|pk| pk.bind(&mut g));
        self.generate_in(&mut g, &p, input, prefix_vars.as_deref(), max_len)
    }

    /// Greedy decoding inside an existing graph whose prefix is already bound.
    pub fn generate_in(
        &self,
        g: &mut Graph,
        p: &Bound,
        input: &BaseInput<'_>,
        prefix: Option<&[(Var, Var)]>,
        max_len: usize,
    ) -> Result<Vec<usize>> {
        self.check_prefix(prefix, g)?;
        let n_enc = self.config.n_enc_layers;
        let mut out: Vec<usize> = Vec::new();
        let memory = match self.config.arch {
            ArchKind::EncoderDecoder => {
                let x = self.embed_sequence(g, p, &Self::input_segments(input))?;
                Some(self.encode(g, p, x, prefix.map(|pr| &pr[..n_enc]))?)
            }
            ArchKind::DecoderOnly => None,
        };
        let dec_prefix = prefix.map(|pr| &pr[n_enc..]);
        while out.len() < max_len {
            let mut dec_in = vec![BOS];
            dec_in.extend_from_slice(&out);
            let x = match memory {
                Some(_) => self.embed_tokens(g, p, &dec_in)?,
                None => {
                    let mut segs = Self::input_segments(input);
                    segs.push(Segment::Tokens(&dec_in));
                    self.embed_sequence(g, p, &segs)?
                }
            };
            let (h, _) = self.decode(g, p, x, memory, dec_prefix)?;
            let rows = g.value(h).shape()[0];
            let last = g.slice(h, 0, rows - 1, 1)?;
            let logits = self.lm_head(g, p, last)?;
            let next = argmax(g.value(logits).data());
            if next == EOS {
                break;
            }
            out.push(next);
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Snapshot layout: magic `TLM1`, config record, raw `f64` parameters in declaration order.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(SNAPSHOT_MAGIC)?;
        let c = &self.config;
        w.write_u32::<LittleEndian>(match c.arch {
            ArchKind::EncoderDecoder => 0,
            ArchKind::DecoderOnly => 1,
        })?;
        for v in [
            c.vocab_size,
            c.d_model,
            c.n_heads,
            c.n_enc_layers,
            c.n_dec_layers,
            c.d_ff,
            c.n_patches,
            c.patch_width,
        ] {
            w.write_u32::<LittleEndian>(v as u32)?;
        }
        self.params.write_raw(w)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != SNAPSHOT_MAGIC {
            return Err(Error::Format {
                what: "model snapshot",
                detail: format!("bad magic {magic:?}"),
            });
        }
        let arch = match r.read_u32::<LittleEndian>()? {
            0 => ArchKind::EncoderDecoder,
            1 => ArchKind::DecoderOnly,
            other => {
                return Err(Error::Format {
                    what: "model snapshot",
                    detail: format!("unknown architecture tag {other}"),
                })
            }
        };
        let mut f = [0usize; 8];
        for v in f.iter_mut() {
            *v = r.read_u32::<LittleEndian>()? as usize;
        }
        let config = ModelConfig {
            arch,
            vocab_size: f[0],
            d_model: f[1],
            n_heads: f[2],
            n_enc_layers: f[3],
            n_dec_layers: f[4],
            d_ff: f[5],
            n_patches: f[6],
            patch_width: f[7],
        };
        let mut model = Self::new(config, 0)?;
        model.params.read_raw(r)?;
        Ok(model)
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
