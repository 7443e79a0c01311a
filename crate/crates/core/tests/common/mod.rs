#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use racc::aggregator::{dcse_enhance, rgca_forward, CrossAttentionBlock, RgcaStack};
use racc::compressor::{compress_states, encode_document, encode_vq, PromptBank};
use racc::modulator::{
    generate_modulation, lm_loss, prepare_instances, Frozen, MlpSet, PreparedInstance, Racc, RaccConfig,
};
use racc::numerics::gradcheck::{numeric_gradient, relative_error};
use racc::numerics::{Bound, Graph, OpKind, ParamSet, Tensor, Var};
use racc::retrieval::{generate_task, Retriever, TaskConfig};
use racc::tinylm::{BaseInput, ModelConfig, TinyLm, Vocabulary};
use racc::Result;

pub const EPS: f64 = 1e-5;

pub fn rand_t(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Values bounded away from zero so relu has no kink inside the probe window.
pub fn away_from_zero(shape: &[usize], seed: u64) -> Tensor {
    rand_t(shape, seed).map(|v| if v.abs() < 0.1 { v.signum() * 0.1 + v } else { v })
}

/// `sum(weights * op(x, others...))` so every output element carries a distinct weight.
fn weighted_loss(g: &mut Graph, x: Var, op: &OpKind, others: &[Tensor], weights: &Tensor, x_first: bool) -> Result<Var> {
    let other_vars: Vec<Var> = others.iter().map(|t| g.constant(t.clone())).collect();
    let mut inputs = Vec::new();
    if x_first {
        inputs.push(x);
        inputs.extend(other_vars);
    } else {
        inputs.extend(other_vars);
        inputs.push(x);
    }
    let y = g.apply(op.clone(), &inputs)?;
    if g.value(y).numel() == 1 {
        return Ok(y);
    }
    let w = g.constant(weights.clone());
    let prod = g.mul(y, w)?;
    g.sum(prod)
}

/// Relative error between the analytic and central-difference gradient of one op.
pub fn check_op(op: OpKind, x: Tensor, others: Vec<Tensor>, x_first: bool, seed: u64) -> f64 {
    let mut probe = Graph::new();
    let xv = probe.constant(x.clone());
    let mut inputs: Vec<Var> = others.iter().map(|t| probe.constant(t.clone())).collect();
    if x_first {
        inputs.insert(0, xv);
    } else {
        inputs.push(xv);
    }
    let out = probe.apply(op.clone(), &inputs).unwrap();
    let weights = rand_t(probe.value(out).shape(), seed);

    let mut g = Graph::new();
    let xv = g.param(x.clone());
    let loss = weighted_loss(&mut g, xv, &op, &others, &weights, x_first).unwrap();
    let analytic = g.backward(loss).unwrap().wrt(xv);
    let numeric = numeric_gradient(
        |t| {
            let mut g = Graph::new();
            let xv = g.constant(t.clone());
            let l = weighted_loss(&mut g, xv, &op, &others, &weights, x_first)?;
            Ok(g.value(l).item())
        },
        &x,
        EPS,
    )
    .unwrap();
    relative_error(&analytic, &numeric)
}

pub type OpCase = (&'static str, OpKind, Tensor, Vec<Tensor>, bool);

/// One case per op, with both operand positions for binary ops.
pub fn op_cases() -> Vec<OpCase> {
    vec![
        ("matmul lhs", OpKind::Matmul, rand_t(&[3, 4], 1), vec![rand_t(&[4, 2], 2)], true),
        ("matmul rhs", OpKind::Matmul, rand_t(&[4, 2], 3), vec![rand_t(&[3, 4], 4)], false),
        ("add", OpKind::Add, rand_t(&[3, 4], 5), vec![rand_t(&[3, 4], 6)], true),
        ("add bias", OpKind::Add, rand_t(&[4], 7), vec![rand_t(&[3, 4], 8)], false),
        ("mul", OpKind::Mul, rand_t(&[3, 4], 9), vec![rand_t(&[3, 4], 10)], true),
        ("mul broadcast", OpKind::Mul, rand_t(&[4], 11), vec![rand_t(&[3, 4], 12)], false),
        ("concat axis0", OpKind::Concat { axis: 0 }, rand_t(&[2, 3], 13), vec![rand_t(&[4, 3], 14)], true),
        ("concat axis1", OpKind::Concat { axis: 1 }, rand_t(&[2, 3], 15), vec![rand_t(&[2, 5], 16)], false),
        ("slice rows", OpKind::Slice { axis: 0, start: 1, len: 2 }, rand_t(&[4, 3], 17), vec![], true),
        ("slice cols", OpKind::Slice { axis: 1, start: 2, len: 3 }, rand_t(&[3, 6], 18), vec![], true),
        ("transpose", OpKind::Transpose, rand_t(&[3, 5], 19), vec![], true),
        ("softmax", OpKind::Softmax, rand_t(&[3, 5], 20), vec![], true),
        ("layer_norm", OpKind::LayerNorm { eps: 1e-5 }, rand_t(&[3, 6], 21), vec![], true),
        ("relu", OpKind::Relu, away_from_zero(&[3, 4], 22), vec![], true),
        (
            "embedding_lookup",
            OpKind::EmbeddingLookup { ids: vec![2, 0, 2, 4] },
            rand_t(&[5, 3], 23),
            vec![],
            true,
        ),
        (
            "cross_entropy",
            OpKind::CrossEntropy { targets: vec![Some(1), None, Some(3)] },
            rand_t(&[3, 5], 24),
            vec![],
            true,
        ),
        ("scale", OpKind::Scale(-1.7), rand_t(&[2, 3], 25), vec![], true),
        ("sum", OpKind::Sum, rand_t(&[2, 3], 26), vec![], true),
    ]
}

/// A width-8, single-head model with one encoder and one decoder layer.
pub fn micro_model(vocab_size: usize, seed: u64) -> TinyLm {
    let mut cfg = ModelConfig::hyper(vocab_size);
    cfg.d_model = 8;
    cfg.n_heads = 1;
    cfg.n_enc_layers = 1;
    cfg.n_dec_layers = 1;
    cfg.d_ff = 16;
    TinyLm::new(cfg, seed).unwrap()
}

pub fn micro_racc_config() -> RaccConfig {
    RaccConfig {
        l_d: 2,
        l_vq: 3,
        n_r: 2,
        agg_heads: 1,
        mlp_hidden: 8,
        max_answer_len: 2,
        seed: 3,
        ..Default::default()
    }
}

/// A small task, a micro model used as both hyper and base, and a few instances with `k` documents.
pub struct Micro {
    pub vocab: Vocabulary,
    pub model: TinyLm,
    pub instances: Vec<PreparedInstance>,
}

impl Micro {
    pub fn new(k: usize) -> Self {
        let task = generate_task(&TaskConfig {
            n_entities: 6,
            n_attributes: 2,
            n_instances: 12,
            ..Default::default()
        })
        .unwrap();
        let vocab = task.vocabulary().unwrap();
        let model = micro_model(vocab.len(), 21);
        let r = Retriever::new(&task.corpus, &vocab, task.config.n_patches, 64, 1).unwrap();
        let instances = prepare_instances(&task.train, &task.corpus, &r, &vocab, k).unwrap();
        Self { vocab, model, instances }
    }

    pub fn frozen(&self) -> Frozen<'_> {
        Frozen {
            hyper: &self.model,
            base: &self.model,
        }
    }

    /// RACC parameters with every tensor replaced by Gaussian noise, so
    /// zero-initialized projections do not hide any gradient path.
    pub fn perturbed_racc(&self, config: RaccConfig, scale: f64, seed: u64) -> Racc {
        let mut racc = Racc::new(config, self.frozen(), &self.vocab).unwrap();
        perturb(racc.params_mut(), scale, seed);
        racc
    }
}

pub fn perturb(ps: &mut ParamSet, scale: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = ps.ids().collect();
    for id in ids {
        let shape = ps.get(id).shape().to_vec();
        ps.set(id, Tensor::randn(&shape, scale, &mut rng));
    }
}

/// Training loss of one instance with the current parameters.
pub fn racc_loss_value(racc: &Racc, frozen: Frozen<'_>, inst: &PreparedInstance) -> Result<f64> {
    let mut g = Graph::new();
    let p = racc.params().bind(&mut g, false);
    let hp = frozen.hyper.bind(&mut g, false);
    let bp = frozen.base.bind(&mut g, false);
    let l = racc.loss(&mut g, &p, &hp, &bp, frozen, inst, true, None)?;
    Ok(g.value(l).item())
}

/// Analytic gradient of the training loss for every RACC parameter, in declaration order.
pub fn racc_gradients(racc: &Racc, frozen: Frozen<'_>, inst: &PreparedInstance) -> Result<(f64, Vec<Tensor>)> {
    let mut g = Graph::new();
    let p = racc.params().bind(&mut g, true);
    let hp = frozen.hyper.bind(&mut g, false);
    let bp = frozen.base.bind(&mut g, false);
    let l = racc.loss(&mut g, &p, &hp, &bp, frozen, inst, true, None)?;
    let value = g.value(l).item();
    let grads = g.backward(l)?;
    Ok((value, p.vars().iter().map(|&v| grads.wrt(v)).collect()))
}

/// Worst relative error over all RACC parameter tensors between the analytic
/// and central-difference gradients. Returns `(worst, name of worst)`.
pub fn racc_gradcheck(racc: &Racc, frozen: Frozen<'_>, inst: &PreparedInstance) -> (f64, String) {
    let (_, analytic) = racc_gradients(racc, frozen, inst).unwrap();
    let ids: Vec<_> = racc.params().ids().collect();
    let mut worst = (0.0, String::new());
    for (id, a) in ids.into_iter().zip(&analytic) {
        let mut probe = racc.clone();
        let numeric = numeric_gradient(
            |t| {
                probe.params_mut().set(id, t.clone());
                racc_loss_value(&probe, frozen, inst)
            },
            racc.params().get(id),
            EPS,
        )
        .unwrap();
        let err = relative_error(a, &numeric);
        if err > worst.0 {
            worst = (err, racc.params().name(id).to_string());
        }
    }
    worst
}

/// The same parameter layout as a [`Racc`] built from `config`, assembled from the public components.
pub struct Parts {
    pub ps: ParamSet,
    pub bank: PromptBank,
    pub dcse: CrossAttentionBlock,
    pub rgca: RgcaStack,
    pub mlps: MlpSet,
}

impl Parts {
    pub fn matching(racc: &Racc) -> Self {
        let c = racc.config();
        let (dh, db, m) = racc.dims();
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        let mut ps = ParamSet::new();
        let bank = PromptBank::random(&mut ps, c.l_d, c.l_vq, dh, &mut rng).unwrap();
        let dcse = CrossAttentionBlock::new(&mut ps, "dcse", dh, c.agg_heads, false, &mut rng).unwrap();
        let rgca = RgcaStack::new(&mut ps, c.n_r, dh, c.agg_heads, &mut rng).unwrap();
        let hidden = if c.mlp_hidden == 0 { 2 * dh } else { c.mlp_hidden };
        let mlps = MlpSet::new(&mut ps, m, dh, hidden, db, &mut rng).unwrap();
        assert_eq!(ps.names(), racc.params().names());
        let ids: Vec<_> = ps.ids().collect();
        for id in ids {
            ps.set(id, racc.params().get(id).clone());
        }
        Self {
            ps,
            bank,
            dcse,
            rgca,
            mlps,
        }
    }

    /// Full-method loss where the compressed prompts of unflagged documents are
    /// computed from a constant copy of `theta_d`, so no path from them reaches it.
    pub fn reduced_loss(&self, g: &mut Graph, p: &Bound, hp: &Bound, bp: &Bound, frozen: Frozen<'_>, inst: &PreparedInstance) -> Var {
        let hyper = frozen.hyper;
        let detached = g.constant(self.ps.get(self.bank.theta_d).clone());
        let docs: Vec<Var> = inst
            .docs
            .iter()
            .zip(&inst.flags)
            .map(|(d, &flag)| {
                let s = encode_document(hyper, g, hp, &d.tokens, d.image.as_ref()).unwrap();
                let theta = if flag { p[self.bank.theta_d] } else { detached };
                compress_states(hyper, g, hp, s, theta).unwrap()
            })
            .collect();
        let theta_vq = p[self.bank.theta_vq];
        let img = Some(&inst.image);
        let q = Some(inst.question.as_slice());
        let joint = encode_vq(hyper, g, hp, img, q).unwrap();
        let joint = compress_states(hyper, g, hp, joint, theta_vq).unwrap();
        let sv = encode_vq(hyper, g, hp, img, None).unwrap();
        let sq = encode_vq(hyper, g, hp, None, q).unwrap();
        let theta_v = compress_states(hyper, g, hp, sv, theta_vq).unwrap();
        let theta_q = compress_states(hyper, g, hp, sq, theta_vq).unwrap();
        let docs = dcse_enhance(&self.dcse, g, p, &docs, theta_v, theta_q).unwrap();
        let star = rgca_forward(&self.rgca, g, p, joint, &docs, Some(&inst.scores)).unwrap();
        let prefix = generate_modulation(&self.mlps, g, p, star).unwrap();
        let input = BaseInput {
            image: &inst.image,
            question: &inst.question,
            context: &[],
        };
        let out = frozen.base.base_forward(g, bp, &input, Some(&prefix), &inst.answer).unwrap();
        lm_loss(g, out.logits, &out.targets).unwrap()
    }

    /// `(loss, d loss / d theta_d)` of the reduced graph.
    pub fn reduced_theta_d_gradient(&self, frozen: Frozen<'_>, inst: &PreparedInstance) -> (f64, Tensor) {
        let mut g = Graph::new();
        let p = self.ps.bind(&mut g, true);
        let hp = frozen.hyper.bind(&mut g, false);
        let bp = frozen.base.bind(&mut g, false);
        let l = self.reduced_loss(&mut g, &p, &hp, &bp, frozen, inst);
        let value = g.value(l).item();
        let grads = g.backward(l).unwrap();
        (value, grads.wrt(p[self.bank.theta_d]))
    }
}

/// Brute-force soft VQA accuracy.
pub fn vqa_oracle(prediction: &str, answers: &[String]) -> f64 {
    let mut count = 0;
    for a in answers {
        if a == prediction {
            count += 1;
        }
    }
    if count >= 3 {
        1.0
    } else {
        count as f64 / 3.0
    }
}
