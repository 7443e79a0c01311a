//! Turns an aggregated prompt into per-layer key/value prefixes and shows
//! that they steer a frozen base model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use racc::modulator::{generate_modulation, MlpSet};
use racc::numerics::{Graph, ParamSet, Tensor};
use racc::retrieval::{generate_task, TaskConfig};
use racc::tinylm::{BaseInput, ModelConfig, PrefixKv, TinyLm};

fn main() -> racc::Result<()> {
    let task = generate_task(&TaskConfig::default())?;
    let vocab = task.vocabulary()?;
    let base = TinyLm::new(ModelConfig::hetero_base(vocab.len()), 2)?;
    let m = base.config().n_layers();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut ps = ParamSet::new();
    let mlps = MlpSet::new(&mut ps, m, 64, 128, base.config().d_model, &mut rng)?;

    let prefix_for = |ps: &ParamSet, star: &Tensor| -> racc::Result<PrefixKv> {
        let mut g = Graph::new();
        let p = ps.bind(&mut g, false);
        let s = g.constant(star.clone());
        let kv = generate_modulation(&mlps, &mut g, &p, s)?;
        Ok(PrefixKv {
            layers: kv.into_iter().map(|(k, v)| (g.value(k).clone(), g.value(v).clone())).collect(),
        })
    };
    let star = Tensor::randn(&[12, 64], 1.0, &mut rng);
    let prefix = prefix_for(&ps, &star)?;
    println!(
        "{} layers of keys {:?} / values {:?}; all zero at init: {}",
        prefix.n_layers(),
        prefix.layers[0].0.shape(),
        prefix.layers[0].1.shape(),
        prefix.layers.iter().all(|(k, v)| k.norm() == 0.0 && v.norm() == 0.0)
    );

    // move the zero-initialized output layers to see the prefix take effect
    let ids: Vec<_> = ps.ids().collect();
    for id in ids {
        let shape = ps.get(id).shape().to_vec();
        ps.set(id, Tensor::randn(&shape, 0.5, &mut rng));
    }
    let live = prefix_for(&ps, &star)?;
    let inst = &task.val[0];
    let q = vocab.tokenize(&inst.question)?;
    let input = BaseInput {
        image: &inst.image,
        question: &q,
        context: &[],
    };
    println!("without prefix: `{}`", vocab.detokenize(&base.generate(&input, None, 4)?));
    println!("with prefix:    `{}`", vocab.detokenize(&base.generate(&input, Some(&live), 4)?));
    Ok(())
}
