//! Retrieval-guided cross-attention: how retrieval scores reshape attention.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use racc::aggregator::{gated_attention_mass, rgca_forward, RgcaStack};
use racc::numerics::{Graph, ParamSet, Tensor};

fn main() -> racc::Result<()> {
    let logits = [1.2, 0.8, 1.0, 1.1, 0.9, 1.0];
    let lens = [2, 2, 2];
    for scores in [[1.0, 1.0, 1.0], [0.9, 0.5, 0.2], [0.2, 0.5, 0.9]] {
        let mass = gated_attention_mass(&logits, &scores, &lens)?;
        println!("scores {scores:?} -> attention mass per document {:.3?}", mass);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ps = ParamSet::new();
    let stack = RgcaStack::new(&mut ps, 3, 16, 4, &mut rng)?;
    let mut g = Graph::new();
    let p = ps.bind(&mut g, false);
    let query = g.constant(Tensor::randn(&[12, 16], 1.0, &mut rng));
    let docs: Vec<_> = (0..5).map(|_| g.constant(Tensor::randn(&[16, 16], 1.0, &mut rng))).collect();
    let out = rgca_forward(&stack, &mut g, &p, query, &docs, Some(&[0.9, 0.8, 0.6, 0.55, 0.5]))?;
    println!("aggregated prompt shape {:?}", g.value(out).shape());
    Ok(())
}
