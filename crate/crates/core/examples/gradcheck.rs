//! Compares reverse-mode gradients against central finite differences
//! for a small attention-like composition.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use racc::numerics::gradcheck::{numeric_gradient, relative_error};
use racc::numerics::{Graph, Tensor, Var};

fn attention(g: &mut Graph, q: Var, k: Var, v: Var) -> racc::Result<Var> {
    let kt = g.transpose(k)?;
    let logits = g.matmul(q, kt)?;
    let logits = g.scale(logits, 0.5)?;
    let w = g.softmax(logits)?;
    let out = g.matmul(w, v)?;
    let out = g.layer_norm(out)?;
    g.cross_entropy(out, &[Some(1), Some(0), None])
}

fn main() -> racc::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let q = Tensor::randn(&[3, 4], 1.0, &mut rng);
    let k = Tensor::randn(&[5, 4], 1.0, &mut rng);
    let v = Tensor::randn(&[5, 4], 1.0, &mut rng);

    let mut g = Graph::new();
    let qv = g.param(q.clone());
    let kv = g.constant(k.clone());
    let vv = g.constant(v.clone());
    let loss = attention(&mut g, qv, kv, vv)?;
    println!("loss {:.6}", g.value(loss).item());
    let analytic = g.backward(loss)?.wrt(qv);

    let numeric = numeric_gradient(
        |t| {
            let mut g = Graph::new();
            let (a, b, c) = (g.constant(t.clone()), g.constant(k.clone()), g.constant(v.clone()));
            let l = attention(&mut g, a, b, c)?;
            Ok(g.value(l).item())
        },
        &q,
        1e-5,
    )?;
    println!("analytic dL/dq:\n{:?}", analytic.data());
    println!("relative error vs finite differences: {:.2e}", relative_error(&analytic, &numeric));
    Ok(())
}
