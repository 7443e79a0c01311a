//! Turns the aggregated image-question prompt into per-layer key/value
//! prefixes for the frozen base model, and trains everything in between.

mod pipeline;
mod snapshot;
mod train;

pub use pipeline::{lm_loss, DocPromptSource, Frozen, PreparedDoc, PreparedInstance, Racc, RaccConfig, StateMemo, Toggles};
pub use train::{prepare_instances, train, train_step, TrainConfig, Variant};

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Bound, Graph, ParamSet, Var};
use crate::tinylm::layers::Linear;

/// One two-layer perceptron per base layer, `d_hyper -> hidden -> 2 * d_base`.
#[derive(Clone, Debug)]
pub struct MlpSet {
    layers: Vec<(Linear, Linear)>,
    d_base: usize,
}

impl MlpSet {
    /// The output layers start at zero, so the initial prefix is all zeros.
    pub fn new<R: Rng + ?Sized>(
        ps: &mut ParamSet,
        m: usize,
        d_hyper: usize,
        hidden: usize,
        d_base: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if m == 0 || hidden == 0 {
            return Err(Error::Config("the MLP set needs at least one layer and a positive width".into()));
        }
        let layers = (0..m)
            .map(|l| {
                (
                    Linear::new(ps, &format!("mlp{l}.up"), d_hyper, hidden, true, rng),
                    Linear::zeros(ps, &format!("mlp{l}.out"), hidden, 2 * d_base, true),
                )
            })
            .collect();
        Ok(Self { layers, d_base })
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

/// Per-layer `(keys, values)`, each `[L_vq, d_base]`; heads are column blocks.
pub fn generate_modulation(mlps: &MlpSet, g: &mut Graph, p: &Bound, theta_vq_star: Var) -> Result<Vec<(Var, Var)>> {
    let d = mlps.d_base;
    mlps.layers
        .iter()
        .map(|(up, out)| {
            let h = up.forward(g, p, theta_vq_star)?;
            let h = g.relu(h)?;
            let kv = out.forward(g, p, h)?;
            Ok((g.slice(kv, 1, 0, d)?, g.slice(kv, 1, d, d)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn modulation_shapes_and_zero_start() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (d_hyper, d_base) in [(64, 64), (64, 96)] {
            let mut ps = ParamSet::new();
            let mlps = MlpSet::new(&mut ps, 4, d_hyper, 2 * d_hyper, d_base, &mut rng).unwrap();
            let mut g = Graph::new();
            let p = ps.bind(&mut g, true);
            let x = g.constant(Tensor::randn(&[12, d_hyper], 1.0, &mut rng));
            let kv = generate_modulation(&mlps, &mut g, &p, x).unwrap();
            assert_eq!(kv.len(), 4);
            for (k, v) in kv {
                assert_eq!(g.value(k).shape(), &[12, d_base]);
                assert_eq!(g.value(v).shape(), &[12, d_base]);
                assert!(g.value(k).data().iter().all(|&x| x == 0.0));
            }
        }
    }
}
