use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Result};
use crate::numerics::Tensor;

/// Symbolic stand-in for an image: a grid of patches, each identified by an
/// integer code and rendered as a fixed `±1/sqrt(w)` feature vector.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticImage {
    codes: Vec<u32>,
    features: Tensor,
}

const CODE_STREAM: u64 = 0x5eed_1a6e;

fn patch_features(code: u32, width: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(CODE_STREAM ^ u64::from(code));
    let amp = 1.0 / (width as f64).sqrt();
    (0..width)
        .map(|_| if rng.gen::<bool>() { amp } else { -amp })
        .collect()
}

impl SyntheticImage {
    /// Patch codes `entity * n_patches + i`, so every entity has its own patch set.
    pub fn for_entity(entity: usize, n_patches: usize, patch_width: usize) -> Self {
        let codes = (0..n_patches)
            .map(|i| (entity * n_patches + i) as u32)
            .collect();
        Self::from_codes(codes, patch_width).expect("non-empty patch grid")
    }

    pub fn from_codes(codes: Vec<u32>, patch_width: usize) -> Result<Self> {
        if codes.is_empty() || patch_width == 0 {
            return Err(shape_err("image", "empty patch grid"));
        }
        let data: Vec<f64> = codes.iter().flat_map(|&c| patch_features(c, patch_width)).collect();
        let features = Tensor::new(&[codes.len(), patch_width], data)?;
        Ok(Self { codes, features })
    }

    pub fn codes(&self) -> &[u32] {
        &self.codes
    }

    pub fn n_patches(&self) -> usize {
        self.codes.len()
    }

    pub fn patch_width(&self) -> usize {
        self.features.shape()[1]
    }

    /// `[patches, patch_width]`
    pub fn features(&self) -> &Tensor {
        &self.features
    }
}
