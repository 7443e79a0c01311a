//! Small frozen transformers standing in for the compression (hyper) and
//! answering (base) models.

pub mod image;
pub mod layers;
pub mod model;
pub mod pretrain;
pub mod vocab;

pub use image::SyntheticImage;
pub use model::{ArchKind, BaseInput, BaseOutput, ModelConfig, PrefixKv, Segment, TinyLm};
pub use pretrain::{pretrain, qa_accuracy_with_context, PretrainConfig};
pub use vocab::Vocabulary;
