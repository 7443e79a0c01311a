//! Synthetic task generation, frozen retrieval and pseudo-relevance labeling.

pub mod io;
pub mod retriever;
pub mod task;

pub use retriever::{label_pseudo_relevance, prrecall_at_k, RetrievedSet, Retriever};
pub use task::{generate_task, Document, Task, TaskConfig, VqaInstance};
