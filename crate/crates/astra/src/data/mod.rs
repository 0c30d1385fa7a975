//! Dataset IO: embedding manifests, the synthetic generator, and clip
//! iteration.

pub mod clips;
pub mod manifest;
pub mod synthetic;

pub use clips::{eval_window_starts, train_clip_starts, Dataset};
pub use manifest::{load_embeddings, DatasetManifest, EmbeddingManifest, TimelineSource};
pub use synthetic::{generate_synthetic, GeneratedDataset, JitterSidecar, SyntheticSpec};
