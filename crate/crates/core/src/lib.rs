//! Geometric preprocessing for video-based 3D scene understanding.
//!
//! The crate turns RGB-D video into inputs a video language model can use:
//!
//! - [`geometry`]: pinhole back-projection of depth into world coordinates.
//! - [`coverage`]: per-frame voxel sets and scene coverage ratios.
//! - [`sampler`]: greedy maximum-coverage and uniform frame selection.
//! - [`posenc`]: patch coordinate pooling, sinusoidal/MLP 3D position
//!   encodings, and fusion with visual features.
//! - [`grounding`]: proposal embeddings, contrastive and BCE objectives with
//!   exact gradients, selection rules, and 3D IoU metrics.
//! - [`ingest`]: ScanNet-style scene loading and synthetic box-world scenes.

pub mod coverage;
pub mod error;
pub mod formats;
pub mod geometry;
pub mod grounding;
pub mod ingest;
pub mod io;
pub mod mlp;
pub mod pipeline;
pub mod posenc;
pub mod sampler;
pub mod tensor;

pub use error::{Error, Result};
