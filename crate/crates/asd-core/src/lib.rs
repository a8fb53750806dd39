//! Anomalous sound detection on synthetic machine audio.
//!
//! The toolkit trains a reconstruction autoencoder for anomaly scoring and a
//! discriminative embedder over the same clips, then smooths each clip's
//! score with its nearest neighbors in the embedding space. A GMM inlier
//! model over the embeddings serves as the baseline that smoothing is
//! designed to avoid: smoothing reuses the generative scores and only
//! borrows the embedding geometry, so it cannot invert a ranking the way an
//! inlier model can when the observed normals drift far from training.

pub mod ae;
pub mod config;
pub mod corpus;
pub mod disc;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod gmm;
pub mod net;
pub mod parallel;
pub mod pipeline;
pub mod smooth;
pub mod table;

pub use error::{Error, Result};
