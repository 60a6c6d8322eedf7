//! Engine for the distorted-spatial-relationship oddity benchmark.
//!
//! The crate generates global-structure-distorted images by Gram-matrix texture
//! synthesis on a seeded random-filter network, scores feature extractors on a
//! three-alternative oddity task, and ships the analysis instruments used
//! alongside it: per-channel Top-K activation sparsity, PCA figure/ground
//! probing, and per-head score sweeps.

pub mod dtf;
pub mod error;
pub mod featnet;
pub mod harness;
pub mod image;
pub mod oddity;
pub mod probe;
pub mod real;
pub mod scenes;
pub mod synth;
pub mod tensor;
pub mod topk;

pub use error::{Error, Result};
pub use featnet::{ActivationStack, FeatureNet, FeatureNetSpec, Gram, LayerSpec};
pub use image::ImageRgb;
pub use oddity::{DisrtReport, GroupKey, TrialFeatures};
pub use probe::{PcaBasis, SeparabilityReport};
pub use synth::{SynthesisConfig, SynthesisResult};
pub use tensor::{cosine_distance, Tensor};
pub use topk::TopKConfig;
