//! Test-oracle toolkit for GUI glitch detection.
//!
//! The pipeline: a miniature deterministic render simulator injects real
//! render-pipeline fault patterns (disabled cameras, broken clear flags,
//! stale post effects) to synthesize labeled glitch screenshots; heuristic
//! pixel rules provide a second glitch source; a from-scratch CNN with
//! reverse-mode autodiff learns to classify screenshots as normal or glitch;
//! and input-gradient saliency maps localize the glitch region.
//!
//! The numeric core is generic over the scalar type ([`Scalar`]): production
//! runs in `f32` (the default type parameter everywhere), while verification
//! code instantiates `f64` where finite-difference comparisons need the
//! headroom.

pub mod adam;
pub mod augment;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod image;
pub mod layers;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod rendersim;
pub mod rng;
pub mod saliency;
pub mod scalar;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use image::{ImageRGB, Mask};
pub use manifest::{DatasetManifest, Generator, GlitchClass, Label, SampleRecord};
pub use model::{Model, ModelConfig, Rational};
pub use scalar::Scalar;
pub use tensor::Tensor;

/// Concrete aliases for the two scalar instantiations.
pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Model32 = Model<f32>;
pub type Model64 = Model<f64>;
