//! Minimal dense-array kernel with reverse-mode gradients.
//!
//! Provides exactly the layers the pipeline composes: linear maps, MLPs,
//! batch/layer normalization, softmax, sigmoid, grouped gather and max-pool,
//! plus a tape-based backward pass and a central finite-difference checker.
//! Everything is `f64`, row-major, single-threaded per graph.

mod fdcheck;
mod layers;
mod ops;
mod tensor;
pub mod weights;

pub use fdcheck::{fd_check, fd_check_corrupted};
pub use layers::{Activation, LinearLayer, Mlp, MlpLayer, NormKind, NormLayer};
pub use tensor::{backward, no_grad, GradTape, Tensor};
