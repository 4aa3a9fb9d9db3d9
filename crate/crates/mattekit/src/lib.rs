//! End-to-end deep image matting toolkit.
//!
//! The pipeline: composite foreground/alpha assets over fresh backgrounds to
//! synthesize ground-truth datasets, train a two-stage convolutional network
//! (encoder-decoder plus a sharpening refinement head) with hand-written
//! backpropagation and Adam, then score predicted mattes with the four
//! standard matting metrics and a trimap-width robustness sweep. A guided
//! filter provides a closed-form refinement baseline.
//!
//! Modules:
//! - [`tensor`]: NCHW f32 tensors with optional gradient buffers
//! - [`ops`]: conv/pool/resize/pad primitives with manual backward passes
//! - [`dataset`]: compositing, trimap generation, augmentation, synthesis
//! - [`model`]: the two-stage network, forward/backward, parameter store
//! - [`loss`]: alpha-prediction, compositional and combined losses
//! - [`train`]: three-phase training driver with loss history
//! - [`metrics`]: SAD / MSE / gradient / connectivity errors and sweeps
//! - [`guided`]: guided image filter (gray and RGB guides)
//! - [`checkpoint`]: binary weight + optimizer snapshot format
//! - [`imageio`]: PNG I/O for images, mattes and trimaps
//! - [`config`]: TOML pipeline configuration
//!
//! Everything is deterministic for a fixed seed: parallel kernels write
//! disjoint output ranges and reductions run in a fixed order, so results
//! are bitwise reproducible at any thread count.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod guided;
pub mod imageio;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
