//! Numeric building blocks: convolution, activations, pooling, resizing,
//! padding, parameter init and the Adam update. Forward passes are pure;
//! backward passes take the saved forward inputs and return freshly
//! allocated gradients. All kernels are deterministic: parallel loops write
//! disjoint planes and every reduction runs in a fixed order.

mod activation;
mod adam;
mod conv;
mod init;
mod pad;
mod pool;
mod resize;

pub use activation::{clamp01, clamp01_backward, relu, relu_backward};
pub use adam::{adam_step, AdamConfig, AdamState};
pub use conv::{conv2d, conv2d_backward, ConvGrads, ConvParams};
pub use init::{conv_params_xavier, xavier_uniform, zero_extend_in_channels};
pub use pad::{crop_top_left, crop_top_left_backward, pad_to_multiple};
pub use pool::{maxpool2x2, maxpool2x2_backward, unpool2x2, unpool2x2_backward, PoolIndices};
pub use resize::bilinear_resize;
