//! Small differentiable numeric core: matrices, parameter vectors, layers with
//! hand-written backward passes, losses, Gaussian helpers and seeded streams.
//!
//! Everything is `f64`. Forward functions are pure; backward functions consume
//! the cache returned by the matching forward.

mod layers;
mod loss;
mod matrix;
mod params;
pub mod rng;

pub use layers::{
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, maxpool2x2, maxpool2x2_backward, Activation,
    ConvCache, ConvGrads, DenseCache, DenseGrads, FeatureMaps, PoolCache,
};
pub use loss::{
    gaussian_kl, gaussian_kl_grad, reparam_sample, reparam_with_noise, softmax_cross_entropy,
};
pub use matrix::Matrix;
pub use params::{sgd_step, Gradient, Layout, ParamVector, SegmentInfo, SegmentRef};
pub use rng::RngStream;
