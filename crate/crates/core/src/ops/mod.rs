//! Dense tensor operations, each paired with its vector-Jacobian product.

mod activation;
mod conv;
mod layer_norm;
mod linear;
mod pool;

pub use activation::{gelu, gelu_backward, gelu_scalar, gelu_scalar_derivative, sigmoid, softmax, softmax_backward};
pub use conv::{conv2d, conv2d_backward, conv_out_dim, Conv2dGrads, Conv2dWeights};
pub use layer_norm::{layer_norm, layer_norm_backward, layer_norm_forward, LayerNormCache, LayerNormParams, DEFAULT_LN_EPS};
pub use linear::{linear_project, linear_project_backward, LinearGrads, LinearWeights};
pub use pool::{global_avg_pool, global_avg_pool_backward};
