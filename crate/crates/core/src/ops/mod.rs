//! Forward/backward tensor operations used by the ResNet family.

mod activation;
mod batchnorm;
mod conv;
mod linear;
mod loss;
mod pool;

pub use activation::{relu_backward, relu_forward};
pub use batchnorm::{
    batchnorm2d_backward, batchnorm2d_forward_eval, batchnorm2d_forward_train, BnCache,
};
pub use conv::{conv2d_backward, conv2d_forward, conv_out_dim};
pub use linear::{linear_backward, linear_forward};
pub use loss::softmax_cross_entropy;
pub use pool::{global_avg_pool_backward, global_avg_pool_forward};
