//! Differentiable operations on graph tensors.

mod conv;
mod elementwise;
mod linalg;
mod norm;
mod pool;
mod reduce;
mod shape;
mod softmax;

pub use conv::{conv2d, transposed_conv2d};
pub use elementwise::{add, channel_scale_apply, mul, relu, scale, sigmoid};
pub use linalg::{matmul, transpose2d};
pub use norm::{batchnorm2d_eval, batchnorm2d_train, update_running_stats};
pub use pool::maxpool2d;
pub use reduce::{mean_all, sum_all, sum_axis};
pub use shape::{concat_channels, reshape, select_batch, slice_channels, stack_batch};
pub use softmax::softmax_axis;
