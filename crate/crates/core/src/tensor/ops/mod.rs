mod basic;
pub mod conv;
mod dense_ops;
pub mod norm;

pub use conv::{conv3d, conv3d_reference, output_extent, Conv3dParams};
pub use dense_ops::{adaptive_avg_pool_unit, dropout, linear, log_softmax, weighted_nll};
pub use norm::{batchnorm3d, BatchNormConfig};
