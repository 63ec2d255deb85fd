//! Dense matrices, activations, convolution lowering and NPY array files.

mod activation;
mod conv;
mod matrix;
pub mod npy;

pub use activation::{relu, Activation};
pub use conv::{im2col, lower_filter, raise_filter, ConvGeometry, Tensor3, Tensor4};
pub use matrix::{gemm, Matrix, Op};
pub use npy::{read_array_file, write_array_file, ArrayValue};
