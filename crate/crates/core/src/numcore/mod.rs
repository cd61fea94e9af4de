//! Dense tensors, reverse-mode differentiation and the Adam optimizer.

mod adam;
mod scalar;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use scalar::Scalar;
pub use tape::{softmax_rows_value, ParamEntry, ParamId, ParamStore, Tape, Var};
pub use tensor::Tensor;
