//! Reverse-mode differentiation over dense matrices, the Adam optimizer,
//! global-norm clipping and the JSON checkpoint format.

mod checkpoint;
pub mod gradcheck;
mod optim;
mod tape;
mod tensor;

pub use checkpoint::{Checkpoint, StoredTensor, FORMAT_TAG};
pub use optim::{clip_gradients, global_norm, Adam, BETA1, BETA2, EPSILON};
pub use tape::{Bound, Gradients, Params, SparseRows, Tape, Var};
pub(crate) use tape::sigmoid;
pub use tensor::Tensor;
