//! Dense reverse-mode differentiation over batched 2-D tensors, plus the
//! neural building blocks the model needs.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod nn;
pub mod tape;
pub mod tensor;

pub use adam::AdamState;
pub use checkpoint::Checkpoint;
pub use nn::{he_uniform, BatchStats, Bound, MlpBlock, Mode, ParamId, ParamStore};
pub use tape::{sigmoid, Gradients, Tape, Var};
pub use tensor::Tensor;
