//! Minimal differentiable kernel: dense tensors, a recording tape with
//! reverse-mode gradients, and an Adam optimizer.

mod optim;
mod tape;
mod tensor;

pub use optim::{clip_global_norm, global_norm, Adam, ParamStore};
pub use tape::{sigmoid, Gradients, Tape, Var};
pub use tensor::Tensor;
