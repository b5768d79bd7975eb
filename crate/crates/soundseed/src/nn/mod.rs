//! Tensor substrate, differentiable layers, optimizer, gradient checking,
//! and the checkpoint container shared by every trained component.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod stack;
pub mod optim;
pub mod tensor;

pub use checkpoint::{Checkpoint, CheckpointError};
pub use gradcheck::grad_check;
pub use layers::{
    Attention1d, Conv1d, Dense, Film, GroupNorm, Layer, NnError, Parameter, Silu,
    TransposedConv1d,
};
pub use optim::{adam_step, Adam};
pub use tensor::Tensor;
