//! Dense-tensor arithmetic, reverse-mode differentiation, layers, and Adam.

pub mod gradcheck;
pub mod layers;
pub mod optim;
pub mod store;
pub mod tape;
pub mod tensor;

pub use gradcheck::grad_check;
pub use layers::{ada_gn, group_norm, linear_forward, time_embed, Linear};
pub use optim::{adam_step, AdamState};
pub use store::{ParamStore, VarMap};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
