//! Minimal CPU tensor substrate: dense f32 arrays, reverse-mode autodiff,
//! 2-D convolution, residual blocks, masked losses, Adam/SGD, and a binary
//! checkpoint format. Everything is deterministic given seeds and inputs.

pub mod checkpoint;
mod error;
mod kernels;
mod net;
mod optim;
mod params;
pub mod reference;
mod tape;
mod tensor;

pub use error::{NnError, Result};
pub use net::{LayerSpec, Network, NetworkSpec};
pub use optim::{Optimizer, UpdateRule};
pub use params::{Param, ParamSet};
pub use tape::{NodeId, Tape};
pub use tensor::Tensor;
