//! Minimal dense-tensor engine with reverse-mode automatic differentiation.
//!
//! The design is define-by-run: a [`Tape`] records primitive operations as
//! they execute, [`Tape::backward`] replays them in reverse to accumulate
//! gradients, and the tape is rebuilt from scratch on every training step.
//! Values are `f32` by default; every op is also instantiated at `f64` so
//! gradients can be checked against central finite differences.

pub mod checkpoint;
pub mod element;
pub mod error;
pub mod kernels;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use element::Element;
pub use error::{Error, Result};
pub use optim::{Adam, AdamConfig};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
