//! Programming-by-example synthesis of straight-line tensor programs.
//!
//! A task is a handful of input tensors plus the desired output. The search
//! strategies in [`search`] look for an expression over the registered
//! operations that maps the inputs to the output, optionally guided by the
//! models in [`nn`] trained on data from [`datagen`].

pub mod bench;
pub mod datagen;
pub mod encoding;
pub mod expr;
pub mod nn;
pub mod ops;
pub mod search;
pub mod tensor;

pub use expr::{evaluate, Expr};
pub use ops::{apply, Literal, OpCode, Registry};
pub use search::TaskSpec;
pub use tensor::{DType, Tensor};

/// `Instant` that also works in the browser, where the std clock panics.
mod clock {
    #[cfg(not(target_arch = "wasm32"))]
    pub(crate) use std::time::Instant;
    #[cfg(target_arch = "wasm32")]
    pub(crate) use web_time::Instant;
}
