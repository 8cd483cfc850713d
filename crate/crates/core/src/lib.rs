pub mod cli;
pub mod context;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod refine;
pub mod signal;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{ParamStore, Tensor};

/// Training mode uses batch statistics in batch norm and reports them;
/// evaluation mode uses the stored running estimates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
