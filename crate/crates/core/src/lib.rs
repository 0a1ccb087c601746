pub mod augment;
pub mod cells;
pub mod cli;
pub mod error;
pub mod eval;
pub mod features;
pub mod inspect;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod tree;

pub use error::{Error, Result};
