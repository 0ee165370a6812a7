pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod distiller;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod kg;
pub mod seed;
pub mod tasks;
pub mod tensor;

pub use error::{Error, Result};
