pub mod cli;
pub mod config;
pub mod curriculum;
pub mod decoder;
pub mod error;
pub mod eval;
pub mod export;
pub mod hier_env;
pub mod lowlevel;
pub mod reward;
pub mod terrain;
pub mod trainer;

pub use error::{Error, Result};
