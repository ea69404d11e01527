pub mod audio;
pub mod cli;
pub mod corpus;
pub mod defense;
pub mod error;
pub mod eval;
pub mod poison;
pub mod seed;
pub mod stealth;
pub mod trigger;
pub mod victim;

pub use error::{Error, Result};
