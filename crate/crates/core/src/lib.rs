//! Transformer navigation policies trained with on-policy RL in a procedural
//! multi-room world.

mod binfmt;
mod kv;
pub mod bench;
pub mod cli;
pub mod error;
pub mod policy;
pub mod sim;
pub mod temporal;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
