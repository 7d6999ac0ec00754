#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod baselines;
pub mod batch;
pub mod engine;
pub mod error;
pub mod intervention;
mod linalg;
pub mod matrix;
pub mod mlp;
pub mod ot;
pub mod probe;
pub mod shift;

pub use batch::FeatureBatch;
pub use error::{Error, Result};
pub use matrix::Matrix;
