//! Compiling ReLU networks into attention-only softmax Transformers.

pub mod attn;
pub mod compiler;
pub mod error;
pub mod gadgets;
pub mod json;
pub mod numerics;
pub mod par;
pub mod relu;
pub mod sampling;
pub mod toolkit;
pub mod verify;

pub use error::{Error, Result};
