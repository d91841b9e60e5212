//! Neural state pushdown automata.

pub mod baseline;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod grammar;
pub mod harness;
pub mod learning;
pub mod model;
pub mod par;
pub mod programming;
pub mod protocols;
pub mod stack;

pub use error::{Error, Result};
