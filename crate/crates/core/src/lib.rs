pub mod dsl;
pub mod error;
pub mod errorgen;
pub mod graph;
pub mod harness;
mod par;
pub mod pipeline;
pub mod profiler;
pub mod rng;
pub mod sifta;
pub mod tabular;

pub use error::{Error, Result};
