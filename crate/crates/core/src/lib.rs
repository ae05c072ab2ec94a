//! Saliency maps conditioned on a task label and shaped by a per-viewer memory.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod memory;
pub mod metrics;
pub mod networks;
pub mod nn;
pub mod raster;
pub mod tensor;
pub mod training;
pub mod verify;

pub use error::{Error, Result};

// Code blocks in the guide run as doc tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/memory.md")]
    mod memory {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/verification.md")]
    mod verification {}
}
