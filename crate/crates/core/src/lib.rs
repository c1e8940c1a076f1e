//! Dynamic Gaussian-splat reconstruction with pseudo-multi-view refinement.
//!
//! The crate is `no_std` (with `alloc`) and holds every numerical piece of the
//! pipeline: the static/dynamic scene, SE(3) cameras and the training-camera
//! sampler, an exact differentiable rasterizer, photometric losses, the enhancer
//! simulator, the two-pass refinement loop and the masked benchmark metrics.
//! File formats, the external enhancer protocol and the CLI live in the `dynsplat`
//! crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod camera;
pub mod enhance;
pub mod error;
pub mod eval;
pub mod image;
pub mod losses;
pub mod math;
pub mod optimize;
pub mod render;
pub mod scene;
pub mod synthgen;

pub use error::{Error, Result};
