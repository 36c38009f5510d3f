//! Semantic signed-distance fields fitted under weak supervision.
//!
//! A learnable voxel feature grid is queried trilinearly, concatenated with a
//! sinusoidal positional encoding and decoded by two sine-activated MLP heads
//! into a signed distance and semantic logits. The field is fitted to
//! synthetic scenes from surface scans and coarse occupancy grids only, and
//! can be turned back into semantic meshes, occupancy grids and fused
//! multi-frame reconstructions.

pub mod error;
pub mod experiment;
pub mod extract;
pub mod field;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod scenegen;
pub mod supervision;
pub mod train;
#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
