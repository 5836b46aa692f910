//! Interactive segmentation and editing of voxelized radiance fields.
//!
//! A [`field::VoxelField`] holds density, appearance and distilled semantic
//! feature lattices. Users mark objects with brush strokes on rendered views;
//! the stroke's rendered features are condensed with K-Means, matched against
//! every voxel to seed a high-confidence region, and the seed is grown with a
//! spatio-semantic bilateral filter. The resulting bitmap drives scene edits.

pub mod edit;
pub mod error;
pub mod field;
pub mod grid;
pub mod grow;
pub mod io;
pub mod metrics;
pub mod render;
pub mod semantic;
pub mod train;

pub use error::{Error, Result};
