//! Visibility management for crowded segmented volumes.
//!
//! The engine takes a raw scalar volume, a per-voxel instance segmentation
//! and a table of per-instance attributes. Instances are grouped by
//! attribute-range predicates ([`grouping`]), thinned per group with
//! view-dependent importance functions ([`sparsify`]), encoded into a 2D
//! visibility mask with a matching transfer function ([`mask`]) and rendered
//! together with the raw data ([`render`]). An ID buffer produced during
//! rendering feeds per-group visibility counts back to the user
//! ([`assess`]). [`session`] ties the stages into a command-driven engine.

pub mod assess;
pub mod color;
pub mod error;
pub mod grouping;
pub mod mask;
pub mod math;
pub mod render;
pub mod session;
pub mod sparsify;
pub mod voldata;

pub use error::{Error, Result};
