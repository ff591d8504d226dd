//! Virtual cath-lab engine: C-arm geometry, DRR rendering, image enhancement,
//! cardiac dynamics, hemodynamics, stereo guidewire reconstruction and
//! consistency metrics.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod enhance;
pub mod error;
pub mod filters;
pub mod hemo;
pub mod bspline;
pub mod drr;
pub mod dynamics;
pub mod geometry;
pub mod image;
pub mod metrics;
pub mod service;
pub mod stereo;
pub mod volume;

pub use error::{Error, Result};
