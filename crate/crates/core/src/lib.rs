//! Rigid registration of several point clouds at once by minimising a
//! mutual gravitational potential, with a Barnes-Hut tree for the far field.
// `!(x > 0.0)` style checks are used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bhtree;
pub mod energy;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod masses;
pub mod metrics;
pub mod optimizer;
pub mod signature;

pub use error::{Error, Result};
pub use geometry::{Point, PointCloud, RigidTransform};
pub use optimizer::{align, align_from, AlignConfig, AlignResult};
