//! Multi-hypothesis 3D object layout estimation from human pose trajectories.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod checkpoint;
pub mod cli;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod geom;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod plot;
pub mod synthgen;
pub mod train;
pub mod util;
pub mod voting;

pub use error::{Error, Result};
