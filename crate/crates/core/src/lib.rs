#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod baseline;
pub mod checks;
pub mod engine;
pub mod error;
pub mod generator;
pub mod image;
pub mod io;
pub mod metrics;
pub mod nudft;
pub mod phantom;
pub mod simulation;
pub mod warp;

pub use error::{Error, Result};
pub use image::{CMatrix, ComplexImage, MotionField};
