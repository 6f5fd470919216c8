//! Pointwise convolutional networks for 3D point clouds.
//!
//! The operator centers a kernel on every point, splits its support into
//! `R^3` cells and sums, per cell, a weight times the mean feature of the
//! neighbors inside the cell. Around it sit an exact grid radius search, point
//! orderings, a small layer stack with hand-written backward passes, and a
//! training harness for synthetic recognition and segmentation tasks.

pub mod cli;
pub mod cloud;
pub mod config;
pub mod dataset;
pub mod error;
pub mod exec;
pub mod harness;
pub mod net;
pub mod pointconv;
pub mod real;
pub mod rng;
pub mod spatial;

pub use cloud::{FeatureMap, PointCloud, Vec3};
pub use error::{CheckpointError, Error, Result};
pub use exec::Exec;
pub use real::{Precision, Real};
