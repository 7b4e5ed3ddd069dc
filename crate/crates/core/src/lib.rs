//! Road-network representation learning with traffic-driven segmentation
//! and raster histogram features.

pub mod config;
pub mod error;
pub mod experiment;
pub mod features;
pub mod geometry;
pub mod graph;
pub mod raster;
pub mod sage;
pub mod segmentation;
pub mod synth;
pub mod taxonomy;

pub use error::{Error, ErrorClass, Result};
