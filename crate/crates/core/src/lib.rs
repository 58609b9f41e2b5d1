//! Two-headed geometric/latent attention for point cloud segmentation.

pub mod config;
pub mod data;
pub mod error;
pub mod geometry;
pub mod inspect;
pub mod layers;
pub mod metrics;
pub mod network;
pub mod params;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
