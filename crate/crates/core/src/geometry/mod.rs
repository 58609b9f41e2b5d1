//! Spatial primitives: sampling, radius grouping, interpolation and blocks.

mod blocks;
mod fps;
mod grid;
mod interpolate;
mod neighbors;

pub use blocks::{normalize_block, partition_blocks, BlockOffset};
pub use fps::farthest_point_sample;
pub use grid::GridIndex;
pub use interpolate::{interpolate_features, interpolation_weights, InterpolationWeights};
pub use neighbors::{group_around, radius_neighbors, NeighborIndex, NeighborMode};

use std::cmp::Ordering;

use crate::error::{Error, Result};

pub type Point = [f64; 3];

#[inline]
pub fn dist2(a: &Point, b: &Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Total lexicographic order on positions, used to break distance ties.
#[inline]
pub fn lex_cmp(a: &Point, b: &Point) -> Ordering {
    a[0].total_cmp(&b[0])
        .then(a[1].total_cmp(&b[1]))
        .then(a[2].total_cmp(&b[2]))
}

/// Positions with optional colors and per-point labels.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub positions: Vec<Point>,
    pub colors: Option<Vec<[f64; 3]>>,
    pub labels: Option<Vec<usize>>,
}

impl PointCloud {
    pub fn new(positions: Vec<Point>) -> Self {
        Self { positions, colors: None, labels: None }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn validate(&self, num_classes: Option<usize>) -> Result<()> {
        if self.positions.is_empty() {
            return Err(Error::Validation("point cloud is empty".into()));
        }
        if let Some(i) = self.positions.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::Validation(format!("point {i} has a non-finite coordinate")));
        }
        if let Some(c) = &self.colors {
            if c.len() != self.len() {
                return Err(Error::Validation("color count differs from point count".into()));
            }
        }
        if let Some(l) = &self.labels {
            if l.len() != self.len() {
                return Err(Error::Validation("label count differs from point count".into()));
            }
            if let Some(c) = num_classes {
                if let Some(bad) = l.iter().find(|&&v| v >= c) {
                    return Err(Error::Validation(format!("label {bad} not below class count {c}")));
                }
            }
        }
        Ok(())
    }

    /// Sub-cloud of the given indices, carrying colors and labels along.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            positions: indices.iter().map(|&i| self.positions[i]).collect(),
            colors: self.colors.as_ref().map(|c| indices.iter().map(|&i| c[i]).collect()),
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
        }
    }
}
