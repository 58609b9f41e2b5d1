use std::collections::BTreeMap;

use super::{Point, PointCloud};
use crate::error::{contract_err, Result};

/// Splits a cloud into `block_xy × block_xy` columns (z unbounded) anchored at
/// the minimum xy corner. Empty blocks are omitted; blocks come out in
/// (x, y) cell order and indices within a block ascend.
pub fn partition_blocks(cloud: &PointCloud, block_xy: f64) -> Result<Vec<Vec<usize>>> {
    if !(block_xy > 0.0) {
        return contract_err(format!("block size {block_xy} must be positive"));
    }
    let (mut min_x, mut min_y) = (f64::INFINITY, f64::INFINITY);
    for p in &cloud.positions {
        min_x = min_x.min(p[0]);
        min_y = min_y.min(p[1]);
    }
    let mut blocks: BTreeMap<(i64, i64), Vec<usize>> = BTreeMap::new();
    for (i, p) in cloud.positions.iter().enumerate() {
        let cx = ((p[0] - min_x) / block_xy).floor() as i64;
        let cy = ((p[1] - min_y) / block_xy).floor() as i64;
        blocks.entry((cx, cy)).or_default().push(i);
    }
    Ok(blocks.into_values().collect())
}

/// Translation that moves a block to its local frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockOffset(pub Point);

impl BlockOffset {
    pub fn restore(&self, p: &Point) -> Point {
        [p[0] + self.0[0], p[1] + self.0[1], p[2] + self.0[2]]
    }

    pub fn apply(&self, p: &Point) -> Point {
        [p[0] - self.0[0], p[1] - self.0[1], p[2] - self.0[2]]
    }
}

/// Centres x and y on the block's bounding-box centre and drops z to the block minimum.
pub fn normalize_block(points: &[Point]) -> Result<(Vec<Point>, BlockOffset)> {
    if points.is_empty() {
        return contract_err("cannot normalize an empty block");
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let offset = BlockOffset([(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0, lo[2]]);
    Ok((points.iter().map(|p| offset.apply(p)).collect(), offset))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_block_and_split() {
        let cloud = PointCloud::new(vec![[0.0, 0.0, 0.0], [1.0, 1.5, 3.0], [0.2, 0.1, -1.0]]);
        assert_eq!(partition_blocks(&cloud, 2.0).unwrap(), vec![vec![0, 1, 2]]);
        let cloud = PointCloud::new(vec![[0.0, 0.0, 0.0], [3.0, 0.0, 0.0]]);
        assert_eq!(partition_blocks(&cloud, 2.0).unwrap(), vec![vec![0], vec![1]]);
        assert!(partition_blocks(&cloud, 0.0).is_err());
    }

    #[test]
    fn normalize_single_point_and_round_trip() {
        let (n, off) = normalize_block(&[[3.0, -2.0, 7.5]]).unwrap();
        assert_eq!(n, vec![[0.0, 0.0, 0.0]]);
        let pts = vec![[10.1, 3.3, 0.7], [11.9, 4.2, 2.5], [10.5, 5.0, 1.0]];
        let (n, off2) = normalize_block(&pts).unwrap();
        for (a, b) in pts.iter().zip(&n) {
            let r = off2.restore(b);
            for k in 0..3 {
                assert!((a[k] - r[k]).abs() < 1e-12);
            }
        }
        assert_eq!(off.0, [3.0, -2.0, 7.5]);
    }
}
