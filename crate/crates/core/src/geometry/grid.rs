use std::collections::HashMap;

use super::{dist2, Point};

/// Uniform hash grid over a fixed point set.
pub struct GridIndex<'a> {
    points: &'a [Point],
    cell: f64,
    cells: HashMap<[i64; 3], Vec<usize>>,
}

impl<'a> GridIndex<'a> {
    pub fn new(points: &'a [Point], cell: f64) -> Self {
        assert!(cell > 0.0, "grid cell size must be positive");
        let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(key(p, cell)).or_default().push(i);
        }
        Self { points, cell, cells }
    }

    pub fn cell_size(&self) -> f64 {
        self.cell
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    /// Indices stored in each occupied cell.
    pub fn cells(&self) -> impl Iterator<Item = (&[i64; 3], &[usize])> {
        self.cells.iter().map(|(k, v)| (k, v.as_slice()))
    }

    /// All indices with `|p - q| <= radius`, in ascending index order.
    pub fn within(&self, q: &Point, radius: f64) -> Vec<usize> {
        let r2 = radius * radius;
        let lo = key(&[q[0] - radius, q[1] - radius, q[2] - radius], self.cell);
        let hi = key(&[q[0] + radius, q[1] + radius, q[2] + radius], self.cell);
        let mut out = Vec::new();
        for x in lo[0]..=hi[0] {
            for y in lo[1]..=hi[1] {
                for z in lo[2]..=hi[2] {
                    if let Some(bucket) = self.cells.get(&[x, y, z]) {
                        out.extend(bucket.iter().copied().filter(|&i| dist2(&self.points[i], q) <= r2));
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

fn key(p: &Point, cell: f64) -> [i64; 3] {
    [
        (p[0] / cell).floor() as i64,
        (p[1] / cell).floor() as i64,
        (p[2] / cell).floor() as i64,
    ]
}
