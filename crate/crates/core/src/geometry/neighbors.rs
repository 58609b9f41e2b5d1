use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{dist2, lex_cmp, GridIndex, Point};
use crate::error::{contract_err, Error, Result};

/// How K neighbours are chosen when a ball holds more than K points.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NeighborMode {
    /// The K nearest candidates (distance, then position order).
    Deterministic,
    /// K candidates drawn uniformly without replacement.
    Seeded(u64),
}

/// Fixed-size neighbourhoods: row `m` holds `k` source indices around centroid `m`.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborIndex {
    pub centroids: Vec<usize>,
    pub neighbors: Vec<usize>,
    pub radius: f64,
    pub k: usize,
}

impl NeighborIndex {
    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    pub fn row(&self, m: usize) -> &[usize] {
        &self.neighbors[m * self.k..(m + 1) * self.k]
    }
}

/// Groups `source` points within `radius` (inclusive) of every query.
///
/// Under-populated balls are padded by cycling through the candidates, so
/// every row has exactly `k` entries. `centroids` is `0..M` (query order).
pub fn radius_neighbors(
    queries: &[Point],
    source: &[Point],
    radius: f64,
    k: usize,
    mode: NeighborMode,
) -> Result<NeighborIndex> {
    if !(radius > 0.0) || k == 0 {
        return contract_err(format!("radius {radius} and K {k} must both be positive"));
    }
    let grid = GridIndex::new(source, radius);
    let mut rng = match mode {
        NeighborMode::Seeded(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        NeighborMode::Deterministic => None,
    };
    let mut neighbors = Vec::with_capacity(queries.len() * k);
    for (qi, q) in queries.iter().enumerate() {
        let mut cand = grid.within(q, radius);
        if cand.is_empty() {
            return Err(Error::EmptyNeighborhood { query: qi, radius });
        }
        match rng.as_mut() {
            None => {
                cand.sort_by(|&a, &b| {
                    dist2(&source[a], q)
                        .total_cmp(&dist2(&source[b], q))
                        .then_with(|| lex_cmp(&source[a], &source[b]))
                        .then(a.cmp(&b))
                });
                cand.truncate(k);
            }
            Some(rng) if cand.len() > k => {
                cand = sample(rng, cand.len(), k).into_iter().map(|i| cand[i]).collect();
            }
            Some(_) => {}
        }
        neighbors.extend(cand.iter().cycle().take(k));
    }
    Ok(NeighborIndex { centroids: (0..queries.len()).collect(), neighbors, radius, k })
}

/// Neighbourhoods around a subset of `source` itself; `centroids` records the subset.
pub fn group_around(
    source: &[Point],
    centroids: &[usize],
    radius: f64,
    k: usize,
    mode: NeighborMode,
) -> Result<NeighborIndex> {
    if let Some(&bad) = centroids.iter().find(|&&c| c >= source.len()) {
        return Err(Error::Index { index: bad, bound: source.len() });
    }
    let queries: Vec<Point> = centroids.iter().map(|&c| source[c]).collect();
    let mut idx = radius_neighbors(&queries, source, radius, k, mode)?;
    idx.centroids = centroids.to_vec();
    Ok(idx)
}
