use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{contract_err, Error, Result};

/// `n` indices out of `0..len`: uniform without replacement when `len >= n`,
/// otherwise every index once followed by a cyclic repeat.
pub fn sample_fixed(len: usize, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n == 0 || len == 0 {
        return contract_err("sampling needs a positive count and a non-empty cloud");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if len >= n {
        return Ok(sample(&mut rng, len, n).into_vec());
    }
    let mut all: Vec<usize> = (0..len).collect();
    all.shuffle(&mut rng);
    Ok(all.iter().copied().cycle().take(n).collect())
}

/// A seeded permutation chunked into `ceil(len / n)` windows of exactly `n`
/// indices. Only the last window repeats indices, drawn from earlier windows.
pub fn coverage_windows(len: usize, n: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if n == 0 || len == 0 {
        return contract_err("sampling needs a positive count and a non-empty cloud");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..len).collect();
    perm.shuffle(&mut rng);
    let mut windows: Vec<Vec<usize>> = perm.chunks(n).map(|c| c.to_vec()).collect();
    let last = windows.len() - 1;
    let short = n - windows[last].len();
    if short > 0 {
        // top up from the points outside the last window, cycling when the cloud is small
        let covered = windows[last].len();
        let pool: Vec<usize> = if last > 0 { perm[..last * n].to_vec() } else { perm[..covered].to_vec() };
        let picks: Vec<usize> = if pool.len() >= short {
            sample(&mut rng, pool.len(), short).into_iter().map(|i| pool[i]).collect()
        } else {
            pool.iter().copied().cycle().take(short).collect()
        };
        windows[last].extend(picks);
    }
    Ok(windows)
}

/// Running sums of per-point class probabilities over sampling windows.
#[derive(Clone, Debug, PartialEq)]
pub struct VoteAccumulator {
    pub classes: usize,
    pub sums: Vec<f64>,
    pub coverage: Vec<u32>,
}

impl VoteAccumulator {
    pub fn new(points: usize, classes: usize) -> Self {
        Self { classes, sums: vec![0.0; points * classes], coverage: vec![0; points] }
    }

    /// Adds `probs[j]` to the point `window[j]`.
    pub fn update(&mut self, window: &[usize], probs: &[Vec<f64>]) -> Result<()> {
        if window.len() != probs.len() {
            return Err(Error::Shape(format!("{} indices for {} probability rows", window.len(), probs.len())));
        }
        let c = self.classes;
        for (&i, row) in window.iter().zip(probs) {
            if i >= self.coverage.len() {
                return Err(Error::Index { index: i, bound: self.coverage.len() });
            }
            if row.len() != c {
                return Err(Error::Shape(format!("probability row of width {} for {c} classes", row.len())));
            }
            for (s, p) in self.sums[i * c..(i + 1) * c].iter_mut().zip(row) {
                *s += p;
            }
            self.coverage[i] += 1;
        }
        Ok(())
    }

    /// Per-point argmax of the summed votes, lowest class on ties.
    pub fn finalize(&self) -> Result<Vec<usize>> {
        if let Some(point) = self.coverage.iter().position(|&c| c == 0) {
            return Err(Error::Coverage { point });
        }
        Ok(self.sums.chunks_exact(self.classes).map(crate::network::argmax).collect())
    }
}
