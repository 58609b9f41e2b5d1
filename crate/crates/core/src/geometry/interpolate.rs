use std::cmp::Ordering;

use super::{dist2, lex_cmp, Point};
use crate::error::{shape_err, Result};
use crate::tensor::{Tape, Var};

const INV_DIST_EPS: f64 = 1e-8;

/// Inverse-distance weights over the (up to) three nearest sources of each target.
#[derive(Clone, Debug, PartialEq)]
pub struct InterpolationWeights {
    pub index: Vec<usize>,
    pub weights: Vec<f64>,
    pub fan: usize,
}

pub fn interpolation_weights(targets: &[Point], sources: &[Point]) -> Result<InterpolationWeights> {
    if sources.is_empty() {
        return shape_err("interpolation needs at least one source point");
    }
    let fan = sources.len().min(3);
    let mut index = Vec::with_capacity(targets.len() * fan);
    let mut weights = Vec::with_capacity(targets.len() * fan);
    let closer = |a: (usize, f64), b: (usize, f64)| {
        a.1.total_cmp(&b.1)
            .then_with(|| lex_cmp(&sources[a.0], &sources[b.0]))
            .then(a.0.cmp(&b.0))
            == Ordering::Less
    };
    for t in targets {
        let mut best: Vec<(usize, f64)> = Vec::with_capacity(fan + 1);
        for (j, s) in sources.iter().enumerate() {
            let cand = (j, dist2(s, t));
            if best.len() == fan && !closer(cand, best[fan - 1]) {
                continue;
            }
            let pos = best.iter().position(|&b| closer(cand, b)).unwrap_or(best.len());
            best.insert(pos, cand);
            best.truncate(fan);
        }
        let inv: Vec<f64> = best.iter().map(|&(_, d2)| 1.0 / (d2.sqrt() + INV_DIST_EPS)).collect();
        let norm: f64 = inv.iter().sum();
        for (&(j, _), w) in best.iter().zip(&inv) {
            index.push(j);
            weights.push(w / norm);
        }
    }
    Ok(InterpolationWeights { index, weights, fan })
}

/// Carries `features: [Ns, D]` from `sources` to `targets` by inverse-distance
/// weighting of the three nearest sources.
pub fn interpolate_features(
    tape: &mut Tape,
    targets: &[Point],
    sources: &[Point],
    features: Var,
) -> Result<Var> {
    if tape.shape(features).first() != Some(&sources.len()) {
        return shape_err(format!(
            "interpolation: {} sources but features {:?}",
            sources.len(),
            tape.shape(features)
        ));
    }
    let w = interpolation_weights(targets, sources)?;
    tape.weighted_gather(features, w.index, w.weights, w.fan)
}
