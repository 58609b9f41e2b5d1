use std::cmp::Ordering;

use super::{dist2, lex_cmp, Point};
use crate::error::{contract_err, Result};

/// Greedy farthest point sampling.
///
/// The first pick is the point nearest to the cloud centroid; each later pick
/// maximises the distance to everything picked so far. Ties go to the
/// lexicographically smaller position, then to the lower index, so the
/// returned set does not depend on input order (for distinct positions).
pub fn farthest_point_sample(positions: &[Point], m: usize) -> Result<Vec<usize>> {
    let n = positions.len();
    if m == 0 || m > n {
        return contract_err(format!("cannot sample {m} of {n} points"));
    }
    let centroid = order_independent_centroid(positions);

    // `better(a, b)`: candidate `a` beats `b` for the same score.
    let tie = |a: usize, b: usize| match lex_cmp(&positions[a], &positions[b]) {
        Ordering::Equal => a < b,
        o => o == Ordering::Less,
    };

    let mut seed = 0;
    let mut seed_d = dist2(&positions[0], &centroid);
    for i in 1..n {
        let d = dist2(&positions[i], &centroid);
        if d < seed_d || (d == seed_d && tie(i, seed)) {
            seed = i;
            seed_d = d;
        }
    }

    let mut picked = vec![false; n];
    let mut min_d: Vec<f64> = vec![f64::INFINITY; n];
    let mut out = Vec::with_capacity(m);
    let mut current = seed;
    loop {
        picked[current] = true;
        out.push(current);
        if out.len() == m {
            break;
        }
        let cp = positions[current];
        let mut best: Option<usize> = None;
        for i in 0..n {
            if picked[i] {
                continue;
            }
            let d = dist2(&positions[i], &cp);
            if d < min_d[i] {
                min_d[i] = d;
            }
            best = match best {
                None => Some(i),
                Some(b) if min_d[i] > min_d[b] || (min_d[i] == min_d[b] && tie(i, b)) => Some(i),
                keep => keep,
            };
        }
        current = best.expect("m <= n leaves an unpicked point");
    }
    Ok(out)
}

/// Mean position, summed in lexicographic order so the floating-point result
/// is identical for every permutation of the input.
fn order_independent_centroid(positions: &[Point]) -> Point {
    let mut sorted: Vec<&Point> = positions.iter().collect();
    sorted.sort_by(|a, b| lex_cmp(a, b));
    let mut c = [0.0; 3];
    for p in sorted {
        for k in 0..3 {
            c[k] += p[k];
        }
    }
    let n = positions.len() as f64;
    [c[0] / n, c[1] / n, c[2] / n]
}
