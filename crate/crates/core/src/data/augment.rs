use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::PointCloud;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentOptions {
    /// Uniform scale range, applied to all three axes.
    pub scale: Option<(f64, f64)>,
    pub flip: bool,
    /// Random rotation about the vertical axis.
    pub rotate: bool,
    /// Gaussian jitter σ and its clip bound, meters.
    pub jitter: Option<(f64, f64)>,
    pub permute_colors: bool,
    pub color_noise: Option<f64>,
}

impl Default for AugmentOptions {
    fn default() -> Self {
        Self {
            scale: Some((0.9, 1.1)),
            flip: true,
            rotate: true,
            jitter: Some((0.01, 0.05)),
            permute_colors: true,
            color_noise: Some(0.02),
        }
    }
}

impl AugmentOptions {
    pub fn none() -> Self {
        Self { scale: None, flip: false, rotate: false, jitter: None, permute_colors: false, color_noise: None }
    }
}

/// Rotation about z by `angle` radians.
pub fn rotate_z(cloud: &mut PointCloud, angle: f64) {
    let (s, c) = angle.sin_cos();
    for p in &mut cloud.positions {
        let (x, y) = (p[0], p[1]);
        p[0] = c * x - s * y;
        p[1] = s * x + c * y;
    }
}

/// Randomly perturbed copy of `cloud`; labels are left untouched.
pub fn augment(cloud: &PointCloud, seed: u64, opts: &AugmentOptions) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = cloud.clone();
    if let Some((lo, hi)) = opts.scale {
        let s = if lo < hi { rng.gen_range(lo..hi) } else { lo };
        out.positions.iter_mut().flatten().for_each(|v| *v *= s);
    }
    if opts.flip {
        for axis in 0..2 {
            if rng.gen_bool(0.5) {
                out.positions.iter_mut().for_each(|p| p[axis] = -p[axis]);
            }
        }
    }
    if opts.rotate {
        rotate_z(&mut out, rng.gen_range(0.0..std::f64::consts::TAU));
    }
    if let Some((sigma, clip)) = opts.jitter {
        if sigma > 0.0 {
            let n = Normal::new(0.0, sigma).expect("valid sigma");
            out.positions
                .iter_mut()
                .flatten()
                .for_each(|v| *v += n.sample(&mut rng).clamp(-clip, clip));
        }
    }
    if let Some(colors) = out.colors.as_mut() {
        if opts.permute_colors {
            let mut perm = [0usize, 1, 2];
            perm.shuffle(&mut rng);
            colors.iter_mut().for_each(|c| *c = [c[perm[0]], c[perm[1]], c[perm[2]]]);
        }
        if let Some(sigma) = opts.color_noise.filter(|&s| s > 0.0) {
            let n = Normal::new(0.0, sigma).expect("valid sigma");
            colors
                .iter_mut()
                .flatten()
                .for_each(|v| *v = (*v + n.sample(&mut rng)).clamp(0.0, 1.0));
        }
    }
    out
}
