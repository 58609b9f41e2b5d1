use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point, PointCloud};

pub const FLOOR: usize = 0;
pub const WALL: usize = 1;
pub const SPHERE: usize = 2;
pub const TOY_CLASS_NAMES: [&str; 3] = ["floor", "wall", "sphere"];

/// Bottom edge of generated walls, kept clear of the floor so the classes
/// stay geometrically separable under jitter.
pub const WALL_BASE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Shape {
    /// The `z = 0` plane over the room extent.
    Floor,
    /// Vertical plane `axis = offset` (axis 0 = x, 1 = y) from the wall base to the room height.
    Wall { axis: usize, offset: f64 },
    Sphere { center: Point, radius: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Surface {
    pub class: usize,
    pub points: usize,
    pub color: [f64; 3],
    #[serde(flatten)]
    pub shape: Shape,
}

/// Recipe for one labelled synthetic room.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub seed: u64,
    /// Room size along x and y, and wall height.
    pub extent: [f64; 3],
    /// Positional jitter σ in meters.
    pub noise: f64,
    pub color_noise: f64,
    pub num_classes: usize,
    pub surfaces: Vec<Surface>,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.extent.iter().any(|&e| !(e > 0.0)) {
            return bad(format!("extent {:?} must be positive", self.extent));
        }
        if self.num_classes < 2 {
            return bad("a scene needs at least 2 classes".into());
        }
        if !(self.noise >= 0.0) || !(self.color_noise >= 0.0) {
            return bad("noise levels must be non-negative".into());
        }
        for s in &self.surfaces {
            if s.points == 0 {
                return bad("every surface needs a positive point count".into());
            }
            if s.class >= self.num_classes {
                return bad(format!("surface class {} not below {}", s.class, self.num_classes));
            }
            match s.shape {
                Shape::Wall { axis, .. } if axis > 1 => return bad(format!("wall axis {axis} must be 0 or 1")),
                Shape::Sphere { radius, .. } if !(radius > 0.0) => return bad("sphere radius must be positive".into()),
                _ => {}
            }
        }
        if self.surfaces.is_empty() {
            return bad("a scene needs at least one surface".into());
        }
        Ok(())
    }

    /// Floor, two walls and a sphere with balanced class counts.
    pub fn toy_room(seed: u64, points: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
        let extent = [2.0, 2.0, 1.2];
        let radius = rng.gen_range(0.25..0.4);
        let margin = radius + 0.15;
        let center = [
            rng.gen_range(margin..extent[0] - 0.1 - radius),
            rng.gen_range(margin..extent[1] - 0.1 - radius),
            rng.gen_range(radius + WALL_BASE + 0.05..extent[2] - radius),
        ];
        let per = points / 3;
        let jitter = |rng: &mut ChaCha8Rng, c: [f64; 3]| c.map(|v| (v + rng.gen_range(-0.08..0.08)).clamp(0.0, 1.0));
        let surfaces = vec![
            Surface { class: FLOOR, points: points - 2 * per, color: jitter(&mut rng, [0.55, 0.4, 0.25]), shape: Shape::Floor },
            Surface { class: WALL, points: per / 2, color: jitter(&mut rng, [0.8, 0.8, 0.75]), shape: Shape::Wall { axis: 0, offset: 0.0 } },
            Surface { class: WALL, points: per - per / 2, color: jitter(&mut rng, [0.8, 0.8, 0.75]), shape: Shape::Wall { axis: 1, offset: 0.0 } },
            Surface { class: SPHERE, points: per, color: jitter(&mut rng, [0.75, 0.2, 0.2]), shape: Shape::Sphere { center, radius } },
        ];
        Self { seed, extent, noise: 0.01, color_noise: 0.03, num_classes: 3, surfaces }
    }

    pub fn sphere(&self) -> Option<(Point, f64)> {
        self.surfaces.iter().find_map(|s| match s.shape {
            Shape::Sphere { center, radius } => Some((center, radius)),
            _ => None,
        })
    }
}

/// Samples every surface of `spec`; deterministic in the spec's seed.
pub fn generate_scene(spec: &SceneSpec) -> Result<PointCloud> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let jitter = Normal::new(0.0, spec.noise.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let tint = Normal::new(0.0, spec.color_noise.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let [ex, ey, h] = spec.extent;
    let mut cloud = PointCloud { positions: Vec::new(), colors: Some(Vec::new()), labels: Some(Vec::new()) };
    for s in &spec.surfaces {
        for _ in 0..s.points {
            let mut p = match s.shape {
                Shape::Floor => [rng.gen_range(0.0..ex), rng.gen_range(0.0..ey), 0.0],
                Shape::Wall { axis, offset } => {
                    let along = rng.gen_range(0.0..if axis == 0 { ey } else { ex });
                    let z = rng.gen_range(WALL_BASE..h);
                    if axis == 0 {
                        [offset, along, z]
                    } else {
                        [along, offset, z]
                    }
                }
                Shape::Sphere { center, radius } => {
                    let d: [f64; 3] = UnitSphere.sample(&mut rng);
                    [center[0] + radius * d[0], center[1] + radius * d[1], center[2] + radius * d[2]]
                }
            };
            if spec.noise > 0.0 {
                p.iter_mut().for_each(|v| *v += jitter.sample(&mut rng));
            }
            let c = s.color.map(|v| {
                let n = if spec.color_noise > 0.0 { tint.sample(&mut rng) } else { 0.0 };
                (v + n).clamp(0.0, 1.0)
            });
            cloud.positions.push(p);
            cloud.colors.as_mut().unwrap().push(c);
            cloud.labels.as_mut().unwrap().push(s.class);
        }
    }
    Ok(cloud)
}

/// Labelled toy rooms with per-scene seeds derived from `seed`.
pub fn toy_dataset(count: usize, points: usize, seed: u64) -> Result<Vec<PointCloud>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| generate_scene(&SceneSpec::toy_room(rng.gen(), points))).collect()
}
