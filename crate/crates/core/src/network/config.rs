use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{HeadMode, MlpSpec};

/// One encoder layer: a strided block followed by a same-resolution block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerConfig {
    pub sample_count: usize,
    /// Grouping radius of the strided block; the same block uses twice this.
    pub radius: f64,
    pub k: usize,
    pub width: usize,
    /// Width reduction inside the blocks (entry MLP maps to `width / bottleneck`).
    pub bottleneck: usize,
}

impl LayerConfig {
    pub fn inner_width(&self) -> usize {
        self.width / self.bottleneck
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub num_classes: usize,
    pub stem_width: usize,
    pub layers: Vec<LayerConfig>,
    /// Channels sharing one attention score.
    #[serde(default = "one")]
    pub group_size: usize,
    #[serde(default = "both")]
    pub heads: HeadMode,
    /// Shape of the transforms inside each attention layer.
    #[serde(default = "affine")]
    pub transform: MlpSpec,
    #[serde(default = "half")]
    pub dropout: f64,
}

fn one() -> usize {
    1
}
fn both() -> HeadMode {
    HeadMode::Both
}
fn affine() -> MlpSpec {
    MlpSpec::AFFINE
}
fn half() -> f64 {
    0.5
}

fn schedule(sizes: &[usize], widths: &[usize], ks: &[usize], radius: f64) -> Vec<LayerConfig> {
    let mut r = radius;
    sizes
        .iter()
        .zip(widths)
        .zip(ks)
        .map(|((&sample_count, &width), &k)| {
            let layer = LayerConfig { sample_count, radius: r, k, width, bottleneck: 4 };
            r *= 2.0;
            layer
        })
        .collect()
}

impl NetworkConfig {
    /// Full-size network for 6144-point, 2 m blocks.
    pub fn standard(num_classes: usize) -> Self {
        Self {
            num_classes,
            stem_width: 32,
            layers: schedule(&[4096, 2048, 512, 128], &[64, 128, 256, 512], &[32, 32, 32, 16], 0.1),
            group_size: 1,
            heads: HeadMode::Both,
            transform: MlpSpec::AFFINE,
            dropout: 0.5,
        }
    }

    /// Reduced network for roughly 2048-point synthetic scenes.
    pub fn toy(num_classes: usize) -> Self {
        Self {
            num_classes,
            stem_width: 16,
            layers: schedule(&[512, 256, 128, 64], &[32, 64, 128, 256], &[16, 16, 16, 16], 0.2),
            ..Self::standard(num_classes)
        }
    }

    /// Two-level network small enough for exhaustive finite differences.
    pub fn micro(num_classes: usize) -> Self {
        Self {
            num_classes,
            stem_width: 8,
            layers: vec![
                LayerConfig { sample_count: 12, radius: 0.5, k: 3, width: 8, bottleneck: 2 },
                LayerConfig { sample_count: 6, radius: 1.0, k: 3, width: 8, bottleneck: 2 },
            ],
            group_size: 1,
            heads: HeadMode::Both,
            transform: MlpSpec::AFFINE,
            dropout: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.num_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if self.layers.is_empty() {
            return bad("at least one encoder layer is required".into());
        }
        if self.stem_width == 0 || self.group_size == 0 {
            return bad("stem width and group size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.sample_count == 0 || l.k == 0 || l.bottleneck == 0 || l.width == 0 {
                return bad(format!("layer {i}: counts and widths must be positive"));
            }
            if !(l.radius > 0.0) || !l.radius.is_finite() {
                return bad(format!("layer {i}: radius {} must be positive", l.radius));
            }
            if l.width % l.bottleneck != 0 {
                return bad(format!("layer {i}: bottleneck {} does not divide width {}", l.bottleneck, l.width));
            }
            if l.inner_width() % self.group_size != 0 {
                return bad(format!(
                    "layer {i}: group size {} does not divide attention width {}",
                    self.group_size,
                    l.inner_width()
                ));
            }
            if i > 0 {
                let prev = &self.layers[i - 1];
                if l.sample_count >= prev.sample_count {
                    return bad(format!("layer {i}: sample counts must strictly decrease"));
                }
                if l.radius != 2.0 * prev.radius {
                    return bad(format!(
                        "layer {i}: radius {} is not double the previous {}",
                        l.radius, prev.radius
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
