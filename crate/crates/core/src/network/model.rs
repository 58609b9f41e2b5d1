use rand::Rng;

use super::blocks::{AttentionSettings, SameBlock, StridedBlock};
use super::NetworkConfig;
use crate::error::{contract_err, Result};
use crate::geometry::{interpolate_features, NeighborIndex, NeighborMode, Point, PointCloud};
use crate::layers::{AttentionTrace, MlpSpec, SharedMlp};
use crate::params::{Builder, Ctx, ParamStore};
use crate::tensor::{ReduceKind, Tensor, Var};

/// Input channels: xyz followed by rgb.
pub const INPUT_CHANNELS: usize = 6;
pub const MIN_POINTS: usize = 8;

/// One resolution of the encoder.
#[derive(Clone, Debug)]
pub struct PyramidLevel {
    pub positions: Vec<Point>,
    /// `[N_l, D_l]`
    pub features: Var,
    /// Indices into the previous level (identity at level 0).
    pub sample: Vec<usize>,
    /// Indices into the network input.
    pub origin: Vec<usize>,
    /// Neighbourhoods of the strided and same blocks (absent at level 0).
    pub neighbors: Vec<NeighborIndex>,
    pub traces: Vec<AttentionTrace>,
}

#[derive(Clone, Debug)]
pub struct Pyramid {
    pub levels: Vec<PyramidLevel>,
}

impl Pyramid {
    pub fn sizes(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.positions.len()).collect()
    }
}

pub struct SegmentationOutput {
    pub pyramid: Pyramid,
    /// `[N, C]`
    pub logits: Var,
    /// Coarsest level first.
    pub aux_logits: Vec<Var>,
    /// Pyramid level of each auxiliary output.
    pub aux_levels: Vec<usize>,
}

/// Neighbour mode of the `i`-th block given the forward pass mode.
fn block_mode(mode: NeighborMode, i: usize) -> NeighborMode {
    match mode {
        NeighborMode::Deterministic => NeighborMode::Deterministic,
        NeighborMode::Seeded(s) => {
            NeighborMode::Seeded(s ^ (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        }
    }
}

/// `[N, 6]` tensor of positions and colors (black when absent).
pub fn input_features(cloud: &PointCloud) -> Tensor {
    let mut data = Vec::with_capacity(cloud.len() * INPUT_CHANNELS);
    for (i, p) in cloud.positions.iter().enumerate() {
        data.extend_from_slice(p);
        match &cloud.colors {
            Some(c) => data.extend_from_slice(&c[i]),
            None => data.extend_from_slice(&[0.0; 3]),
        }
    }
    Tensor::new(vec![cloud.len(), INPUT_CHANNELS], data).expect("row width is fixed")
}

/// Stem plus the residual encoder layers, shared by both network heads.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: NetworkConfig,
    stem: SharedMlp,
    strided: Vec<StridedBlock>,
    same: Vec<SameBlock>,
}

impl Encoder {
    fn new(b: &mut Builder, config: &NetworkConfig) -> Result<Self> {
        config.validate()?;
        let att = AttentionSettings {
            group_size: config.group_size,
            heads: config.heads,
            transform: config.transform,
        };
        let stem = SharedMlp::new(b, "stem", INPUT_CHANNELS, config.stem_width, MlpSpec::BN_RELU);
        let mut strided = Vec::new();
        let mut same = Vec::new();
        let mut din = config.stem_width;
        for (i, layer) in config.layers.iter().enumerate() {
            let mut lb = b.child(&format!("layer{}", i + 1));
            strided.push(StridedBlock::new(&mut lb, "strided", din, layer, att)?);
            same.push(SameBlock::new(&mut lb, "same", layer.width, layer, att)?);
            din = layer.width;
        }
        Ok(Self { config: config.clone(), stem, strided, same })
    }

    pub fn strided(&self) -> &[StridedBlock] {
        &self.strided
    }

    pub fn same(&self) -> &[SameBlock] {
        &self.same
    }

    /// Point counts per level for an input of `n` points.
    pub fn level_sizes(&self, n: usize) -> Vec<usize> {
        let mut sizes = vec![n];
        for layer in &self.config.layers {
            let prev = *sizes.last().unwrap();
            sizes.push(layer.sample_count.min(prev));
        }
        sizes
    }

    pub fn forward(&self, ctx: &mut Ctx, cloud: &PointCloud, mode: NeighborMode) -> Result<Pyramid> {
        if cloud.len() < MIN_POINTS {
            return contract_err(format!("need at least {MIN_POINTS} points, got {}", cloud.len()));
        }
        cloud.validate(None)?;
        let x = ctx.tape.constant(input_features(cloud));
        let features = self.stem.forward(ctx, x)?;
        let n = cloud.len();
        let mut levels = vec![PyramidLevel {
            positions: cloud.positions.clone(),
            features,
            sample: (0..n).collect(),
            origin: (0..n).collect(),
            neighbors: Vec::new(),
            traces: Vec::new(),
        }];
        let sizes = self.level_sizes(n);
        for (i, (strided, same)) in self.strided.iter().zip(&self.same).enumerate() {
            let parent = levels.last().unwrap();
            let down = strided.forward(ctx, &parent.positions, parent.features, sizes[i + 1], block_mode(mode, 2 * i))?;
            let origin = down.sample.iter().map(|&s| parent.origin[s]).collect();
            let up = same.forward(ctx, &down.positions, down.features, block_mode(mode, 2 * i + 1))?;
            levels.push(PyramidLevel {
                positions: down.positions,
                features: up.features,
                sample: down.sample,
                origin,
                neighbors: vec![down.neighbors, up.neighbors],
                traces: vec![down.trace, up.trace],
            });
        }
        Ok(Pyramid { levels })
    }
}

/// Per-point segmentation network with auxiliary outputs at every decoder level.
#[derive(Clone, Debug)]
pub struct SegmentationNet {
    pub config: NetworkConfig,
    pub encoder: Encoder,
    aux_heads: Vec<SharedMlp>,
    fuse: Vec<SharedMlp>,
    output: SharedMlp,
    classifier: SharedMlp,
}

impl SegmentationNet {
    pub fn new(store: &mut ParamStore, config: &NetworkConfig, seed: u64) -> Result<Self> {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let mut b = Builder::new(store, &mut rng);
        let encoder = Encoder::new(&mut b.child("encoder"), config)?;
        let mut d = b.child("decoder");
        let c = config.num_classes;
        let layers = &config.layers;
        let l = layers.len();
        let mut aux_heads = vec![SharedMlp::new(&mut d, "aux1", layers[l - 1].width, c, MlpSpec::AFFINE)];
        let mut fuse = Vec::new();
        for (step, lvl) in (1..l).rev().enumerate() {
            // from level lvl+1 (decoded width = layers[lvl].width) to level lvl
            let din = layers[lvl].width + layers[lvl - 1].width;
            let dout = layers[lvl - 1].width;
            fuse.push(SharedMlp::new(&mut d, &format!("fuse{}", step + 1), din, dout, MlpSpec::BN_RELU));
            aux_heads.push(SharedMlp::new(&mut d, &format!("aux{}", step + 2), dout, c, MlpSpec::AFFINE));
        }
        let w1 = layers[0].width;
        let output = SharedMlp::new(&mut d, "output", w1 + config.stem_width, w1, MlpSpec::BN_RELU);
        let classifier = SharedMlp::new(&mut d, "classifier", w1, c, MlpSpec::AFFINE);
        Ok(Self { config: config.clone(), encoder, aux_heads, fuse, output, classifier })
    }

    pub fn forward(&self, ctx: &mut Ctx, cloud: &PointCloud, mode: NeighborMode) -> Result<SegmentationOutput> {
        let pyramid = self.encoder.forward(ctx, cloud, mode)?;
        let l = pyramid.levels.len() - 1;
        let mut decoded = pyramid.levels[l].features;
        let mut aux_logits = vec![self.aux_heads[0].forward(ctx, decoded)?];
        let mut aux_levels = vec![l];
        for (step, lvl) in (1..l).rev().enumerate() {
            let coarse = &pyramid.levels[lvl + 1];
            let fine = &pyramid.levels[lvl];
            let up = interpolate_features(&mut ctx.tape, &fine.positions, &coarse.positions, decoded)?;
            let joined = ctx.tape.concat(&[up, fine.features])?;
            decoded = self.fuse[step].forward(ctx, joined)?;
            aux_logits.push(self.aux_heads[step + 1].forward(ctx, decoded)?);
            aux_levels.push(lvl);
        }
        let base = &pyramid.levels[0];
        let up = interpolate_features(&mut ctx.tape, &base.positions, &pyramid.levels[1].positions, decoded)?;
        let joined = ctx.tape.concat(&[up, base.features])?;
        let hidden = self.output.forward(ctx, joined)?;
        let hidden = dropout(ctx, hidden, self.config.dropout)?;
        let logits = self.classifier.forward(ctx, hidden)?;
        Ok(SegmentationOutput { pyramid, logits, aux_logits, aux_levels })
    }
}

/// Inverted dropout, active only in training mode.
pub fn dropout(ctx: &mut Ctx, x: Var, p: f64) -> Result<Var> {
    if !ctx.training() || p == 0.0 {
        return Ok(x);
    }
    let shape = ctx.tape.shape(x).to_vec();
    let keep = 1.0 - p;
    let n: usize = shape.iter().product();
    let rng = ctx.rng();
    let mask = (0..n).map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
    let mask = ctx.tape.constant(Tensor::new(shape, mask)?);
    ctx.tape.mul(x, mask)
}

/// Whole-cloud classifier: average-pooled coarsest features through an MLP.
#[derive(Clone, Debug)]
pub struct ClassificationNet {
    pub config: NetworkConfig,
    pub encoder: Encoder,
    hidden: SharedMlp,
    head: SharedMlp,
}

impl ClassificationNet {
    pub fn new(store: &mut ParamStore, config: &NetworkConfig, seed: u64) -> Result<Self> {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let mut b = Builder::new(store, &mut rng);
        let encoder = Encoder::new(&mut b.child("encoder"), config)?;
        let d = config.layers.last().unwrap().width;
        let mut h = b.child("head");
        let relu = MlpSpec { batch_norm: false, relu: true, depth: 1 };
        let hidden = SharedMlp::new(&mut h, "hidden", d, d, relu);
        let head = SharedMlp::new(&mut h, "logits", d, config.num_classes, MlpSpec::AFFINE);
        Ok(Self { config: config.clone(), encoder, hidden, head })
    }

    /// Logits `[1, C]` for the whole cloud.
    pub fn forward(&self, ctx: &mut Ctx, cloud: &PointCloud, mode: NeighborMode) -> Result<(Var, Pyramid)> {
        let pyramid = self.encoder.forward(ctx, cloud, mode)?;
        let top = pyramid.levels.last().unwrap().features;
        let pooled = self.pool(ctx, top)?;
        Ok((self.head_forward(ctx, pooled)?, pyramid))
    }

    fn pool(&self, ctx: &mut Ctx, features: Var) -> Result<Var> {
        let d = ctx.tape.shape(features)[1];
        let mean = ctx.tape.reduce(features, 0, ReduceKind::Mean)?;
        ctx.tape.reshape(mean, &[1, d])
    }

    /// The classifier MLP applied to pooled features `[1, D]`.
    pub fn head_forward(&self, ctx: &mut Ctx, pooled: Var) -> Result<Var> {
        let h = self.hidden.forward(ctx, pooled)?;
        let h = dropout(ctx, h, self.config.dropout)?;
        self.head.forward(ctx, h)
    }
}
