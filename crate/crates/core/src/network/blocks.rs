use super::LayerConfig;
use crate::error::{contract_err, Result};
use crate::geometry::{farthest_point_sample, group_around, NeighborIndex, NeighborMode, Point};
use crate::layers::{
    neighborhood_maxpool, AttentionTrace, GeLatto, GeLattoConfig, GroupedInput, HeadMode, MlpSpec, SharedMlp,
};
use crate::params::{Builder, Ctx};
use crate::tensor::Var;

#[derive(Clone, Debug)]
pub struct BlockOutput {
    pub positions: Vec<Point>,
    /// `[M, D]`
    pub features: Var,
    /// Indices of the output points within the block's input points.
    pub sample: Vec<usize>,
    pub neighbors: NeighborIndex,
    pub trace: AttentionTrace,
}

/// Attention settings shared by every block of a network.
#[derive(Clone, Copy, Debug)]
pub struct AttentionSettings {
    pub group_size: usize,
    pub heads: HeadMode,
    pub transform: MlpSpec,
}

impl AttentionSettings {
    fn layer(&self, dim: usize) -> GeLattoConfig {
        GeLattoConfig { dim, group_size: self.group_size, heads: self.heads, transform: self.transform }
    }
}

/// Bottleneck main path shared by both block kinds: entry MLP, attention, exit MLP.
#[derive(Clone, Debug)]
struct MainPath {
    entry: SharedMlp,
    attention: GeLatto,
    exit: SharedMlp,
}

impl MainPath {
    fn new(b: &mut Builder, in_dim: usize, cfg: &LayerConfig, att: AttentionSettings) -> Result<Self> {
        let inner = cfg.inner_width();
        Ok(Self {
            entry: SharedMlp::new(b, "entry", in_dim, inner, MlpSpec::BN_RELU),
            attention: GeLatto::new(b, "attention", att.layer(inner))?,
            exit: SharedMlp::new(b, "exit", inner, cfg.width, MlpSpec::BN),
        })
    }

    fn forward(
        &self,
        ctx: &mut Ctx,
        parent_positions: &[Point],
        centroid_positions: &[Point],
        parent_features: Var,
        neighbors: &NeighborIndex,
    ) -> Result<(Var, AttentionTrace)> {
        let reduced = self.entry.forward(ctx, parent_features)?;
        let m = neighbors.centroids.len();
        let centroid = ctx.tape.gather_rows(reduced, &neighbors.centroids, &[m])?;
        let out = self.attention.forward(
            ctx,
            &GroupedInput {
                centroid_positions,
                parent_positions,
                neighbors,
                centroid_features: centroid,
                parent_features: reduced,
            },
        )?;
        let trace = AttentionTrace::capture(&ctx.tape, &out);
        Ok((self.exit.forward(ctx, out.features)?, trace))
    }
}

/// Sub-sampling residual block: FPS centroids grouped against the parent level.
#[derive(Clone, Debug)]
pub struct StridedBlock {
    pub config: LayerConfig,
    main: MainPath,
    pub shortcut: SharedMlp,
}

impl StridedBlock {
    pub fn new(b: &mut Builder, name: &str, in_dim: usize, cfg: &LayerConfig, att: AttentionSettings) -> Result<Self> {
        let mut b = b.child(name);
        Ok(Self {
            config: cfg.clone(),
            main: MainPath::new(&mut b, in_dim, cfg, att)?,
            shortcut: SharedMlp::new(&mut b, "shortcut", in_dim, cfg.width, MlpSpec::BN),
        })
    }

    /// Final MLP of the attention path.
    pub fn exit(&self) -> &SharedMlp {
        &self.main.exit
    }

    /// Samples `samples` centroids from `positions` (features `[N, Din]`).
    pub fn forward(
        &self,
        ctx: &mut Ctx,
        positions: &[Point],
        features: Var,
        samples: usize,
        mode: NeighborMode,
    ) -> Result<BlockOutput> {
        if samples > positions.len() {
            return contract_err(format!("cannot sample {samples} of {} points", positions.len()));
        }
        let sample = farthest_point_sample(positions, samples)?;
        let neighbors = group_around(positions, &sample, self.config.radius, self.config.k, mode)?;
        let centroid_positions: Vec<Point> = sample.iter().map(|&i| positions[i]).collect();
        let (main, trace) = self.main.forward(ctx, positions, &centroid_positions, features, &neighbors)?;
        let grouped = ctx.tape.gather_rows(features, &neighbors.neighbors, &[samples, neighbors.k])?;
        let pooled = neighborhood_maxpool(ctx, grouped)?;
        let residual = self.shortcut.forward(ctx, pooled)?;
        let sum = ctx.tape.add(main, residual)?;
        let features = ctx.tape.relu(sum)?;
        Ok(BlockOutput { positions: centroid_positions, features, sample, neighbors, trace })
    }
}

/// Residual block at constant resolution with twice the layer radius.
#[derive(Clone, Debug)]
pub struct SameBlock {
    pub config: LayerConfig,
    main: MainPath,
    pub shortcut: Option<SharedMlp>,
}

impl SameBlock {
    pub fn new(b: &mut Builder, name: &str, in_dim: usize, cfg: &LayerConfig, att: AttentionSettings) -> Result<Self> {
        let mut b = b.child(name);
        Ok(Self {
            config: cfg.clone(),
            main: MainPath::new(&mut b, in_dim, cfg, att)?,
            shortcut: (in_dim != cfg.width)
                .then(|| SharedMlp::new(&mut b, "shortcut", in_dim, cfg.width, MlpSpec::BN)),
        })
    }

    pub fn exit(&self) -> &SharedMlp {
        &self.main.exit
    }

    pub fn radius(&self) -> f64 {
        2.0 * self.config.radius
    }

    pub fn forward(&self, ctx: &mut Ctx, positions: &[Point], features: Var, mode: NeighborMode) -> Result<BlockOutput> {
        let all: Vec<usize> = (0..positions.len()).collect();
        let neighbors = group_around(positions, &all, self.radius(), self.config.k, mode)?;
        let (main, trace) = self.main.forward(ctx, positions, positions, features, &neighbors)?;
        let residual = match &self.shortcut {
            Some(s) => s.forward(ctx, features)?,
            None => features,
        };
        let sum = ctx.tape.add(main, residual)?;
        let features = ctx.tape.relu(sum)?;
        Ok(BlockOutput { positions: positions.to_vec(), features, sample: all, neighbors, trace })
    }
}
