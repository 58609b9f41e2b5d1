//! Per-point attention score extraction from a forward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{NeighborMode, PointCloud};
use crate::layers::AttentionTrace;
use crate::network::{Pyramid, SegmentationNet};
use crate::params::{Ctx, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    Strided,
    Same,
}

impl BlockKind {
    pub fn name(self) -> &'static str {
        match self {
            BlockKind::Strided => "strided",
            BlockKind::Same => "same",
        }
    }
}

/// Scores one block assigned to the neighbours of the traced point.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockScores {
    /// Encoder layer, counted from 1.
    pub level: usize,
    pub kind: BlockKind,
    /// Neighbour slots as indices into the network input.
    pub neighbors: Vec<usize>,
    pub radius: f64,
    pub channel: usize,
    pub geometric: Option<Vec<f64>>,
    pub latent: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionDump {
    pub point: usize,
    pub blocks: Vec<BlockScores>,
    /// First encoder layer whose sampling dropped the point.
    pub eliminated_at: Option<usize>,
}

/// Follows input point `point` down the encoder, collecting the post-softmax
/// scores of its neighbourhood at every block it survives. The score channel
/// is `channel` reduced modulo the block's channel count, or drawn from
/// `seed` when `None`.
pub fn trace_attention(
    net: &SegmentationNet,
    store: &ParamStore,
    cloud: &PointCloud,
    point: usize,
    channel: Option<usize>,
    seed: u64,
) -> Result<AttentionDump> {
    if point >= cloud.len() {
        return Err(Error::Index { index: point, bound: cloud.len() });
    }
    let mut ctx = Ctx::new(store, false, 0);
    let pyramid = net.encoder.forward(&mut ctx, cloud, NeighborMode::Deterministic)?;
    Ok(collect(&pyramid, point, channel, seed))
}

fn collect(pyramid: &Pyramid, point: usize, channel: Option<usize>, seed: u64) -> AttentionDump {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut blocks = Vec::new();
    for (l, level) in pyramid.levels.iter().enumerate().skip(1) {
        let Some(m) = level.origin.iter().position(|&o| o == point) else {
            return AttentionDump { point, blocks, eliminated_at: Some(l) };
        };
        let parent_origin = &pyramid.levels[l - 1].origin;
        let kinds = [(BlockKind::Strided, parent_origin), (BlockKind::Same, &level.origin)];
        for ((kind, origin), (nbrs, trace)) in kinds.into_iter().zip(level.neighbors.iter().zip(&level.traces)) {
            let c = channel.map_or_else(|| rng.gen_range(0..trace.d), |c| c % trace.d);
            let pick = |s: &Option<Vec<f64>>| s.as_ref().map(|s| AttentionTrace::column(s, trace.k, trace.d, m, c));
            blocks.push(BlockScores {
                level: l,
                kind,
                neighbors: nbrs.row(m).iter().map(|&j| origin[j]).collect(),
                radius: nbrs.radius,
                channel: c,
                geometric: pick(&trace.geometric),
                latent: pick(&trace.latent),
            });
        }
    }
    AttentionDump { point, blocks, eliminated_at: None }
}
