use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{composite_loss, LossConfig, NetworkConfig, SegmentationNet};
use crate::error::Result;
use crate::geometry::{NeighborMode, PointCloud};
use crate::params::{param_gradcheck, ParamReport, ParamStore};
use crate::tensor::OpKind;

pub const MICRO_POINTS: usize = 24;
pub const MICRO_TOLERANCE: f64 = 1e-4;

/// Finite-difference check of every parameter of the micro network under the
/// full composite loss on a random labelled cloud. `fault` scales the
/// backward pass of one op family to confirm the check can fail.
pub fn micro_gradcheck(seed: u64, fault: Option<(OpKind, f64)>) -> Result<Vec<ParamReport>> {
    let cfg = NetworkConfig::micro(3);
    let mut store = ParamStore::new();
    let net = SegmentationNet::new(&mut store, &cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC0FFEE);
    for id in store.param_ids().collect::<Vec<_>>() {
        store.param_mut(id).data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.8..0.8));
    }
    let mut cloud = PointCloud::new(
        (0..MICRO_POINTS)
            .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.0..1.0)])
            .collect(),
    );
    cloud.colors = Some((0..MICRO_POINTS).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect());
    let labels: Vec<usize> = (0..MICRO_POINTS).map(|_| rng.gen_range(0..3)).collect();
    let loss = LossConfig { label_smoothing: 0.1, aux_weights: vec![0.4; cfg.layers.len()] };
    param_gradcheck(&store, 1e-6, |ctx| {
        if let Some((kind, factor)) = fault {
            ctx.tape.corrupt_backward(kind, factor);
        }
        let out = net.forward(ctx, &cloud, NeighborMode::Deterministic)?;
        Ok(composite_loss(&mut ctx.tape, &out, &labels, &loss)?.total)
    })
}
