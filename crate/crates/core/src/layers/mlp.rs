use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::params::{BnUpdate, Builder, BufferId, Ctx, ParamId};
use crate::tensor::{Tensor, Var};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Shape of a shared (pointwise) MLP: `depth` affine maps with ReLU between
/// them, then optional batch norm and optional ReLU.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub batch_norm: bool,
    pub relu: bool,
    pub depth: usize,
}

impl MlpSpec {
    pub const AFFINE: Self = Self { batch_norm: false, relu: false, depth: 1 };
    pub const BN: Self = Self { batch_norm: true, relu: false, depth: 1 };
    pub const BN_RELU: Self = Self { batch_norm: true, relu: true, depth: 1 };
}

#[derive(Clone, Debug)]
pub struct Affine {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Affine {
    pub fn new(b: &mut Builder, in_dim: usize, out_dim: usize) -> Self {
        let w = b.he_uniform(in_dim, out_dim);
        let weight = b.param("weight", w);
        let bias = b.param("bias", Tensor::zeros(&[out_dim]));
        Self { weight, bias, in_dim, out_dim }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let w = ctx.param(self.weight);
        let b = ctx.param(self.bias);
        ctx.tape.linear(x, w, Some(b))
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
}

impl BatchNorm {
    pub fn new(b: &mut Builder, dim: usize) -> Self {
        Self {
            gamma: b.param("gamma", Tensor::full(&[dim], 1.0)),
            beta: b.param("beta", Tensor::zeros(&[dim])),
            running_mean: b.buffer("running_mean", Tensor::zeros(&[dim])),
            running_var: b.buffer("running_var", Tensor::full(&[dim], 1.0)),
        }
    }

    /// Training mode normalises with the batch statistics of every leading
    /// position and queues a running-stat update; eval mode uses the running
    /// statistics (initially mean 0, variance 1).
    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let gamma = ctx.param(self.gamma);
        let beta = ctx.param(self.beta);
        if ctx.training() {
            let (y, stats) = ctx.tape.batch_norm_train(x, gamma, beta, BN_EPS)?;
            ctx.record_bn(BnUpdate {
                mean: self.running_mean,
                var: self.running_var,
                stats,
                momentum: BN_MOMENTUM,
            });
            Ok(y)
        } else {
            let store = ctx.store();
            let mean = store.buffer(self.running_mean).data();
            let var = store.buffer(self.running_var).data();
            ctx.tape.batch_norm_eval(x, gamma, beta, mean, var, BN_EPS)
        }
    }
}

/// Pointwise transform shared across every leading position.
#[derive(Clone, Debug)]
pub struct SharedMlp {
    pub affines: Vec<Affine>,
    pub bn: Option<BatchNorm>,
    pub relu: bool,
}

impl SharedMlp {
    pub fn new(b: &mut Builder, name: &str, in_dim: usize, out_dim: usize, spec: MlpSpec) -> Self {
        let mut b = b.child(name);
        let depth = spec.depth.max(1);
        let affines = (0..depth)
            .map(|i| {
                let din = if i == 0 { in_dim } else { out_dim };
                if depth == 1 {
                    Affine::new(&mut b, din, out_dim)
                } else {
                    Affine::new(&mut b.child(&format!("layer{i}")), din, out_dim)
                }
            })
            .collect();
        let bn = spec.batch_norm.then(|| BatchNorm::new(&mut b.child("bn"), out_dim));
        Self { affines, bn, relu: spec.relu }
    }

    pub fn in_dim(&self) -> usize {
        self.affines[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.affines[self.affines.len() - 1].out_dim
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, a) in self.affines.iter().enumerate() {
            if i > 0 {
                h = ctx.tape.relu(h)?;
            }
            h = a.forward(ctx, h)?;
        }
        if let Some(bn) = &self.bn {
            h = bn.forward(ctx, h)?;
        }
        if self.relu {
            h = ctx.tape.relu(h)?;
        }
        Ok(h)
    }
}
