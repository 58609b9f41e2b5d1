//! Named parameter storage and the per-forward context that binds
//! parameters onto a tape.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{BatchStats, Gradients, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BufferId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub value: Tensor,
}

/// Trainable parameters plus non-trainable buffers (batch-norm running stats).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<NamedTensor>,
    buffers: Vec<NamedTensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_param(&mut self, name: String, value: Tensor) -> ParamId {
        debug_assert!(self.params.iter().all(|p| p.name != name), "duplicate param {name}");
        self.params.push(NamedTensor { name, value });
        ParamId(self.params.len() - 1)
    }

    pub fn add_buffer(&mut self, name: String, value: Tensor) -> BufferId {
        debug_assert!(self.buffers.iter().all(|p| p.name != name), "duplicate buffer {name}");
        self.buffers.push(NamedTensor { name, value });
        BufferId(self.buffers.len() - 1)
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Total number of trainable scalars.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn param(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn param_name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn buffer(&self, id: BufferId) -> &Tensor {
        &self.buffers[id.0].value
    }

    pub fn buffer_mut(&mut self, id: BufferId) -> &mut Tensor {
        &mut self.buffers[id.0].value
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn params(&self) -> &[NamedTensor] {
        &self.params
    }

    pub fn buffers(&self) -> &[NamedTensor] {
        &self.buffers
    }

    /// Overwrites values by name from `entries`; every stored tensor must be
    /// present with a matching shape.
    pub fn load_named(&mut self, params: &[NamedTensor], buffers: &[NamedTensor]) -> Result<()> {
        fn fill(dst: &mut [NamedTensor], src: &[NamedTensor], what: &str) -> Result<()> {
            let by_name: HashMap<&str, &Tensor> = src.iter().map(|e| (e.name.as_str(), &e.value)).collect();
            if by_name.len() != dst.len() {
                return Err(Error::Checkpoint(format!(
                    "{what}: expected {} tensors, found {}",
                    dst.len(),
                    by_name.len()
                )));
            }
            for entry in dst.iter_mut() {
                let v = by_name
                    .get(entry.name.as_str())
                    .ok_or_else(|| Error::Checkpoint(format!("missing {what} {}", entry.name)))?;
                if v.shape() != entry.value.shape() {
                    return Err(Error::Checkpoint(format!(
                        "{what} {} has shape {:?}, model expects {:?}",
                        entry.name,
                        v.shape(),
                        entry.value.shape()
                    )));
                }
                entry.value = (*v).clone();
            }
            Ok(())
        }
        fill(&mut self.params, params, "parameter")?;
        fill(&mut self.buffers, buffers, "buffer")
    }

    /// Folds observed batch statistics into the running estimates.
    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate]) {
        for u in updates {
            let n = u.stats.count as f64;
            let unbias = if u.stats.count > 1 { n / (n - 1.0) } else { 1.0 };
            let m = u.momentum;
            for (r, v) in self.buffers[u.mean.0].value.data_mut().iter_mut().zip(&u.stats.mean) {
                *r = (1.0 - m) * *r + m * v;
            }
            for (r, v) in self.buffers[u.var.0].value.data_mut().iter_mut().zip(&u.stats.var) {
                *r = (1.0 - m) * *r + m * v * unbias;
            }
        }
    }
}

/// Pending running-statistics update from one training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BnUpdate {
    pub mean: BufferId,
    pub var: BufferId,
    pub stats: BatchStats,
    pub momentum: f64,
}

/// Registers parameters under a hierarchical name prefix.
pub struct Builder<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a> Builder<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng) -> Self {
        Self { store, rng, prefix: String::new() }
    }

    pub fn child(&mut self, name: &str) -> Builder<'_> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        Builder { store: self.store, rng: self.rng, prefix }
    }

    fn full(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn param(&mut self, name: &str, value: Tensor) -> ParamId {
        let full = self.full(name);
        self.store.add_param(full, value)
    }

    pub fn buffer(&mut self, name: &str, value: Tensor) -> BufferId {
        let full = self.full(name);
        self.store.add_buffer(full, value)
    }

    /// He-style uniform weights `U(-√(6/fan_in), √(6/fan_in))` of shape `[fan_in, fan_out]`.
    pub fn he_uniform(&mut self, fan_in: usize, fan_out: usize) -> Tensor {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| self.rng.gen_range(-bound..bound)).collect();
        Tensor::new(vec![fan_in, fan_out], data).expect("shape matches data")
    }
}

/// State for one forward (and backward) pass.
pub struct Ctx<'s> {
    pub tape: Tape,
    store: &'s ParamStore,
    bound: Vec<Option<Var>>,
    training: bool,
    rng: ChaCha8Rng,
    bn_updates: Vec<BnUpdate>,
}

impl<'s> Ctx<'s> {
    pub fn new(store: &'s ParamStore, training: bool, seed: u64) -> Self {
        Self {
            tape: Tape::new(),
            store,
            bound: vec![None; store.num_params()],
            training,
            rng: ChaCha8Rng::seed_from_u64(seed),
            bn_updates: Vec::new(),
        }
    }

    pub fn training(&self) -> bool {
        self.training
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Tape variable for a parameter, bound on first use.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.tape.leaf(self.store.param(id).clone());
        self.bound[id.0] = Some(v);
        v
    }

    pub(crate) fn record_bn(&mut self, update: BnUpdate) {
        self.bn_updates.push(update);
    }

    pub fn bn_updates(&self) -> &[BnUpdate] {
        &self.bn_updates
    }

    pub fn take_bn_updates(&mut self) -> Vec<BnUpdate> {
        std::mem::take(&mut self.bn_updates)
    }

    /// Per-parameter gradients (zeros for parameters the pass never touched).
    pub fn param_grads(&self, grads: &Gradients) -> Vec<Vec<f64>> {
        self.store
            .param_ids()
            .map(|id| match self.bound[id.0] {
                Some(v) => grads.get_or_zeros(v, self.store.param(id).len()),
                None => vec![0.0; self.store.param(id).len()],
            })
            .collect()
    }
}

/// Worst finite-difference disagreement found for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamReport {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_index: usize,
}

/// Central-difference check of every parameter gradient of a scalar
/// objective built by `f`. The objective must be deterministic, so run it
/// with a non-training context or with dropout disabled.
pub fn param_gradcheck<F>(store: &ParamStore, eps: f64, f: F) -> Result<Vec<ParamReport>>
where
    F: Fn(&mut Ctx) -> Result<Var>,
{
    let scalar = |store: &ParamStore| -> Result<f64> {
        let mut ctx = Ctx::new(store, false, 0);
        let out = f(&mut ctx)?;
        ctx.tape
            .value(out)
            .item()
            .ok_or_else(|| Error::Contract("objective must be scalar".into()))
    };
    let mut ctx = Ctx::new(store, false, 0);
    let out = f(&mut ctx)?;
    let grads = ctx.tape.backward(out)?;
    let analytic = ctx.param_grads(&grads);
    let base = ctx.tape.value(out).item().unwrap_or(f64::NAN);
    if scalar(store)?.to_bits() != base.to_bits() {
        return Err(Error::Contract("objective is not deterministic".into()));
    }

    let mut probe = store.clone();
    let mut reports = Vec::with_capacity(store.num_params());
    for id in store.param_ids() {
        let mut worst = (0.0f64, 0usize);
        for i in 0..store.param(id).len() {
            let orig = store.param(id).data()[i];
            probe.param_mut(id).data_mut()[i] = orig + eps;
            let plus = scalar(&probe)?;
            probe.param_mut(id).data_mut()[i] = orig - eps;
            let minus = scalar(&probe)?;
            probe.param_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = crate::tensor::relative_error(analytic[id.0][i], numeric);
            if err > worst.0 {
                worst = (err, i);
            }
        }
        reports.push(ParamReport {
            name: store.param_name(id).to_string(),
            max_rel_error: worst.0,
            worst_index: worst.1,
        });
    }
    Ok(reports)
}
