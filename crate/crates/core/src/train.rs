//! Mini-batch training and voting evaluation of the segmentation network.

use std::fmt;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{augment, coverage_windows, sample_fixed, AugmentOptions, VoteAccumulator};
use crate::error::{Error, Result};
use crate::geometry::{normalize_block, partition_blocks, BlockOffset, NeighborMode, PointCloud};
use crate::metrics::{ConfusionMatrix, Scores};
use crate::network::{
    argmax, composite_loss, softmax_rows, Adam, AdamConfig, Checkpoint, LossConfig, NetworkConfig, SegmentationNet,
};
use crate::params::{BnUpdate, Ctx, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default = "two")]
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub loss: LossConfig,
    /// Points fed to the network per sample.
    pub points: usize,
    #[serde(default)]
    pub augment: AugmentOptions,
    /// Nearest-first neighbour selection during training instead of random picks.
    #[serde(default)]
    pub deterministic: bool,
    /// Stop once the evaluation mIoU reaches this value.
    #[serde(default)]
    pub target_miou: Option<f64>,
}

fn two() -> usize {
    2
}

impl TrainConfig {
    /// Batch 2 and paper optimizer settings on 2048-point samples.
    pub fn toy() -> Self {
        Self {
            adam: AdamConfig::default(),
            batch_size: 2,
            epochs: 50,
            seed: 0,
            loss: LossConfig::default(),
            points: 2048,
            augment: AugmentOptions::default(),
            deterministic: false,
            target_miou: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.batch_size == 0 || self.points == 0 {
            return Err(Error::Config("batch size and point count must be positive".into()));
        }
        let a = &self.adam;
        if !(a.lr > 0.0) || !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return Err(Error::Config("invalid Adam hyperparameters".into()));
        }
        Ok(())
    }
}

/// Losses and accuracy of one epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub total: f64,
    pub main: f64,
    pub aux: Vec<f64>,
    pub train_oa: f64,
    pub eval: Option<Scores>,
    pub seconds: f64,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let aux: Vec<String> = self.aux.iter().map(|a| format!("{a:.6}")).collect();
        write!(
            f,
            "epoch={} loss={:.6} main={:.6} aux={} train_oa={:.4}",
            self.epoch,
            self.total,
            self.main,
            aux.join(","),
            self.train_oa
        )?;
        if let Some(s) = &self.eval {
            write!(f, " eval_oa={:.4} eval_miou={:.4}", s.overall_accuracy, s.mean_iou)?;
        }
        write!(f, " secs={:.1}", self.seconds)
    }
}

/// Mixes a base seed with up to two counters.
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A scene block moved to its local frame, with the scene indices it holds.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneBlock {
    pub cloud: PointCloud,
    pub indices: Vec<usize>,
    pub offset: BlockOffset,
}

/// Cuts a scene into `block_size` columns (one block when `None`) and
/// normalizes each.
pub fn scene_blocks(scene: &PointCloud, block_size: Option<f64>) -> Result<Vec<SceneBlock>> {
    let parts = match block_size {
        Some(b) => partition_blocks(scene, b)?,
        None => vec![(0..scene.len()).collect()],
    };
    parts
        .into_iter()
        .map(|indices| {
            let sub = scene.select(&indices);
            let (positions, offset) = normalize_block(&sub.positions)?;
            Ok(SceneBlock { cloud: PointCloud { positions, ..sub }, indices, offset })
        })
        .collect()
}

/// Normalized blocks of every scene, flattened.
pub fn block_clouds(scenes: &[PointCloud], block_size: Option<f64>) -> Result<Vec<PointCloud>> {
    let mut out = Vec::new();
    for s in scenes {
        out.extend(scene_blocks(s, block_size)?.into_iter().map(|b| b.cloud));
    }
    Ok(out)
}

/// Moves each scene to its local block frame.
pub fn normalize_scenes(scenes: &[PointCloud]) -> Result<Vec<PointCloud>> {
    block_clouds(scenes, None)
}

struct SampleResult {
    grads: Vec<Vec<f64>>,
    bn: Vec<BnUpdate>,
    total: f64,
    main: f64,
    aux: Vec<f64>,
    correct: usize,
    points: usize,
}

pub struct Trainer {
    pub net: SegmentationNet,
    pub store: ParamStore,
    pub optimizer: Adam,
    pub config: TrainConfig,
    pub epoch: usize,
}

impl Trainer {
    pub fn new(net_config: &NetworkConfig, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let net = SegmentationNet::new(&mut store, net_config, derive_seed(config.seed, 0, 0))?;
        let aux = config.loss.aux_weights.len();
        if aux != 0 && aux != net_config.layers.len() {
            return Err(Error::Config(format!(
                "{} auxiliary weights for {} encoder layers",
                config.loss.aux_weights.len(),
                net_config.layers.len()
            )));
        }
        let optimizer = Adam::new(config.adam, &store);
        Ok(Self { net, store, optimizer, config: config.clone(), epoch: 0 })
    }

    /// Rebuilds a trainer from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(net_config: &NetworkConfig, config: &TrainConfig, ck: &Checkpoint) -> Result<Self> {
        let mut t = Self::new(net_config, config)?;
        ck.restore(&mut t.store)?;
        if let Some(opt) = &ck.optimizer {
            t.optimizer = opt.clone();
            t.optimizer.config = config.adam;
        }
        Ok(t)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint::capture(self.net.config.to_toml()?, &self.store, Some(&self.optimizer)))
    }

    fn sample_step(&self, scene: &PointCloud, seed: u64) -> Result<SampleResult> {
        let cfg = &self.config;
        let labels_all = scene.labels.as_ref().ok_or_else(|| Error::Validation("training scene lacks labels".into()))?;
        let idx = sample_fixed(scene.len(), cfg.points, seed)?;
        let cloud = augment(&scene.select(&idx), derive_seed(seed, 1, 0), &cfg.augment);
        let labels: Vec<usize> = idx.iter().map(|&i| labels_all[i]).collect();
        let mode = if cfg.deterministic { NeighborMode::Deterministic } else { NeighborMode::Seeded(seed) };
        let mut ctx = Ctx::new(&self.store, true, derive_seed(seed, 2, 0));
        let out = self.net.forward(&mut ctx, &cloud, mode)?;
        let terms = composite_loss(&mut ctx.tape, &out, &labels, &cfg.loss)?;
        let (total, main, aux) = terms.values(&ctx.tape);
        let grads = ctx.tape.backward(terms.total)?;
        let logits = ctx.tape.value(out.logits);
        let c = logits.last_dim();
        let correct = logits
            .data()
            .chunks_exact(c)
            .zip(&labels)
            .filter(|(row, &l)| argmax(row) == l)
            .count();
        Ok(SampleResult {
            grads: ctx.param_grads(&grads),
            bn: ctx.take_bn_updates(),
            total,
            main,
            aux,
            correct,
            points: labels.len(),
        })
    }

    /// One pass over `scenes` in a seeded order.
    pub fn train_epoch(&mut self, scenes: &[PointCloud]) -> Result<EpochLog> {
        let start = Instant::now();
        let epoch = self.epoch;
        let mut order: Vec<usize> = (0..scenes.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, 3, epoch as u64)));
        let (mut total, mut main, mut aux) = (0.0, 0.0, vec![0.0; self.config.loss.aux_weights.len()]);
        let (mut correct, mut seen) = (0usize, 0usize);
        for batch in order.chunks(self.config.batch_size) {
            let results: Vec<Result<SampleResult>> = batch
                .par_iter()
                .map(|&i| {
                    let seed = derive_seed(self.config.seed, 4 + epoch as u64, i as u64);
                    self.sample_step(&scenes[i], seed)
                })
                .collect();
            let results = results.into_iter().collect::<Result<Vec<_>>>()?;
            let inv = 1.0 / results.len() as f64;
            let mut grads = results[0].grads.clone();
            for r in &results[1..] {
                for (g, h) in grads.iter_mut().zip(&r.grads) {
                    g.iter_mut().zip(h).for_each(|(a, b)| *a += b);
                }
            }
            grads.iter_mut().flatten().for_each(|g| *g *= inv);
            self.optimizer.update(&mut self.store, &grads)?;
            for r in &results {
                self.store.apply_bn_updates(&r.bn);
                total += r.total;
                main += r.main;
                aux.iter_mut().zip(&r.aux).for_each(|(a, b)| *a += b);
                correct += r.correct;
                seen += r.points;
            }
        }
        let n = scenes.len().max(1) as f64;
        self.epoch += 1;
        Ok(EpochLog {
            epoch: self.epoch,
            total: total / n,
            main: main / n,
            aux: aux.into_iter().map(|a| a / n).collect(),
            train_oa: correct as f64 / seen.max(1) as f64,
            eval: None,
            seconds: start.elapsed().as_secs_f64(),
        })
    }

    /// Trains for the configured number of epochs, evaluating on `eval` after
    /// each one when given. `on_epoch` sees every log line as it is produced.
    pub fn fit(
        &mut self,
        train: &[PointCloud],
        eval: Option<&[PointCloud]>,
        mut on_epoch: impl FnMut(&EpochLog, &Trainer) -> Result<()>,
    ) -> Result<Vec<EpochLog>> {
        let mut logs = Vec::new();
        while self.epoch < self.config.epochs {
            let mut log = self.train_epoch(train)?;
            if let Some(eval) = eval {
                log.eval = Some(evaluate(&self.net, &self.store, eval, self.config.points, self.config.seed)?.1);
            }
            on_epoch(&log, self)?;
            let done = matches!((&log.eval, self.config.target_miou), (Some(s), Some(t)) if s.mean_iou >= t);
            logs.push(log);
            if done {
                break;
            }
        }
        Ok(logs)
    }
}

/// Per-point labels for a whole scene by softmax voting over coverage windows.
pub fn predict_scene(
    net: &SegmentationNet,
    store: &ParamStore,
    scene: &PointCloud,
    points: usize,
    seed: u64,
) -> Result<(Vec<usize>, usize)> {
    let c = net.config.num_classes;
    let mut acc = VoteAccumulator::new(scene.len(), c);
    let windows = coverage_windows(scene.len(), points, seed)?;
    for w in &windows {
        let mut ctx = Ctx::new(store, false, 0);
        let out = net.forward(&mut ctx, &scene.select(w), NeighborMode::Deterministic)?;
        acc.update(w, &softmax_rows(ctx.tape.value(out.logits)))?;
    }
    Ok((acc.finalize()?, windows.len()))
}

/// Voted labels for a raw scene, block by block.
pub fn predict_blocks(
    net: &SegmentationNet,
    store: &ParamStore,
    scene: &PointCloud,
    block_size: Option<f64>,
    points: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let mut labels = vec![0; scene.len()];
    for (b, block) in scene_blocks(scene, block_size)?.iter().enumerate() {
        let (pred, _) = predict_scene(net, store, &block.cloud, points, derive_seed(seed, 6, b as u64))?;
        for (&i, l) in block.indices.iter().zip(pred) {
            labels[i] = l;
        }
    }
    Ok(labels)
}

/// Confusion matrix and scores of voted predictions over labelled scenes.
pub fn evaluate(
    net: &SegmentationNet,
    store: &ParamStore,
    scenes: &[PointCloud],
    points: usize,
    seed: u64,
) -> Result<(ConfusionMatrix, Scores)> {
    let c = net.config.num_classes;
    let per_scene: Vec<Result<ConfusionMatrix>> = scenes
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let truth = s.labels.as_ref().ok_or_else(|| Error::Validation("evaluation scene lacks labels".into()))?;
            let (pred, _) = predict_scene(net, store, s, points, derive_seed(seed, 5, i as u64))?;
            let mut cm = ConfusionMatrix::new(c);
            cm.update(truth, &pred)?;
            Ok(cm)
        })
        .collect();
    let mut cm = ConfusionMatrix::new(c);
    for m in per_scene {
        cm.merge(&m?)?;
    }
    let scores = cm.compute()?;
    Ok((cm, scores))
}
