use serde::{Deserialize, Serialize};

use super::SegmentationOutput;
use crate::error::{contract_err, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    #[serde(default = "default_smoothing")]
    pub label_smoothing: f64,
    /// Weight of each auxiliary output, coarsest first. Empty trains on the main loss alone.
    #[serde(default = "default_aux")]
    pub aux_weights: Vec<f64>,
}

fn default_smoothing() -> f64 {
    0.1
}

fn default_aux() -> Vec<f64> {
    vec![0.4; 4]
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { label_smoothing: default_smoothing(), aux_weights: default_aux() }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return contract_err(format!("label smoothing {} outside [0, 1)", self.label_smoothing));
        }
        if self.aux_weights.iter().any(|&a| !(a >= 0.0) || !a.is_finite()) {
            return contract_err("auxiliary weights must be finite and non-negative");
        }
        Ok(())
    }
}

pub struct LossTerms {
    pub total: Var,
    pub main: Var,
    /// Unweighted auxiliary losses, coarsest first.
    pub aux: Vec<Var>,
}

impl LossTerms {
    pub fn values(&self, tape: &Tape) -> (f64, f64, Vec<f64>) {
        let v = |x: Var| tape.value(x).data()[0];
        (v(self.total), v(self.main), self.aux.iter().map(|&a| v(a)).collect())
    }
}

/// Labels of the points retained at each auxiliary output's level.
pub fn aux_targets(out: &SegmentationOutput, labels: &[usize]) -> Vec<Vec<usize>> {
    out.aux_levels
        .iter()
        .map(|&l| out.pyramid.levels[l].origin.iter().map(|&i| labels[i]).collect())
        .collect()
}

/// Main cross-entropy plus the weighted auxiliary terms.
pub fn composite_loss(tape: &mut Tape, out: &SegmentationOutput, labels: &[usize], cfg: &LossConfig) -> Result<LossTerms> {
    cfg.validate()?;
    let eps = cfg.label_smoothing;
    let main = tape.smoothed_cross_entropy(out.logits, labels, eps)?;
    if cfg.aux_weights.is_empty() {
        // main loss only: the auxiliary heads are left out of the graph
        return Ok(LossTerms { total: main, main, aux: Vec::new() });
    }
    if cfg.aux_weights.len() != out.aux_logits.len() {
        return contract_err(format!(
            "{} auxiliary weights for {} auxiliary outputs",
            cfg.aux_weights.len(),
            out.aux_logits.len()
        ));
    }
    let mut total = main;
    let mut aux = Vec::with_capacity(out.aux_logits.len());
    for ((&logits, targets), &alpha) in out.aux_logits.iter().zip(aux_targets(out, labels)).zip(&cfg.aux_weights) {
        let term = tape.smoothed_cross_entropy(logits, &targets, eps)?;
        aux.push(term);
        let weighted = tape.scale(term, alpha)?;
        total = tape.add(total, weighted)?;
    }
    Ok(LossTerms { total, main, aux })
}

/// Classification loss for a `[1, C]` logit row.
pub fn classification_loss(tape: &mut Tape, logits: Var, label: usize, smoothing: f64) -> Result<Var> {
    tape.smoothed_cross_entropy(logits, &[label], smoothing)
}

/// Softmax probabilities of `[N, C]` logits, row by row.
pub fn softmax_rows(logits: &Tensor) -> Vec<Vec<f64>> {
    let c = logits.last_dim();
    logits
        .data()
        .chunks_exact(c)
        .map(|row| {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
            let z: f64 = e.iter().sum();
            e.into_iter().map(|v| v / z).collect()
        })
        .collect()
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
