//! Confusion matrices and segmentation scores.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Counts indexed `[truth][prediction]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scores {
    pub overall_accuracy: f64,
    pub mean_accuracy: f64,
    pub mean_iou: f64,
    /// `None` for classes absent from both truth and prediction.
    pub iou: Vec<Option<f64>>,
    /// `None` for classes absent from the truth.
    pub accuracy: Vec<Option<f64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self { classes, counts: vec![0; classes * classes] }
    }

    pub fn from_counts(rows: &[Vec<u64>]) -> Result<Self> {
        let c = rows.len();
        if rows.iter().any(|r| r.len() != c) {
            return Err(Error::Shape("confusion matrix must be square".into()));
        }
        Ok(Self { classes: c, counts: rows.concat() })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn update(&mut self, truth: &[usize], pred: &[usize]) -> Result<()> {
        if truth.len() != pred.len() {
            return Err(Error::Shape(format!("{} truths for {} predictions", truth.len(), pred.len())));
        }
        if let Some(&bad) = truth.iter().chain(pred).find(|&&l| l >= self.classes) {
            return Err(Error::Index { index: bad, bound: self.classes });
        }
        for (&t, &p) in truth.iter().zip(pred) {
            self.counts[t * self.classes + p] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::Shape("cannot merge matrices of different class counts".into()));
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Ok(())
    }

    /// Overall accuracy, mean class accuracy and mean IoU. Classes with no
    /// ground-truth points are left out of the accuracy mean; classes absent
    /// from both truth and prediction are left out of the IoU mean.
    pub fn compute(&self) -> Result<Scores> {
        let total = self.total();
        if total == 0 {
            return Err(Error::Validation("confusion matrix is empty".into()));
        }
        let c = self.classes;
        let diag: Vec<u64> = (0..c).map(|i| self.get(i, i)).collect();
        let row: Vec<u64> = (0..c).map(|i| (0..c).map(|j| self.get(i, j)).sum()).collect();
        let col: Vec<u64> = (0..c).map(|j| (0..c).map(|i| self.get(i, j)).sum()).collect();
        let accuracy: Vec<Option<f64>> =
            (0..c).map(|i| (row[i] > 0).then(|| diag[i] as f64 / row[i] as f64)).collect();
        let iou: Vec<Option<f64>> = (0..c)
            .map(|i| {
                let union = row[i] + col[i] - diag[i];
                (union > 0).then(|| diag[i] as f64 / union as f64)
            })
            .collect();
        let mean = |v: &[Option<f64>]| {
            let present: Vec<f64> = v.iter().flatten().copied().collect();
            present.iter().sum::<f64>() / present.len() as f64
        };
        Ok(Scores {
            overall_accuracy: diag.iter().sum::<u64>() as f64 / total as f64,
            mean_accuracy: mean(&accuracy),
            mean_iou: mean(&iou),
            iou,
            accuracy,
        })
    }
}

impl Scores {
    /// Fixed-width table: one header row of class names, one row of IoU.
    pub fn table(&self, names: &[String]) -> String {
        let mut head = format!("{:>8} {:>8} {:>8}", "OA", "mAcc", "mIoU");
        let mut vals = format!(
            "{:>8.2} {:>8.2} {:>8.2}",
            100.0 * self.overall_accuracy,
            100.0 * self.mean_accuracy,
            100.0 * self.mean_iou
        );
        for (i, iou) in self.iou.iter().enumerate() {
            let name = names.get(i).cloned().unwrap_or_else(|| format!("class{i}"));
            write!(head, " {name:>10}").unwrap();
            match iou {
                Some(v) => write!(vals, " {:>10.2}", 100.0 * v).unwrap(),
                None => write!(vals, " {:>10}", "-").unwrap(),
            }
        }
        format!("{head}\n{vals}\n")
    }

    /// `key=value` lines with fractions in [0, 1].
    pub fn key_values(&self) -> String {
        let mut out = format!(
            "oa={}\nmacc={}\nmiou={}\n",
            self.overall_accuracy, self.mean_accuracy, self.mean_iou
        );
        for (i, iou) in self.iou.iter().enumerate() {
            match iou {
                Some(v) => writeln!(out, "iou.{i}={v}").unwrap(),
                None => writeln!(out, "iou.{i}=nan").unwrap(),
            }
        }
        out
    }
}
