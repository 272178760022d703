//! Confusion matrices and mean intersection-over-union.

use crate::error::{Error, Result};
use crate::tensor::{Labels, IGNORE_INDEX};

#[derive(Clone, Debug, PartialEq)]
pub struct MiouReport {
    pub per_class: Vec<Option<f64>>,
    pub mean: f64,
}

/// `counts[gt][pred]` over pixels whose ground truth is not ignored.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn accumulate(&mut self, gt: &Labels, pred: &Labels) -> Result<()> {
        if gt.height() != pred.height() || gt.width() != pred.width() {
            return Err(Error::ShapeMismatch {
                left: vec![gt.height(), gt.width()],
                right: vec![pred.height(), pred.width()],
            });
        }
        for (&g, &p) in gt.data().iter().zip(pred.data()) {
            if g == IGNORE_INDEX {
                continue;
            }
            let (g, p) = (g as usize, p as usize);
            if g >= self.classes {
                return Err(Error::LabelOutOfRange { label: g as u16, classes: self.classes });
            }
            if p >= self.classes {
                return Err(Error::LabelOutOfRange { label: p as u16, classes: self.classes });
            }
            self.counts[g * self.classes + p] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::dim("confusion matrices have different class counts"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Per-class IoU in percent; `None` for classes absent from both
    /// prediction and truth.
    pub fn iou(&self) -> Vec<Option<f64>> {
        (0..self.classes)
            .map(|k| {
                let tp = self.get(k, k);
                let row: u64 = (0..self.classes).map(|p| self.get(k, p)).sum();
                let col: u64 = (0..self.classes).map(|g| self.get(g, k)).sum();
                let union = row + col - tp;
                (union > 0).then(|| 100.0 * tp as f64 / union as f64)
            })
            .collect()
    }

    /// Per-class IoU and their mean over classes with a non-empty union, in percent.
    pub fn miou(&self) -> Result<MiouReport> {
        let per_class = self.iou();
        let present: Vec<f64> = per_class.iter().flatten().copied().collect();
        if present.is_empty() {
            return Err(Error::EmptyMatrix);
        }
        let mean = present.iter().sum::<f64>() / present.len() as f64;
        Ok(MiouReport { per_class, mean })
    }

    pub fn pixel_accuracy(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(Error::EmptyMatrix);
        }
        let diag: u64 = (0..self.classes).map(|k| self.get(k, k)).sum();
        Ok(diag as f64 / total as f64)
    }
}

/// Per-pixel argmax of an `H×W×C` score map, first maximum on ties.
pub fn argmax_labels(scores: &crate::tensor::Tensor) -> Result<Labels> {
    let shape = scores.shape();
    if shape.len() != 3 {
        return Err(Error::dim(format!("expected H×W×C scores, got {shape:?}")));
    }
    let c = shape[2];
    let data = scores
        .data()
        .chunks_exact(c)
        .map(|px| {
            let mut best = 0;
            for k in 1..c {
                if px[k] > px[best] {
                    best = k;
                }
            }
            best as u16
        })
        .collect();
    Labels::new(shape[0], shape[1], data)
}
