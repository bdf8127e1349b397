//! Pixel-level (IoU, nIoU) and target-level (Pd, Fa) segmentation metrics.

mod components;
mod mask;
mod roc;

pub use components::{label_components, Component};
pub use mask::BinaryMask;
pub use roc::{roc_sweep, ProbMap, RocPoint};

use serde::Serialize;
use thiserror::Error;

/// Centroids closer than this (strictly) count as a detection.
pub const MATCH_DISTANCE: f64 = 3.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("{preds} predictions for {gts} ground-truth masks")]
    LengthMismatch { preds: usize, gts: usize },
    #[error("image {index}: prediction is {pred:?}, ground truth is {gt:?}")]
    DimMismatch { index: usize, pred: (usize, usize), gt: (usize, usize) },
    #[error("threshold list is empty")]
    EmptyThresholds,
    #[error("thresholds must be strictly descending")]
    UnsortedThresholds,
    #[error("probability map {0} has values outside [0, 1]")]
    OutOfRange(usize),
}

/// Pixel counts of one prediction/ground-truth pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PixelCounts {
    pub tp: usize,
    /// Ground-truth foreground.
    pub t: usize,
    /// Predicted foreground.
    pub p: usize,
    /// Predicted foreground over ground-truth background.
    pub fp: usize,
    pub all: usize,
}

impl PixelCounts {
    pub fn of(pred: &BinaryMask, gt: &BinaryMask) -> Self {
        let mut c = PixelCounts { all: gt.bits().len(), ..Default::default() };
        for (&p, &g) in pred.bits().iter().zip(gt.bits()) {
            c.t += g as usize;
            c.p += p as usize;
            c.tp += (p && g) as usize;
            c.fp += (p && !g) as usize;
        }
        c
    }

    pub fn union(&self) -> usize {
        self.t + self.p - self.tp
    }

    /// Per-image IoU, 1 when both masks are empty.
    pub fn iou(&self) -> f64 {
        match self.union() {
            0 => 1.0,
            u => self.tp as f64 / u as f64,
        }
    }
}

fn check_pairs(preds: &[BinaryMask], gts: &[BinaryMask]) -> Result<(), MetricsError> {
    if preds.len() != gts.len() {
        return Err(MetricsError::LengthMismatch { preds: preds.len(), gts: gts.len() });
    }
    for (index, (p, g)) in preds.iter().zip(gts).enumerate() {
        if p.dims() != g.dims() {
            return Err(MetricsError::DimMismatch { index, pred: p.dims(), gt: g.dims() });
        }
    }
    Ok(())
}

fn counts(preds: &[BinaryMask], gts: &[BinaryMask]) -> Result<Vec<PixelCounts>, MetricsError> {
    check_pairs(preds, gts)?;
    Ok(preds.iter().zip(gts).map(|(p, g)| PixelCounts::of(p, g)).collect())
}

/// `ΣTP / Σ(T + P − TP)`; 1 when every image is empty in both.
pub fn iou_dataset(preds: &[BinaryMask], gts: &[BinaryMask]) -> Result<f64, MetricsError> {
    let c = counts(preds, gts)?;
    let tp: usize = c.iter().map(|c| c.tp).sum();
    let union: usize = c.iter().map(PixelCounts::union).sum();
    Ok(if union == 0 { 1.0 } else { tp as f64 / union as f64 })
}

/// Mean of per-image IoU.
pub fn niou_dataset(preds: &[BinaryMask], gts: &[BinaryMask]) -> Result<f64, MetricsError> {
    let c = counts(preds, gts)?;
    if c.is_empty() {
        return Ok(f64::NAN);
    }
    Ok(c.iter().map(PixelCounts::iou).sum::<f64>() / c.len() as f64)
}

/// `ΣFP / ΣALL`.
pub fn fa(preds: &[BinaryMask], gts: &[BinaryMask]) -> Result<f64, MetricsError> {
    let c = counts(preds, gts)?;
    let all: usize = c.iter().map(|c| c.all).sum();
    let fp: usize = c.iter().map(|c| c.fp).sum();
    Ok(if all == 0 { 0.0 } else { fp as f64 / all as f64 })
}

fn distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// Ground-truth targets of one image matched by predicted components.
///
/// Candidate pairs are taken greedily by ascending centroid distance (ties by
/// gt then prediction index); each component is used at most once.
pub fn match_targets(pred: &[Component], gt: &[Component]) -> usize {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (j, g) in gt.iter().enumerate() {
        for (k, p) in pred.iter().enumerate() {
            let d = distance(g.centroid, p.centroid);
            if d < MATCH_DISTANCE {
                pairs.push((d, j, k));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut gt_used = vec![false; gt.len()];
    let mut pred_used = vec![false; pred.len()];
    let mut detected = 0;
    for (_, j, k) in pairs {
        if !gt_used[j] && !pred_used[k] {
            gt_used[j] = true;
            pred_used[k] = true;
            detected += 1;
        }
    }
    detected
}

/// Detected and total ground-truth targets over the dataset.
pub fn detections(preds: &[BinaryMask], gts: &[BinaryMask]) -> Result<(usize, usize), MetricsError> {
    check_pairs(preds, gts)?;
    let mut detected = 0;
    let mut total = 0;
    for (p, g) in preds.iter().zip(gts) {
        let gc = label_components(g);
        total += gc.len();
        if !gc.is_empty() {
            detected += match_targets(&label_components(p), &gc);
        }
    }
    Ok((detected, total))
}

/// Fraction of ground-truth targets detected; NaN without any targets.
pub fn pd(preds: &[BinaryMask], gts: &[BinaryMask]) -> Result<f64, MetricsError> {
    let (detected, total) = detections(preds, gts)?;
    Ok(ratio_or_nan(detected, total))
}

fn ratio_or_nan(detected: usize, total: usize) -> f64 {
    if total == 0 {
        log::warn!("no ground-truth targets in the dataset; Pd is undefined");
        f64::NAN
    } else {
        detected as f64 / total as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub iou: f64,
    pub niou: f64,
    pub pd: f64,
    pub fa: f64,
    pub per_image_iou: Vec<f64>,
    pub tp_sum: usize,
    pub t_sum: usize,
    pub fp_pixels: usize,
    pub all_pixels: usize,
    pub detected: usize,
    pub gt_targets: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub roc: Option<Vec<RocPoint>>,
}

/// All headline metrics in one pass.
pub fn evaluate(preds: &[BinaryMask], gts: &[BinaryMask]) -> Result<MetricsReport, MetricsError> {
    let c = counts(preds, gts)?;
    let (detected, gt_targets) = detections(preds, gts)?;
    let tp_sum = c.iter().map(|c| c.tp).sum();
    let union: usize = c.iter().map(PixelCounts::union).sum();
    let fp_pixels = c.iter().map(|c| c.fp).sum();
    let all_pixels = c.iter().map(|c| c.all).sum();
    let per_image_iou: Vec<f64> = c.iter().map(PixelCounts::iou).collect();
    Ok(MetricsReport {
        iou: if union == 0 { 1.0 } else { tp_sum as f64 / union as f64 },
        niou: if c.is_empty() { f64::NAN } else { per_image_iou.iter().sum::<f64>() / c.len() as f64 },
        pd: ratio_or_nan(detected, gt_targets),
        fa: if all_pixels == 0 { 0.0 } else { fp_pixels as f64 / all_pixels as f64 },
        per_image_iou,
        tp_sum,
        t_sum: c.iter().map(|c| c.t).sum(),
        fp_pixels,
        all_pixels,
        detected,
        gt_targets,
        roc: None,
    })
}
