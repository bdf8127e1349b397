use serde::{Deserialize, Serialize};

use super::{detections, fa, BinaryMask, MetricsError};

/// Probabilities of one image in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
}

impl ProbMap {
    pub fn binarize(&self, threshold: f32) -> BinaryMask {
        BinaryMask::threshold(self.width, self.height, &self.values, threshold).expect("probability map length matches dims")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub pd: f64,
    pub fa: f64,
}

/// Pd and Fa at each threshold, binarising with `p >= threshold`.
pub fn roc_sweep(maps: &[ProbMap], gts: &[BinaryMask], thresholds: &[f64]) -> Result<Vec<RocPoint>, MetricsError> {
    if thresholds.is_empty() {
        return Err(MetricsError::EmptyThresholds);
    }
    if thresholds.windows(2).any(|w| !(w[0] > w[1])) {
        return Err(MetricsError::UnsortedThresholds);
    }
    for (i, m) in maps.iter().enumerate() {
        if m.values.len() != m.width * m.height || m.values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(MetricsError::OutOfRange(i));
        }
    }
    let mut out = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let preds: Vec<BinaryMask> = maps.iter().map(|m| BinaryMask::from_bits(m.width, m.height, m.values.iter().map(|v| f64::from(*v) >= t).collect()).unwrap()).collect();
        let (detected, total) = detections(&preds, gts)?;
        let pd = if total == 0 { f64::NAN } else { detected as f64 / total as f64 };
        out.push(RocPoint { threshold: t, pd, fa: fa(&preds, gts)? });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn case() -> (Vec<ProbMap>, Vec<BinaryMask>) {
        let values: Vec<f32> = (0..64).map(|i| ((i * 37) % 64) as f32 / 63.0).collect();
        let gt = BinaryMask::from_fn(8, 8, |x, y| (2..4).contains(&x) && (2..4).contains(&y));
        (vec![ProbMap { width: 8, height: 8, values }], vec![gt])
    }

    #[test]
    fn extremes() {
        let (maps, gts) = case();
        let r = roc_sweep(&maps, &gts, &[1.5, 0.0]).unwrap();
        assert_eq!((r[0].pd, r[0].fa), (0.0, 0.0));
        assert_eq!(r[1].pd, 1.0);
        assert_eq!(r[1].fa, 60.0 / 64.0);
    }

    #[test]
    fn fa_is_monotone() {
        let (maps, gts) = case();
        let th: Vec<f64> = (0..=20).map(|i| 1.0 - i as f64 / 20.0).collect();
        let r = roc_sweep(&maps, &gts, &th).unwrap();
        assert!(r.windows(2).all(|w| w[1].fa >= w[0].fa));
    }

    #[test]
    fn bad_thresholds() {
        let (maps, gts) = case();
        assert_eq!(roc_sweep(&maps, &gts, &[]), Err(MetricsError::EmptyThresholds));
        assert_eq!(roc_sweep(&maps, &gts, &[0.2, 0.5]), Err(MetricsError::UnsortedThresholds));
    }
}
