//! Synthetic small-target scenes: smooth value-noise clutter with anisotropic
//! Gaussian blobs whose support never exceeds 15×15 pixels.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_target, gray_to_mask, gray_to_tensor, mask_to_gray, write_pgm, DataError, DatasetManifest, GrayImage, ManifestEntry, Sample};

/// Largest target support side.
pub const MAX_TARGET_SIDE: usize = 15;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub count: usize,
    /// `(height, width)`.
    pub size: (usize, usize),
    /// Inclusive range of targets per image.
    pub targets: (usize, usize),
    /// Range of the per-axis Gaussian standard deviation.
    pub sigma: (f64, f64),
    /// Range of the blob peak added on top of the background.
    pub peak: (f64, f64),
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { count: 16, size: (64, 64), targets: (1, 3), sigma: (1.0, 2.2), peak: (0.6, 1.0), seed: 0 }
    }
}

/// Ground-truth description of one placed target.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTarget {
    /// Sub-pixel centre `(x, y)`.
    pub center: (f64, f64),
    pub peak: f64,
    /// Support half-width; the support is `(2r+1)²` pixels.
    pub radius: usize,
}

/// Multi-octave value noise normalised to `[0,1]`.
fn value_noise(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<f64> {
    let mut acc = vec![0.0; h * w];
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    for (cell, amp) in [(32.0, 1.0), (16.0, 0.5), (8.0, 0.25), (4.0, 0.125)] {
        let gh = (h as f64 / cell).ceil() as usize + 2;
        let gw = (w as f64 / cell).ceil() as usize + 2;
        let grid: Vec<f64> = (0..gh * gw).map(|_| rng.random::<f64>()).collect();
        for y in 0..h {
            let fy = y as f64 / cell;
            let (y0, ty) = (fy.floor() as usize, smooth(fy.fract()));
            for x in 0..w {
                let fx = x as f64 / cell;
                let (x0, tx) = (fx.floor() as usize, smooth(fx.fract()));
                let g = |yy: usize, xx: usize| grid[yy * gw + xx];
                let top = g(y0, x0) + (g(y0, x0 + 1) - g(y0, x0)) * tx;
                let bot = g(y0 + 1, x0) + (g(y0 + 1, x0 + 1) - g(y0 + 1, x0)) * tx;
                acc[y * w + x] += amp * (top + (bot - top) * ty);
            }
        }
    }
    let (lo, hi) = acc.iter().fold((f64::MAX, f64::MIN), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    let span = (hi - lo).max(1e-12);
    acc.iter().map(|v| (v - lo) / span).collect()
}

fn place(rng: &mut ChaCha8Rng, cfg: &SynthConfig, placed: &[SynthTarget], radius: usize) -> Option<(f64, f64)> {
    let (h, w) = cfg.size;
    // keeps supports disjoint with at least one background pixel between them
    let gap = (MAX_TARGET_SIDE + 2) as f64;
    for _ in 0..200 {
        let cx = rng.random_range(radius as f64..=(w - 1 - radius) as f64);
        let cy = rng.random_range(radius as f64..=(h - 1 - radius) as f64);
        if placed.iter().all(|t| (t.center.0 - cx).abs() >= gap || (t.center.1 - cy).abs() >= gap) {
            return Some((cx, cy));
        }
    }
    None
}

fn scene(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> (GrayImage, GrayImage, Vec<SynthTarget>) {
    let (h, w) = cfg.size;
    let noise = value_noise(rng, h, w);
    let mut img: Vec<f64> = noise.iter().map(|n| 0.05 + 0.4 * n + rng.random_range(-0.02..0.02)).collect();
    let mut mask = vec![0u8; h * w];
    let count = rng.random_range(cfg.targets.0..=cfg.targets.1);
    let mut targets: Vec<SynthTarget> = Vec::with_capacity(count);
    for _ in 0..count {
        let sx = rng.random_range(cfg.sigma.0..=cfg.sigma.1);
        let sy = rng.random_range(cfg.sigma.0..=cfg.sigma.1);
        let theta = rng.random_range(0.0..PI);
        let peak = rng.random_range(cfg.peak.0..=cfg.peak.1);
        let radius = ((3.0 * sx.max(sy)).ceil() as usize).min(MAX_TARGET_SIDE / 2);
        let Some((cx, cy)) = place(rng, cfg, &targets, radius) else { break };
        let (px, py) = (cx.round() as usize, cy.round() as usize);
        let (cos, sin) = (theta.cos(), theta.sin());
        for y in py - radius..=py + radius {
            for x in px - radius..=px + radius {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                let u = dx * cos + dy * sin;
                let v = -dx * sin + dy * cos;
                let g = peak * (-0.5 * (u * u / (sx * sx) + v * v / (sy * sy))).exp();
                img[y * w + x] += g;
                if g > 0.25 * peak {
                    mask[y * w + x] = 255;
                }
            }
        }
        targets.push(SynthTarget { center: (cx, cy), peak, radius });
    }
    let pixels = img.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    (GrayImage { width: w, height: h, pixels }, GrayImage { width: w, height: h, pixels: mask }, targets)
}

/// Samples with their ground-truth target lists. Images are already
/// quantised to 8 bits so written and re-read datasets are identical.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<(Vec<Sample>, Vec<Vec<SynthTarget>>), DataError> {
    if cfg.count == 0 {
        return Err(DataError::Invalid("synthetic dataset needs at least one image".into()));
    }
    check_target(cfg.size)?;
    if cfg.size.0 < MAX_TARGET_SIDE || cfg.size.1 < MAX_TARGET_SIDE {
        return Err(DataError::Invalid(format!("targets up to {MAX_TARGET_SIDE}px do not fit in {:?}", cfg.size)));
    }
    if cfg.targets.0 > cfg.targets.1 || cfg.sigma.0 <= 0.0 || cfg.sigma.0 > cfg.sigma.1 || cfg.peak.0 > cfg.peak.1 {
        return Err(DataError::Invalid("empty synthetic parameter range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut samples = Vec::with_capacity(cfg.count);
    let mut targets = Vec::with_capacity(cfg.count);
    for i in 0..cfg.count {
        let (img, mask, t) = scene(&mut rng, cfg);
        samples.push(Sample { id: format!("synth{i:04}"), image: gray_to_tensor(&img), mask: gray_to_mask(&mask) });
        targets.push(t);
    }
    Ok((samples, targets))
}

/// Writes `images/<id>.pgm`, `masks/<id>.pgm` and `manifest.txt` under `dir`.
pub fn write_dataset(samples: &[Sample], dir: &Path) -> Result<DatasetManifest, DataError> {
    let first = samples.first().ok_or_else(|| DataError::Invalid("no samples to write".into()))?;
    for sub in ["images", "masks"] {
        fs::create_dir_all(dir.join(sub)).map_err(|e| DataError::io(&dir.join(sub), e))?;
    }
    let mut entries = Vec::with_capacity(samples.len());
    for s in samples {
        let (h, w) = s.size();
        let plane = &s.image.data()[..h * w];
        let img = GrayImage::new(w, h, plane.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()).expect("plane");
        let entry = ManifestEntry { id: s.id.clone(), image: dir.join(format!("images/{}.pgm", s.id)), mask: dir.join(format!("masks/{}.pgm", s.id)) };
        write_pgm(&entry.image, &img)?;
        write_pgm(&entry.mask, &mask_to_gray(&s.mask))?;
        entries.push(entry);
    }
    let manifest = DatasetManifest { size: first.size(), normalization: None, entries };
    manifest.save(&dir.join("manifest.txt"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::label_components;

    #[test]
    fn components_fit_the_size_bound() {
        let cfg = SynthConfig { count: 24, seed: 5, ..Default::default() };
        let (samples, targets) = synth_dataset(&cfg).unwrap();
        for (s, t) in samples.iter().zip(&targets) {
            let comps = label_components(&s.mask);
            assert_eq!(comps.len(), t.len());
            for c in comps {
                let (x0, y0, x1, y1) = c.bbox();
                assert!(x1 - x0 < MAX_TARGET_SIDE && y1 - y0 < MAX_TARGET_SIDE);
            }
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let cfg = SynthConfig { count: 3, seed: 9, ..Default::default() };
        assert_eq!(synth_dataset(&cfg).unwrap(), synth_dataset(&cfg).unwrap());
        let other = SynthConfig { seed: 10, ..cfg.clone() };
        assert_ne!(synth_dataset(&cfg).unwrap().0, synth_dataset(&other).unwrap().0);
    }

    #[test]
    fn rejects_bad_requests() {
        assert!(synth_dataset(&SynthConfig { count: 0, ..Default::default() }).is_err());
        assert!(synth_dataset(&SynthConfig { size: (16, 8), ..Default::default() }).is_err());
    }
}
