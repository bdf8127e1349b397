//! Image and mask I/O, resizing, dataset manifests and synthetic data.

mod image;
mod manifest;
mod synth;

pub use image::{decode_pgm, decode_png, encode_pgm, read_gray, write_pgm, GrayImage};
pub use manifest::{load_samples, DatasetManifest, ManifestEntry, Normalization};
pub use synth::{synth_dataset, write_dataset, SynthConfig, SynthTarget, MAX_TARGET_SIDE};

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::metrics::BinaryMask;
use crate::tensor::kernels::upsample_bilinear_forward;
use crate::tensor::Tensor;

/// Mask pixels strictly above this value are foreground.
pub const MASK_THRESHOLD: u8 = 127;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("{path}: unsupported image: {msg}")]
    Unsupported { path: PathBuf, msg: String },
    #[error("sample `{id}`: image is {image:?} but mask is {mask:?}")]
    DimMismatch { id: String, image: (usize, usize), mask: (usize, usize) },
    #[error("invalid target size {0}x{1}: must be positive multiples of 16")]
    InvalidSize(usize, usize),
    #[error("{0}")]
    Invalid(String),
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io { path: path.to_path_buf(), source }
    }
}

/// One image `[3,H,W]` in `[0,1]` with its mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Tensor<f32>,
    pub mask: BinaryMask,
}

impl Sample {
    /// `(height, width)`.
    pub fn size(&self) -> (usize, usize) {
        (self.mask.height(), self.mask.width())
    }
}

/// Grayscale replicated to three channels and scaled to `[0,1]`.
pub fn gray_to_tensor(img: &GrayImage) -> Tensor<f32> {
    let plane: Vec<f32> = img.pixels.iter().map(|p| f32::from(*p) / 255.0).collect();
    let data = plane.repeat(3);
    Tensor::new(vec![3, img.height, img.width], data).expect("three planes")
}

pub fn gray_to_mask(img: &GrayImage) -> BinaryMask {
    BinaryMask::from_bits(img.width, img.height, img.pixels.iter().map(|p| *p > MASK_THRESHOLD).collect()).expect("dims match")
}

pub fn mask_to_gray(mask: &BinaryMask) -> GrayImage {
    GrayImage::new(mask.width(), mask.height(), mask.bits().iter().map(|b| if *b { 255 } else { 0 }).collect()).expect("dims match")
}

pub fn load_image(path: &Path) -> Result<Tensor<f32>, DataError> {
    read_gray(path).map(|g| gray_to_tensor(&g))
}

pub fn load_mask(path: &Path) -> Result<BinaryMask, DataError> {
    read_gray(path).map(|g| gray_to_mask(&g))
}

pub fn check_target(size: (usize, usize)) -> Result<(), DataError> {
    let (h, w) = size;
    if h == 0 || w == 0 || h % 16 != 0 || w % 16 != 0 {
        return Err(DataError::InvalidSize(h, w));
    }
    Ok(())
}

/// Nearest-neighbour resize with half-pixel centres.
pub fn resize_mask(mask: &BinaryMask, (oh, ow): (usize, usize)) -> BinaryMask {
    let (w, h) = mask.dims();
    let src = |o: usize, out: usize, inp: usize| (((o as f64 + 0.5) * inp as f64 / out as f64).floor() as usize).min(inp - 1);
    BinaryMask::from_fn(ow, oh, |x, y| mask.get(src(x, ow, w), src(y, oh, h)))
}

/// Resizes the image bilinearly and the mask by nearest neighbour.
pub fn prepare(sample: &Sample, target: (usize, usize)) -> Result<Sample, DataError> {
    check_target(target)?;
    let [c, h, w] = <[usize; 3]>::try_from(sample.image.shape()).map_err(|_| DataError::Invalid(format!("sample `{}` image is not [C,H,W]", sample.id)))?;
    if (w, h) != sample.mask.dims() {
        return Err(DataError::DimMismatch { id: sample.id.clone(), image: (h, w), mask: sample.size() });
    }
    if (h, w) == target {
        return Ok(sample.clone());
    }
    let data = upsample_bilinear_forward(sample.image.data(), c, (h, w), target);
    Ok(Sample {
        id: sample.id.clone(),
        image: Tensor::new(vec![c, target.0, target.1], data).expect("resized shape"),
        mask: resize_mask(&sample.mask, target),
    })
}

/// Stacks samples into `[N,3,H,W]` images and `[N,1,H,W]` 0/1 targets.
pub fn batch(samples: &[&Sample]) -> Result<(Tensor<f32>, Tensor<f32>), DataError> {
    let first = samples.first().ok_or_else(|| DataError::Invalid("empty batch".into()))?;
    let (h, w) = first.size();
    let c = first.image.shape()[0];
    let mut images = Vec::with_capacity(samples.len() * c * h * w);
    let mut masks = Vec::with_capacity(samples.len() * h * w);
    for s in samples {
        if s.size() != (h, w) || s.image.shape() != first.image.shape() {
            return Err(DataError::DimMismatch { id: s.id.clone(), image: (h, w), mask: s.size() });
        }
        images.extend_from_slice(s.image.data());
        masks.extend(s.mask.bits().iter().map(|b| if *b { 1.0 } else { 0.0 }));
    }
    let n = samples.len();
    Ok((Tensor::new(vec![n, c, h, w], images).expect("stacked"), Tensor::new(vec![n, 1, h, w], masks).expect("stacked")))
}
