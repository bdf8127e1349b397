//! Forward and backward kernels on raw row-major buffers.
//!
//! These functions know nothing about the tape; they take shapes explicitly
//! and are reused by [`Tape`](super::Tape) and by tests as independent
//! reference points.

mod conv;
mod norm;
mod pool;

pub use conv::{conv1d_backward, conv1d_forward, conv2d_backward, conv2d_forward, conv_out_len, Conv2dGrads};
pub use norm::{
    batch_norm_backward, batch_norm_eval, batch_norm_train, layer_norm_backward, layer_norm_forward,
    NormSaved,
};
pub use pool::{
    bilinear_axis, maxpool2_backward, maxpool2_forward, upsample_bilinear_backward,
    upsample_bilinear_forward, AxisWeights,
};

use crate::scalar::Scalar;

/// Splits `shape` around `axis` into `(outer, axis_len, inner)`.
pub fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn softmax_forward<T: Scalar>(x: &[T], shape: &[usize], axis: usize) -> Vec<T> {
    let (outer, len, inner) = split_axis(shape, axis);
    let mut y = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut max = T::neg_infinity();
            for a in 0..len {
                max = max.max(x[base + a * inner]);
            }
            let mut sum = T::zero();
            for a in 0..len {
                let e = (x[base + a * inner] - max).exp();
                y[base + a * inner] = e;
                sum += e;
            }
            for a in 0..len {
                y[base + a * inner] /= sum;
            }
        }
    }
    y
}

pub fn softmax_backward<T: Scalar>(y: &[T], dy: &[T], shape: &[usize], axis: usize) -> Vec<T> {
    let (outer, len, inner) = split_axis(shape, axis);
    let mut dx = vec![T::zero(); y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut dot = T::zero();
            for a in 0..len {
                dot += dy[base + a * inner] * y[base + a * inner];
            }
            for a in 0..len {
                let k = base + a * inner;
                dx[k] = y[k] * (dy[k] - dot);
            }
        }
    }
    dx
}

/// Numerically stable `sigmoid`.
pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Mean binary cross-entropy on logits: `max(z,0) − z·y + ln(1 + e^{−|z|})`.
pub fn bce_with_logits<T: Scalar>(logits: &[T], target: &[T]) -> T {
    let mut acc = 0.0f64;
    for (&z, &y) in logits.iter().zip(target) {
        let term = z.max(T::zero()) - z * y + (-z.abs()).exp().ln_1p();
        acc += term.to_f64().unwrap_or(f64::NAN);
    }
    T::lit(acc / logits.len() as f64)
}
