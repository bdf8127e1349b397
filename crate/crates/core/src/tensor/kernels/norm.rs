use crate::scalar::Scalar;

/// Per-group statistics kept for the backward pass.
#[derive(Debug, Clone)]
pub struct NormSaved<T> {
    pub mean: Vec<T>,
    pub inv_std: Vec<T>,
    /// `true` when the statistics were computed from the input itself, so
    /// gradients flow through them.
    pub from_batch: bool,
}

fn mean_var(values: impl Iterator<Item = f64> + Clone, count: usize) -> (f64, f64) {
    let mean = values.clone().sum::<f64>() / count as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / count as f64;
    (mean, var)
}

/// Batch normalization with batch statistics over `N,H,W` for each channel.
///
/// Returns the output, the saved statistics, and the per-channel unbiased
/// batch variance used for running-stat updates.
pub fn batch_norm_train<T: Scalar>(
    x: &[T],
    [n, c, h, w]: [usize; 4],
    gamma: &[T],
    beta: &[T],
    eps: f64,
) -> (Vec<T>, NormSaved<T>, Vec<T>) {
    let hw = h * w;
    let count = n * hw;
    let mut mean = Vec::with_capacity(c);
    let mut inv_std = Vec::with_capacity(c);
    let mut unbiased = Vec::with_capacity(c);
    for ch in 0..c {
        let values = (0..n).flat_map(|b| x[(b * c + ch) * hw..(b * c + ch + 1) * hw].iter().map(|v| v.to_f64().unwrap()));
        let (m, v) = mean_var(values, count);
        mean.push(T::lit(m));
        inv_std.push(T::lit(1.0 / (v + eps).sqrt()));
        let correction = if count > 1 { count as f64 / (count - 1) as f64 } else { 1.0 };
        unbiased.push(T::lit(v * correction));
    }
    let saved = NormSaved { mean, inv_std, from_batch: true };
    (apply_channel_affine(x, [n, c, hw], gamma, beta, &saved), saved, unbiased)
}

/// Batch normalization with fixed running statistics.
pub fn batch_norm_eval<T: Scalar>(
    x: &[T],
    [n, c, h, w]: [usize; 4],
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
    eps: f64,
) -> (Vec<T>, NormSaved<T>) {
    let inv_std = running_var
        .iter()
        .map(|v| T::lit(1.0 / (v.to_f64().unwrap() + eps).sqrt()))
        .collect();
    let saved = NormSaved { mean: running_mean.to_vec(), inv_std, from_batch: false };
    (apply_channel_affine(x, [n, c, h * w], gamma, beta, &saved), saved)
}

fn apply_channel_affine<T: Scalar>(x: &[T], [n, c, hw]: [usize; 3], gamma: &[T], beta: &[T], s: &NormSaved<T>) -> Vec<T> {
    let mut y = vec![T::zero(); x.len()];
    for b in 0..n {
        for ch in 0..c {
            let range = (b * c + ch) * hw..(b * c + ch + 1) * hw;
            let (m, is, g, bt) = (s.mean[ch], s.inv_std[ch], gamma[ch], beta[ch]);
            for (yo, &xi) in y[range.clone()].iter_mut().zip(&x[range]) {
                *yo = g * (xi - m) * is + bt;
            }
        }
    }
    y
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn batch_norm_backward<T: Scalar>(
    x: &[T],
    [n, c, h, w]: [usize; 4],
    gamma: &[T],
    saved: &NormSaved<T>,
    dy: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let hw = h * w;
    let count = (n * hw) as f64;
    let mut dx = vec![T::zero(); x.len()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ch in 0..c {
        let (m, is) = (saved.mean[ch], saved.inv_std[ch]);
        let mut sum_dy = 0.0f64;
        let mut sum_dy_xhat = 0.0f64;
        for b in 0..n {
            let range = (b * c + ch) * hw..(b * c + ch + 1) * hw;
            for (&d, &xi) in dy[range.clone()].iter().zip(&x[range]) {
                let xhat = ((xi - m) * is).to_f64().unwrap();
                let d = d.to_f64().unwrap();
                sum_dy += d;
                sum_dy_xhat += d * xhat;
            }
        }
        dgamma[ch] = T::lit(sum_dy_xhat);
        dbeta[ch] = T::lit(sum_dy);
        let g = gamma[ch];
        for b in 0..n {
            let range = (b * c + ch) * hw..(b * c + ch + 1) * hw;
            for ((o, &d), &xi) in dx[range.clone()].iter_mut().zip(&dy[range.clone()]).zip(&x[range]) {
                *o = if saved.from_batch {
                    let xhat = (xi - m) * is;
                    g * is * (d - T::lit(sum_dy / count) - xhat * T::lit(sum_dy_xhat / count))
                } else {
                    g * is * d
                };
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// Layer normalization over the trailing `norm_len` elements of each group.
///
/// `gamma`/`beta` have one entry per slice of the first normalized axis, each
/// covering `norm_len / gamma.len()` consecutive elements.
pub fn layer_norm_forward<T: Scalar>(
    x: &[T],
    norm_len: usize,
    gamma: &[T],
    beta: &[T],
    eps: f64,
) -> (Vec<T>, NormSaved<T>) {
    let groups = x.len() / norm_len;
    let span = norm_len / gamma.len();
    let mut y = vec![T::zero(); x.len()];
    let mut mean = Vec::with_capacity(groups);
    let mut inv_std = Vec::with_capacity(groups);
    for gi in 0..groups {
        let xs = &x[gi * norm_len..(gi + 1) * norm_len];
        let (m, v) = mean_var(xs.iter().map(|v| v.to_f64().unwrap()), norm_len);
        let (m, is) = (T::lit(m), T::lit(1.0 / (v + eps).sqrt()));
        for (j, (yo, &xi)) in y[gi * norm_len..(gi + 1) * norm_len].iter_mut().zip(xs).enumerate() {
            let a = j / span;
            *yo = gamma[a] * (xi - m) * is + beta[a];
        }
        mean.push(m);
        inv_std.push(is);
    }
    (y, NormSaved { mean, inv_std, from_batch: true })
}

/// Returns `(dx, dgamma, dbeta)` for [`layer_norm_forward`].
pub fn layer_norm_backward<T: Scalar>(
    x: &[T],
    norm_len: usize,
    gamma: &[T],
    saved: &NormSaved<T>,
    dy: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let groups = x.len() / norm_len;
    let span = norm_len / gamma.len();
    let mut dx = vec![T::zero(); x.len()];
    let mut dgamma = vec![0.0f64; gamma.len()];
    let mut dbeta = vec![0.0f64; gamma.len()];
    let len = norm_len as f64;
    for gi in 0..groups {
        let range = gi * norm_len..(gi + 1) * norm_len;
        let (m, is) = (saved.mean[gi], saved.inv_std[gi]);
        let mut sum_g = 0.0f64;
        let mut sum_g_xhat = 0.0f64;
        for (j, (&d, &xi)) in dy[range.clone()].iter().zip(&x[range.clone()]).enumerate() {
            let a = j / span;
            let xhat = ((xi - m) * is).to_f64().unwrap();
            let d = d.to_f64().unwrap();
            dgamma[a] += d * xhat;
            dbeta[a] += d;
            let gd = d * gamma[a].to_f64().unwrap();
            sum_g += gd;
            sum_g_xhat += gd * xhat;
        }
        for (j, ((o, &d), &xi)) in dx[range.clone()].iter_mut().zip(&dy[range.clone()]).zip(&x[range]).enumerate() {
            let a = j / span;
            let xhat = (xi - m) * is;
            *o = is * (gamma[a] * d - T::lit(sum_g / len) - xhat * T::lit(sum_g_xhat / len));
        }
    }
    (
        dx,
        dgamma.into_iter().map(T::lit).collect(),
        dbeta.into_iter().map(T::lit).collect(),
    )
}
