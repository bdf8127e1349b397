use crate::scalar::Scalar;

/// 2×2 / stride-2 max pooling in ceil mode over `planes` planes of `h×w`.
///
/// Returns the pooled data and, per output, the in-plane index of the first
/// (row-major) maximum of its window.
pub fn maxpool2_forward<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize) -> (Vec<T>, Vec<u32>) {
    let (ho, wo) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = Vec::with_capacity(planes * ho * wo);
    let mut arg = Vec::with_capacity(planes * ho * wo);
    for p in 0..planes {
        let plane = &x[p * h * w..(p + 1) * h * w];
        for oh in 0..ho {
            for ow in 0..wo {
                let mut best = 2 * oh * w + 2 * ow;
                for y in 2 * oh..(2 * oh + 2).min(h) {
                    for xx in 2 * ow..(2 * ow + 2).min(w) {
                        let i = y * w + xx;
                        if plane[i] > plane[best] {
                            best = i;
                        }
                    }
                }
                out.push(plane[best]);
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

pub fn maxpool2_backward<T: Scalar>(argmax: &[u32], dy: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let per_out = argmax.len() / planes;
    let mut dx = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        for j in 0..per_out {
            let k = p * per_out + j;
            dx[p * h * w + argmax[k] as usize] += dy[k];
        }
    }
    dx
}

/// Interpolation taps along one axis: output `i` reads `lo[i]` and `hi[i]`
/// with weight `frac[i]` on `hi`.
#[derive(Debug, Clone)]
pub struct AxisWeights<T> {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
    pub frac: Vec<T>,
}

/// Half-pixel-centre (`align_corners = false`) sampling positions.
pub fn bilinear_axis<T: Scalar>(input: usize, output: usize) -> AxisWeights<T> {
    let scale = input as f64 / output as f64;
    let mut lo = Vec::with_capacity(output);
    let mut hi = Vec::with_capacity(output);
    let mut frac = Vec::with_capacity(output);
    for i in 0..output {
        let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
        let l = (src.floor() as usize).min(input - 1);
        let h = (l + 1).min(input - 1);
        lo.push(l);
        hi.push(h);
        frac.push(T::lit(if h == l { 0.0 } else { src - l as f64 }));
    }
    AxisWeights { lo, hi, frac }
}

pub fn upsample_bilinear_forward<T: Scalar>(
    x: &[T],
    planes: usize,
    (h, w): (usize, usize),
    (oh, ow): (usize, usize),
) -> Vec<T> {
    let ay = bilinear_axis::<T>(h, oh);
    let ax = bilinear_axis::<T>(w, ow);
    let mut out = vec![T::zero(); planes * oh * ow];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for i in 0..oh {
            let (r0, r1, fy) = (ay.lo[i] * w, ay.hi[i] * w, ay.frac[i]);
            for j in 0..ow {
                let (c0, c1, fx) = (ax.lo[j], ax.hi[j], ax.frac[j]);
                let top = src[r0 + c0] + (src[r0 + c1] - src[r0 + c0]) * fx;
                let bottom = src[r1 + c0] + (src[r1 + c1] - src[r1 + c0]) * fx;
                dst[i * ow + j] = top + (bottom - top) * fy;
            }
        }
    }
    out
}

/// Transpose of [`upsample_bilinear_forward`]: scatters each output gradient
/// onto its four source taps.
pub fn upsample_bilinear_backward<T: Scalar>(
    dy: &[T],
    planes: usize,
    (h, w): (usize, usize),
    (oh, ow): (usize, usize),
) -> Vec<T> {
    let ay = bilinear_axis::<T>(h, oh);
    let ax = bilinear_axis::<T>(w, ow);
    let mut dx = vec![T::zero(); planes * h * w];
    let one = T::one();
    for p in 0..planes {
        let g = &dy[p * oh * ow..(p + 1) * oh * ow];
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        for i in 0..oh {
            let (r0, r1, fy) = (ay.lo[i] * w, ay.hi[i] * w, ay.frac[i]);
            for j in 0..ow {
                let (c0, c1, fx) = (ax.lo[j], ax.hi[j], ax.frac[j]);
                let d = g[i * ow + j];
                dst[r0 + c0] += d * (one - fy) * (one - fx);
                dst[r0 + c1] += d * (one - fy) * fx;
                dst[r1 + c0] += d * fy * (one - fx);
                dst[r1 + c1] += d * fy * fx;
            }
        }
    }
    dx
}
