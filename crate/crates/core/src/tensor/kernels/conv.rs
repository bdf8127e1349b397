use rayon::prelude::*;

use super::super::tape::ConvSpec;
use crate::scalar::Scalar;

/// Output length of a convolution along one axis, or `None` when it would be < 1.
pub fn conv_out_len(input: usize, kernel: usize, spec: ConvSpec) -> Option<usize> {
    let reach = spec.dilation * (kernel - 1) + 1;
    let padded = input + 2 * spec.padding;
    if padded < reach || spec.stride == 0 {
        return None;
    }
    Some((padded - reach) / spec.stride + 1)
}

#[derive(Clone, Copy)]
struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    ho: usize,
    wo: usize,
    spec: ConvSpec,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }

    /// Pointwise stride-1 convolutions read the input plane directly.
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.spec.stride == 1 && self.spec.padding == 0
    }

    /// Source offset (within a channel plane) for kernel tap `(ki,kj)` at output `(oh,ow)`.
    #[inline]
    fn src(&self, ki: usize, kj: usize, oh: usize, ow: usize) -> Option<usize> {
        let s = self.spec;
        let y = (oh * s.stride + ki * s.dilation) as isize - s.padding as isize;
        let x = (ow * s.stride + kj * s.dilation) as isize - s.padding as isize;
        if y < 0 || x < 0 || y >= self.h as isize || x >= self.w as isize {
            None
        } else {
            Some(y as usize * self.w + x as usize)
        }
    }

    fn im2col<T: Scalar>(&self, x: &[T], cols: &mut [T]) {
        let p = self.positions();
        for ci in 0..self.cin {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (ci * self.k + ki) * self.k + kj;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oh in 0..self.ho {
                        for ow in 0..self.wo {
                            dst[oh * self.wo + ow] = match self.src(ki, kj, oh, ow) {
                                Some(i) => plane[i],
                                None => T::zero(),
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Scalar>(&self, cols: &[T], dx: &mut [T]) {
        let p = self.positions();
        for ci in 0..self.cin {
            let plane = &mut dx[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (ci * self.k + ki) * self.k + kj;
                    let src = &cols[row * p..(row + 1) * p];
                    for oh in 0..self.ho {
                        for ow in 0..self.wo {
                            if let Some(i) = self.src(ki, kj, oh, ow) {
                                plane[i] += src[oh * self.wo + ow];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `x[N,Cin,H,W]` with `w[Cout,Cin,k,k]`, returning `[N,Cout,Ho,Wo]` data.
///
/// Caller validates shapes; `ho`/`wo` come from [`conv_out_len`].
#[allow(clippy::too_many_arguments)]
pub fn conv2d_forward<T: Scalar>(
    x: &[T],
    [n, cin, h, w]: [usize; 4],
    weight: &[T],
    cout: usize,
    k: usize,
    bias: Option<&[T]>,
    spec: ConvSpec,
    (ho, wo): (usize, usize),
) -> Vec<T> {
    let g = Geometry { cin, h, w, k, ho, wo, spec };
    let (r, p) = (g.rows(), g.positions());
    let mut out = vec![T::zero(); n * cout * p];
    out.par_chunks_mut(cout * p).enumerate().for_each(|(b, out_b)| {
        let x_b = &x[b * cin * h * w..(b + 1) * cin * h * w];
        let mut scratch;
        let cols: &[T] = if g.is_pointwise() {
            x_b
        } else {
            scratch = vec![T::zero(); r * p];
            g.im2col(x_b, &mut scratch);
            &scratch
        };
        if let Some(bias) = bias {
            for (co, row) in out_b.chunks_mut(p).enumerate() {
                row.fill(bias[co]);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        T::gemm(cout, r, p, weight, (r, 1), cols, (p, 1), beta, out_b, (p, 1));
    });
    out
}

pub struct Conv2dGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

/// Gradients of [`conv2d_forward`]. Per-sample partial weight gradients are
/// summed in batch order so the result does not depend on thread scheduling.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Scalar>(
    x: &[T],
    [n, cin, h, w]: [usize; 4],
    weight: &[T],
    cout: usize,
    k: usize,
    spec: ConvSpec,
    (ho, wo): (usize, usize),
    dout: &[T],
    need: (bool, bool, bool),
) -> Conv2dGrads<T> {
    let (need_x, need_w, need_b) = need;
    let g = Geometry { cin, h, w, k, ho, wo, spec };
    let (r, p) = (g.rows(), g.positions());

    let per_sample: Vec<(Option<Vec<T>>, Option<Vec<T>>)> = (0..n)
        .into_par_iter()
        .map(|b| {
            let x_b = &x[b * cin * h * w..(b + 1) * cin * h * w];
            let d_b = &dout[b * cout * p..(b + 1) * cout * p];
            let dw = need_w.then(|| {
                let mut scratch;
                let cols: &[T] = if g.is_pointwise() {
                    x_b
                } else {
                    scratch = vec![T::zero(); r * p];
                    g.im2col(x_b, &mut scratch);
                    &scratch
                };
                let mut dw = vec![T::zero(); cout * r];
                // dW[Cout,R] = dout[Cout,P] · colsᵀ[P,R]
                T::gemm(cout, p, r, d_b, (p, 1), cols, (1, p), T::zero(), &mut dw, (r, 1));
                dw
            });
            let dx = need_x.then(|| {
                // dcols[R,P] = Wᵀ[R,Cout] · dout[Cout,P]
                if g.is_pointwise() {
                    let mut dx = vec![T::zero(); cin * h * w];
                    T::gemm(r, cout, p, weight, (1, r), d_b, (p, 1), T::zero(), &mut dx, (p, 1));
                    dx
                } else {
                    let mut dcols = vec![T::zero(); r * p];
                    T::gemm(r, cout, p, weight, (1, r), d_b, (p, 1), T::zero(), &mut dcols, (p, 1));
                    let mut dx = vec![T::zero(); cin * h * w];
                    g.col2im(&dcols, &mut dx);
                    dx
                }
            });
            (dx, dw)
        })
        .collect();

    let mut input = need_x.then(|| Vec::with_capacity(n * cin * h * w));
    let mut weight_grad = need_w.then(|| vec![T::zero(); cout * r]);
    for (dx, dw) in per_sample {
        if let (Some(acc), Some(dx)) = (input.as_mut(), dx) {
            acc.extend_from_slice(&dx);
        }
        if let (Some(acc), Some(dw)) = (weight_grad.as_mut(), dw) {
            for (a, v) in acc.iter_mut().zip(dw) {
                *a += v;
            }
        }
    }
    let bias = need_b.then(|| {
        let mut db = vec![T::zero(); cout];
        for b in 0..n {
            for (co, acc) in db.iter_mut().enumerate() {
                let start = (b * cout + co) * p;
                for &v in &dout[start..start + p] {
                    *acc += v;
                }
            }
        }
        db
    });
    Conv2dGrads { input, weight: weight_grad, bias }
}

/// Length-preserving 1-D cross-correlation of `x[N,1,L]` with a single kernel.
pub fn conv1d_forward<T: Scalar>(x: &[T], n: usize, len: usize, kernel: &[T], padding: usize) -> Vec<T> {
    let k = kernel.len();
    let lo = len + 2 * padding + 1 - k;
    let mut out = vec![T::zero(); n * lo];
    for b in 0..n {
        let xb = &x[b * len..(b + 1) * len];
        for i in 0..lo {
            let mut acc = T::zero();
            for (j, &wj) in kernel.iter().enumerate() {
                let s = (i + j) as isize - padding as isize;
                if s >= 0 && (s as usize) < len {
                    acc += wj * xb[s as usize];
                }
            }
            out[b * lo + i] = acc;
        }
    }
    out
}

/// Returns `(dx, dkernel)` for [`conv1d_forward`].
pub fn conv1d_backward<T: Scalar>(
    x: &[T],
    n: usize,
    len: usize,
    kernel: &[T],
    padding: usize,
    dout: &[T],
) -> (Vec<T>, Vec<T>) {
    let k = kernel.len();
    let lo = len + 2 * padding + 1 - k;
    let mut dx = vec![T::zero(); n * len];
    let mut dk = vec![T::zero(); k];
    for b in 0..n {
        for i in 0..lo {
            let d = dout[b * lo + i];
            for j in 0..k {
                let s = (i + j) as isize - padding as isize;
                if s >= 0 && (s as usize) < len {
                    let s = b * len + s as usize;
                    dx[s] += kernel[j] * d;
                    dk[j] += x[s] * d;
                }
            }
        }
    }
    (dx, dk)
}
