//! Reverse-mode automatic differentiation over a linear record of operations.
//!
//! Every op appends one node holding its output value and whatever it needs
//! for the backward pass. Node order is execution order, so a single reverse
//! sweep visits each node once after all of its consumers.

use std::sync::atomic::{AtomicU32, Ordering};

use super::kernels::{self, NormSaved};
use super::Tensor;
use crate::error::{Result, TensorError};
use crate::scalar::Scalar;

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u32,
    index: u32,
}

impl Var {
    pub fn index(self) -> usize {
        self.index as usize
    }
}

/// Stride / padding / dilation of a square convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvSpec {
    pub const POINTWISE: ConvSpec = ConvSpec { stride: 1, padding: 0, dilation: 1 };

    /// Stride-1, size-preserving spec for an odd kernel.
    pub fn same(kernel: usize, dilation: usize) -> Self {
        ConvSpec { stride: 1, padding: dilation * (kernel - 1) / 2, dilation }
    }
}

/// Batch statistics observed by a training-mode batch norm, keyed by the
/// name of its `gamma` parameter.
#[derive(Debug, Clone)]
pub struct BnStats<T> {
    pub gamma_name: String,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

enum Op<T: Scalar> {
    Leaf,
    Conv2d { input: Var, weight: Var, bias: Option<Var>, spec: ConvSpec },
    Conv1d { input: Var, weight: Var, padding: usize },
    BatchNorm { input: Var, gamma: Var, beta: Var, saved: NormSaved<T> },
    LayerNorm { input: Var, gamma: Var, beta: Var, norm_len: usize, saved: NormSaved<T> },
    Relu(Var),
    Sigmoid(Var),
    Softmax { input: Var, axis: usize },
    MaxPool2 { input: Var, argmax: Vec<u32> },
    Upsample(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Add(Var, Var),
    Mul(Var, Var),
    GlobalAvgPool(Var),
    ChannelScale { input: Var, weights: Var },
    SpatialScale { input: Var, map: Var },
    SumChannels(Var),
    Reshape(Var),
    Sum(Var),
    Bce { logits: Var, target: Vec<T> },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Record of executed operations for one forward/backward pass.
///
/// A tape is single-use: after [`Tape::backward`] it must be dropped or
/// [`reset`](Tape::reset) before recording again.
pub struct Tape<T: Scalar> {
    id: u32,
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    params: Vec<(String, Var)>,
    bn_stats: Vec<BnStats<T>>,
    flops: u64,
    backward_done: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

const BN_EPS: f64 = 1e-5;
const LN_EPS: f64 = 1e-5;

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            grads: Vec::new(),
            params: Vec::new(),
            bn_stats: Vec::new(),
            flops: 0,
            backward_done: false,
        }
    }

    /// Clears every recorded node so the tape can be reused.
    pub fn reset(&mut self) {
        *self = Tape { id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed), ..Tape::new() };
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Floating point operations executed by the recorded forward ops.
    ///
    /// Convolutions count `2 × multiply-accumulates`; every other op counts one
    /// operation per output element.
    pub fn flops(&self) -> u64 {
        self.flops
    }

    pub fn bn_stats(&self) -> &[BnStats<T>] {
        &self.bn_stats
    }

    /// Parameters registered with [`Tape::param`], in registration order.
    pub fn params(&self) -> &[(String, Var)] {
        &self.params
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index() >= self.nodes.len() {
            return Err(TensorError::Detached(v.index()));
        }
        Ok(v.index())
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        assert_eq!(v.tape, self.id, "variable from another tape");
        &self.nodes[v.index()].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    /// Gradient of the last backward pass with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        if v.tape != self.id {
            return None;
        }
        self.grads.get(v.index()).and_then(|g| g.as_deref())
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.index()].value.requires_grad
    }

    fn push(&mut self, op_name: &'static str, mut value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: op_name });
        }
        let requires = inputs.iter().any(|&v| self.requires(v));
        value.requires_grad = requires;
        value.grad = None;
        // Nodes that cannot receive gradient keep no backward state.
        let op = if requires { op } else { Op::Leaf };
        let index = self.nodes.len() as u32;
        self.nodes.push(Node { value, op });
        Ok(Var { tape: self.id, index })
    }

    fn count(&mut self, flops: usize) {
        self.flops += flops as u64;
    }

    /// Constant input (no gradient).
    pub fn input(&mut self, value: Tensor<T>) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, mut value: Tensor<T>, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: "leaf" });
        }
        value.requires_grad = requires_grad;
        value.grad = None;
        let index = self.nodes.len() as u32;
        self.nodes.push(Node { value, op: Op::Leaf });
        Ok(Var { tape: self.id, index })
    }

    /// Trainable leaf registered under `name`.
    pub fn param(&mut self, name: &str, value: Tensor<T>) -> Result<Var> {
        let v = self.leaf(value, true)?;
        self.params.push((name.to_string(), v));
        Ok(v)
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, spec: ConvSpec) -> Result<Var> {
        self.check(input)?;
        self.check(weight)?;
        let x = self.value(input);
        let wt = self.value(weight);
        let [n, cin, h, w] = x.dims4("conv2d")?;
        let [cout, wcin, k, k2] = wt.dims4("conv2d")?;
        if wcin != cin || k != k2 {
            return Err(TensorError::ShapeMismatch { op: "conv2d", lhs: x.shape().to_vec(), rhs: wt.shape().to_vec() });
        }
        if k % 2 == 0 {
            return Err(TensorError::invalid("conv2d", format!("kernel size {k} must be odd")));
        }
        if spec.stride == 0 || spec.dilation == 0 {
            return Err(TensorError::invalid("conv2d", "stride and dilation must be positive"));
        }
        if let Some(b) = bias {
            self.check(b)?;
            if self.shape(b) != [cout] {
                return Err(TensorError::ShapeMismatch { op: "conv2d bias", lhs: vec![cout], rhs: self.shape(b).to_vec() });
            }
        }
        let (ho, wo) = match (kernels::conv_out_len(h, k, spec), kernels::conv_out_len(w, k, spec)) {
            (Some(ho), Some(wo)) => (ho, wo),
            _ => return Err(TensorError::invalid("conv2d", format!("non-positive output size for input {h}x{w}"))),
        };
        let out = kernels::conv2d_forward(
            x.data(),
            [n, cin, h, w],
            wt.data(),
            cout,
            k,
            bias.map(|b| self.value(b).data()),
            spec,
            (ho, wo),
        );
        self.count(2 * n * cout * ho * wo * cin * k * k);
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        self.push("conv2d", Tensor::new(vec![n, cout, ho, wo], out)?, Op::Conv2d { input, weight, bias, spec }, &inputs)
    }

    /// Length-preserving 1-D convolution of `[N,1,L]` with a `[1,1,k]` kernel, `k` odd.
    pub fn conv1d(&mut self, input: Var, weight: Var) -> Result<Var> {
        self.check(input)?;
        self.check(weight)?;
        let (n, len) = match self.shape(input) {
            &[n, 1, len] => (n, len),
            s => return Err(TensorError::invalid("conv1d", format!("expected [N,1,L], got {s:?}"))),
        };
        let k = match self.shape(weight) {
            &[1, 1, k] => k,
            s => return Err(TensorError::invalid("conv1d", format!("expected [1,1,k] kernel, got {s:?}"))),
        };
        if k % 2 == 0 {
            return Err(TensorError::invalid("conv1d", format!("kernel size {k} must be odd")));
        }
        let padding = (k - 1) / 2;
        let out = kernels::conv1d_forward(self.value(input).data(), n, len, self.value(weight).data(), padding);
        self.count(2 * n * len * k);
        self.push("conv1d", Tensor::new(vec![n, 1, len], out)?, Op::Conv1d { input, weight, padding }, &[input, weight])
    }

    /// Batch norm with batch statistics; the observed statistics are recorded
    /// under `gamma_name` for the caller to fold into running averages.
    pub fn batch_norm_train(&mut self, input: Var, gamma: Var, beta: Var, gamma_name: &str) -> Result<Var> {
        let dims = self.bn_check(input, gamma, beta)?;
        let (out, saved, unbiased) = kernels::batch_norm_train(
            self.value(input).data(),
            dims,
            self.value(gamma).data(),
            self.value(beta).data(),
            BN_EPS,
        );
        self.bn_stats.push(BnStats { gamma_name: gamma_name.to_string(), mean: saved.mean.clone(), var: unbiased });
        self.count(2 * out.len());
        self.push("batch_norm", Tensor::new(dims.to_vec(), out)?, Op::BatchNorm { input, gamma, beta, saved }, &[input, gamma, beta])
    }

    pub fn batch_norm_eval(&mut self, input: Var, gamma: Var, beta: Var, running_mean: &[T], running_var: &[T]) -> Result<Var> {
        let dims = self.bn_check(input, gamma, beta)?;
        if running_mean.len() != dims[1] || running_var.len() != dims[1] {
            return Err(TensorError::invalid("batch_norm", "running statistics do not match channel count"));
        }
        let (out, saved) = kernels::batch_norm_eval(
            self.value(input).data(),
            dims,
            self.value(gamma).data(),
            self.value(beta).data(),
            running_mean,
            running_var,
            BN_EPS,
        );
        self.count(2 * out.len());
        self.push("batch_norm", Tensor::new(dims.to_vec(), out)?, Op::BatchNorm { input, gamma, beta, saved }, &[input, gamma, beta])
    }

    fn bn_check(&self, input: Var, gamma: Var, beta: Var) -> Result<[usize; 4]> {
        self.check(input)?;
        self.check(gamma)?;
        self.check(beta)?;
        let dims = self.value(input).dims4("batch_norm")?;
        for p in [gamma, beta] {
            if self.shape(p) != [dims[1]] {
                return Err(TensorError::ShapeMismatch { op: "batch_norm", lhs: vec![dims[1]], rhs: self.shape(p).to_vec() });
            }
        }
        Ok(dims)
    }

    /// Layer norm over the last `norm_dims` axes of each sample; `gamma`/`beta`
    /// are indexed by the first normalized axis.
    pub fn layer_norm(&mut self, input: Var, norm_dims: usize, gamma: Var, beta: Var) -> Result<Var> {
        self.check(input)?;
        self.check(gamma)?;
        self.check(beta)?;
        let shape = self.shape(input).to_vec();
        if norm_dims == 0 || norm_dims > shape.len() {
            return Err(TensorError::invalid("layer_norm", format!("cannot normalize {norm_dims} dims of {shape:?}")));
        }
        let first = shape.len() - norm_dims;
        let norm_len: usize = shape[first..].iter().product();
        for p in [gamma, beta] {
            if self.shape(p) != [shape[first]] {
                return Err(TensorError::ShapeMismatch { op: "layer_norm", lhs: vec![shape[first]], rhs: self.shape(p).to_vec() });
            }
        }
        let (out, saved) = kernels::layer_norm_forward(
            self.value(input).data(),
            norm_len,
            self.value(gamma).data(),
            self.value(beta).data(),
            LN_EPS,
        );
        self.count(2 * out.len());
        self.push("layer_norm", Tensor::new(shape, out)?, Op::LayerNorm { input, gamma, beta, norm_len, saved }, &[input, gamma, beta])
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        self.check(input)?;
        let out = self.value(input).map(|v| v.max(T::zero()));
        self.count(out.numel());
        self.push("relu", out, Op::Relu(input), &[input])
    }

    pub fn sigmoid(&mut self, input: Var) -> Result<Var> {
        self.check(input)?;
        let out = self.value(input).map(kernels::sigmoid);
        self.count(out.numel());
        self.push("sigmoid", out, Op::Sigmoid(input), &[input])
    }

    pub fn softmax(&mut self, input: Var, axis: usize) -> Result<Var> {
        self.check(input)?;
        let shape = self.shape(input).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::invalid("softmax", format!("axis {axis} out of range for {shape:?}")));
        }
        let out = kernels::softmax_forward(self.value(input).data(), &shape, axis);
        self.count(out.len());
        self.push("softmax", Tensor::new(shape, out)?, Op::Softmax { input, axis }, &[input])
    }

    /// 2×2 / stride-2 max pooling, ceil mode.
    pub fn maxpool2(&mut self, input: Var) -> Result<Var> {
        self.check(input)?;
        let [n, c, h, w] = self.value(input).dims4("maxpool2")?;
        let (out, argmax) = kernels::maxpool2_forward(self.value(input).data(), n * c, h, w);
        self.count(out.len());
        let shape = vec![n, c, h.div_ceil(2), w.div_ceil(2)];
        self.push("maxpool2", Tensor::new(shape, out)?, Op::MaxPool2 { input, argmax }, &[input])
    }

    /// Bilinear enlargement with half-pixel centres. Equal sizes return `input`.
    pub fn upsample_bilinear(&mut self, input: Var, out_h: usize, out_w: usize) -> Result<Var> {
        self.check(input)?;
        let [n, c, h, w] = self.value(input).dims4("upsample_bilinear")?;
        if out_h == 0 || out_w == 0 {
            return Err(TensorError::invalid("upsample_bilinear", "zero target size"));
        }
        if out_h < h || out_w < w {
            return Err(TensorError::invalid("upsample_bilinear", format!("cannot shrink {h}x{w} to {out_h}x{out_w}")));
        }
        if (out_h, out_w) == (h, w) {
            return Ok(input);
        }
        let out = kernels::upsample_bilinear_forward(self.value(input).data(), n * c, (h, w), (out_h, out_w));
        self.count(4 * out.len());
        self.push("upsample_bilinear", Tensor::new(vec![n, c, out_h, out_w], out)?, Op::Upsample(input), &[input])
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs.first().ok_or_else(|| TensorError::invalid("concat", "no inputs"))?;
        for &v in inputs {
            self.check(v)?;
        }
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::invalid("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(TensorError::ShapeMismatch { op: "concat", lhs: base, rhs: s.to_vec() });
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let chunk = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.value(v).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        self.push("concat", Tensor::new(shape, out)?, Op::Concat { inputs: inputs.to_vec(), axis }, inputs)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        self.check(a)?;
        self.check(b)?;
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch { op, lhs: self.shape(a).to_vec(), rhs: self.shape(b).to_vec() });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| *x + *y).collect();
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        self.count(out.numel());
        self.push("add", out, Op::Add(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| *x * *y).collect();
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        self.count(out.numel());
        self.push("mul", out, Op::Mul(a, b), &[a, b])
    }

    /// Mean over `H,W`: `[N,C,H,W] -> [N,C,1,1]`.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        self.check(input)?;
        let [n, c, h, w] = self.value(input).dims4("global_avg_pool")?;
        let hw = h * w;
        let data = self
            .value(input)
            .data()
            .chunks(hw)
            .map(|plane| T::lit(plane.iter().map(|v| v.to_f64().unwrap()).sum::<f64>() / hw as f64))
            .collect();
        self.count(n * c * hw);
        self.push("global_avg_pool", Tensor::new(vec![n, c, 1, 1], data)?, Op::GlobalAvgPool(input), &[input])
    }

    /// `x[n,c,:,:] · weights[n,c]` with `weights` shaped `[N,C,1,1]`.
    pub fn channel_scale(&mut self, input: Var, weights: Var) -> Result<Var> {
        self.check(input)?;
        self.check(weights)?;
        let [n, c, h, w] = self.value(input).dims4("channel_scale")?;
        if self.shape(weights) != [n, c, 1, 1] {
            return Err(TensorError::ShapeMismatch { op: "channel_scale", lhs: vec![n, c, 1, 1], rhs: self.shape(weights).to_vec() });
        }
        let wts = self.value(weights).data();
        let data = self
            .value(input)
            .data()
            .chunks(h * w)
            .zip(wts)
            .flat_map(|(plane, &s)| plane.iter().map(move |v| *v * s))
            .collect();
        self.count(n * c * h * w);
        self.push("channel_scale", Tensor::new(vec![n, c, h, w], data)?, Op::ChannelScale { input, weights }, &[input, weights])
    }

    /// `x[n,c,h,w] · map[n,0,h,w]`, broadcasting the map over channels.
    pub fn spatial_scale(&mut self, input: Var, map: Var) -> Result<Var> {
        self.check(input)?;
        self.check(map)?;
        let [n, c, h, w] = self.value(input).dims4("spatial_scale")?;
        if self.shape(map) != [n, 1, h, w] {
            return Err(TensorError::ShapeMismatch { op: "spatial_scale", lhs: vec![n, 1, h, w], rhs: self.shape(map).to_vec() });
        }
        let hw = h * w;
        let x = self.value(input).data();
        let m = self.value(map).data();
        let mut data = Vec::with_capacity(x.len());
        for b in 0..n {
            let mb = &m[b * hw..(b + 1) * hw];
            for ch in 0..c {
                let plane = &x[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                data.extend(plane.iter().zip(mb).map(|(v, s)| *v * *s));
            }
        }
        self.count(x.len());
        self.push("spatial_scale", Tensor::new(vec![n, c, h, w], data)?, Op::SpatialScale { input, map }, &[input, map])
    }

    /// Sum over channels: `[N,C,H,W] -> [N,1,H,W]`.
    pub fn sum_channels(&mut self, input: Var) -> Result<Var> {
        self.check(input)?;
        let [n, c, h, w] = self.value(input).dims4("sum_channels")?;
        let hw = h * w;
        let x = self.value(input).data();
        let mut data = vec![T::zero(); n * hw];
        for b in 0..n {
            let dst = &mut data[b * hw..(b + 1) * hw];
            for ch in 0..c {
                for (d, v) in dst.iter_mut().zip(&x[(b * c + ch) * hw..(b * c + ch + 1) * hw]) {
                    *d += *v;
                }
            }
        }
        self.count(x.len());
        self.push("sum_channels", Tensor::new(vec![n, 1, h, w], data)?, Op::SumChannels(input), &[input])
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        self.check(input)?;
        let out = self.value(input).clone().reshape(shape.to_vec())?;
        self.push("reshape", out, Op::Reshape(input), &[input])
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&mut self, input: Var) -> Result<Var> {
        self.check(input)?;
        let total = self.value(input).data().iter().map(|v| v.to_f64().unwrap()).sum::<f64>();
        self.count(self.value(input).numel());
        self.push("sum", Tensor::scalar(T::lit(total)), Op::Sum(input), &[input])
    }

    /// Mean binary cross-entropy between `logits` and a `{0,1}` target of the same shape.
    pub fn bce_with_logits(&mut self, logits: Var, target: &Tensor<T>) -> Result<Var> {
        self.check(logits)?;
        if self.shape(logits) != target.shape() {
            return Err(TensorError::ShapeMismatch { op: "bce", lhs: self.shape(logits).to_vec(), rhs: target.shape().to_vec() });
        }
        if target.data().iter().any(|&v| v != T::zero() && v != T::one()) {
            return Err(TensorError::invalid("bce", "target must be binary"));
        }
        let loss = kernels::bce_with_logits(self.value(logits).data(), target.data());
        self.count(4 * target.numel());
        self.push("bce", Tensor::scalar(loss), Op::Bce { logits, target: target.data().to_vec() }, &[logits])
    }

    /// Populates gradients of `loss` for every reachable node that requires them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let root = self.check(loss)?;
        if self.backward_done {
            return Err(TensorError::BackwardTwice);
        }
        if self.nodes[root].value.numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.nodes[root].value.shape().to_vec()));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[root].value.requires_grad {
            self.grads = grads;
            return Ok(());
        }
        grads[root] = Some(vec![T::one()]);
        for i in (0..=root).rev() {
            let Some(g) = grads[i].take() else { continue };
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            for (var, contribution) in self.node_backward(i, &g) {
                if !self.requires(var) {
                    continue;
                }
                match &mut grads[var.index()] {
                    Some(acc) => acc.iter_mut().zip(contribution).for_each(|(a, c)| *a += c),
                    slot => *slot = Some(contribution),
                }
            }
            // intermediate gradients are kept for inspection
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn node_backward(&self, i: usize, g: &[T]) -> Vec<(Var, Vec<T>)> {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.index()].value;
        match &node.op {
            Op::Leaf => vec![],
            Op::Conv2d { input, weight, bias, spec } => {
                let x = val(*input);
                let wt = val(*weight);
                let dims = x.dims4("conv2d").expect("checked in forward");
                let out = node.value.shape();
                let need = (self.requires(*input), self.requires(*weight), bias.is_some_and(|b| self.requires(b)));
                let grads = kernels::conv2d_backward(
                    x.data(),
                    dims,
                    wt.data(),
                    wt.shape()[0],
                    wt.shape()[2],
                    *spec,
                    (out[2], out[3]),
                    g,
                    need,
                );
                let mut res = Vec::new();
                if let Some(dx) = grads.input {
                    res.push((*input, dx));
                }
                if let Some(dw) = grads.weight {
                    res.push((*weight, dw));
                }
                if let (Some(b), Some(db)) = (bias, grads.bias) {
                    res.push((*b, db));
                }
                res
            }
            Op::Conv1d { input, weight, padding } => {
                let x = val(*input);
                let (dx, dk) = kernels::conv1d_backward(x.data(), x.shape()[0], x.shape()[2], val(*weight).data(), *padding, g);
                vec![(*input, dx), (*weight, dk)]
            }
            Op::BatchNorm { input, gamma, beta, saved } => {
                let x = val(*input);
                let dims = x.dims4("batch_norm").expect("checked in forward");
                let (dx, dg, db) = kernels::batch_norm_backward(x.data(), dims, val(*gamma).data(), saved, g);
                vec![(*input, dx), (*gamma, dg), (*beta, db)]
            }
            Op::LayerNorm { input, gamma, beta, norm_len, saved } => {
                let (dx, dg, db) = kernels::layer_norm_backward(val(*input).data(), *norm_len, val(*gamma).data(), saved, g);
                vec![(*input, dx), (*gamma, dg), (*beta, db)]
            }
            Op::Relu(input) => {
                let dx = node.value.data().iter().zip(g).map(|(y, d)| if *y > T::zero() { *d } else { T::zero() }).collect();
                vec![(*input, dx)]
            }
            Op::Sigmoid(input) => {
                let dx = node.value.data().iter().zip(g).map(|(y, d)| *d * *y * (T::one() - *y)).collect();
                vec![(*input, dx)]
            }
            Op::Softmax { input, axis } => {
                vec![(*input, kernels::softmax_backward(node.value.data(), g, node.value.shape(), *axis))]
            }
            Op::MaxPool2 { input, argmax } => {
                let [n, c, h, w] = val(*input).dims4("maxpool2").expect("checked in forward");
                vec![(*input, kernels::maxpool2_backward(argmax, g, n * c, h, w))]
            }
            Op::Upsample(input) => {
                let [n, c, h, w] = val(*input).dims4("upsample").expect("checked in forward");
                let out = node.value.shape();
                vec![(*input, kernels::upsample_bilinear_backward(g, n * c, (h, w), (out[2], out[3])))]
            }
            Op::Concat { inputs, axis } => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis] * inner;
                let mut offset = 0;
                let mut res = Vec::with_capacity(inputs.len());
                for &v in inputs {
                    let chunk = val(v).shape()[*axis] * inner;
                    let mut dx = Vec::with_capacity(outer * chunk);
                    for o in 0..outer {
                        dx.extend_from_slice(&g[o * total + offset..o * total + offset + chunk]);
                    }
                    offset += chunk;
                    res.push((v, dx));
                }
                res
            }
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Mul(a, b) => {
                let da = g.iter().zip(val(*b).data()).map(|(d, y)| *d * *y).collect();
                let db = g.iter().zip(val(*a).data()).map(|(d, x)| *d * *x).collect();
                vec![(*a, da), (*b, db)]
            }
            Op::GlobalAvgPool(input) => {
                let [_, _, h, w] = val(*input).dims4("global_avg_pool").expect("checked in forward");
                let hw = h * w;
                let scale = T::one() / T::from_usize_lossy(hw);
                let dx = g.iter().flat_map(|d| std::iter::repeat_n(*d * scale, hw)).collect();
                vec![(*input, dx)]
            }
            Op::ChannelScale { input, weights } => {
                let x = val(*input);
                let [_, _, h, w] = x.dims4("channel_scale").expect("checked in forward");
                let hw = h * w;
                let wts = val(*weights).data();
                let dx = g.chunks(hw).zip(wts).flat_map(|(plane, &s)| plane.iter().map(move |d| *d * s)).collect();
                let dw = g
                    .chunks(hw)
                    .zip(x.data().chunks(hw))
                    .map(|(gp, xp)| gp.iter().zip(xp).fold(T::zero(), |acc, (d, v)| acc + *d * *v))
                    .collect();
                vec![(*input, dx), (*weights, dw)]
            }
            Op::SpatialScale { input, map } => {
                let x = val(*input);
                let [n, c, h, w] = x.dims4("spatial_scale").expect("checked in forward");
                let hw = h * w;
                let m = val(*map).data();
                let mut dx = Vec::with_capacity(x.numel());
                let mut dm = vec![T::zero(); n * hw];
                for b in 0..n {
                    for ch in 0..c {
                        let range = (b * c + ch) * hw..(b * c + ch + 1) * hw;
                        let mb = &m[b * hw..(b + 1) * hw];
                        dx.extend(g[range.clone()].iter().zip(mb).map(|(d, s)| *d * *s));
                        for ((acc, d), v) in dm[b * hw..(b + 1) * hw].iter_mut().zip(&g[range.clone()]).zip(&x.data()[range]) {
                            *acc += *d * *v;
                        }
                    }
                }
                vec![(*input, dx), (*map, dm)]
            }
            Op::SumChannels(input) => {
                let [n, c, h, w] = val(*input).dims4("sum_channels").expect("checked in forward");
                let hw = h * w;
                let mut dx = Vec::with_capacity(n * c * hw);
                for b in 0..n {
                    for _ in 0..c {
                        dx.extend_from_slice(&g[b * hw..(b + 1) * hw]);
                    }
                }
                vec![(*input, dx)]
            }
            Op::Reshape(input) => vec![(*input, g.to_vec())],
            Op::Sum(input) => vec![(*input, vec![g[0]; val(*input).numel()])],
            Op::Bce { logits, target } => {
                let z = val(*logits).data();
                let scale = g[0] / T::from_usize_lossy(z.len());
                let dx = z.iter().zip(target).map(|(zi, yi)| (kernels::sigmoid(*zi) - *yi) * scale).collect();
                vec![(*logits, dx)]
            }
        }
    }
}
