//! Interactive polarized orthogonal fusion of an encoder map `E` and the
//! same-resolution decoder map `D`.
//!
//! Spatial branch: channel-softmax weights from `E` collapse the projected
//! `D` to one plane, which is aggregated by DODA over the flattened pixels and
//! gates `E`. Channel branch: pooled `E` is aggregated by DODA across
//! channels, its softmax re-weights the projected `D`, and the restored,
//! layer-normed result gates `D`. The two gated maps are summed and projected.

use super::doda::Doda;
use super::layers::{Builder, Conv2d, ConvBnRelu, Ctx, LayerNorm};
use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Var};

/// Intermediate width: half the stage width, at least 1.
pub fn ipof_mid_channels(c: usize) -> usize {
    (c / 2).max(1)
}

/// `Σ_c q[n,c] · v[n,c,:,:]` for probabilities `q[N,C',1,1]`.
pub fn polarized_sum<T: Scalar>(tape: &mut Tape<T>, q: Var, v: Var) -> Result<Var> {
    let weighted = tape.channel_scale(v, q)?;
    tape.sum_channels(weighted)
}

#[derive(Debug, Clone)]
pub struct Ipof {
    pub channels: usize,
    pub mid: usize,
    spatial_query: ConvBnRelu,
    spatial_value: ConvBnRelu,
    spatial_doda: Doda,
    spatial_conv: Conv2d,
    spatial_norm: LayerNorm,
    channel_key: ConvBnRelu,
    channel_value: ConvBnRelu,
    channel_doda: Doda,
    channel_restore: Conv2d,
    channel_norm: LayerNorm,
    out: ConvBnRelu,
}

impl Ipof {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, channels: usize, n: u32, bias_b: u32) -> Result<Self> {
        let mid = ipof_mid_channels(channels);
        b.scope(name, |b| {
            Ok(Ipof {
                channels,
                mid,
                spatial_query: ConvBnRelu::new(b, "spatial.query", channels, mid, 1, 1)?,
                spatial_value: ConvBnRelu::new(b, "spatial.value", channels, mid, 1, 1)?,
                spatial_doda: Doda::new(b, "spatial.doda", mid, n, bias_b)?,
                spatial_conv: Conv2d::pointwise(b, "spatial.proj", 1, 1)?,
                spatial_norm: LayerNorm::new(b, "spatial.norm", 1)?,
                channel_key: ConvBnRelu::new(b, "channel.key", channels, mid, 1, 1)?,
                channel_value: ConvBnRelu::new(b, "channel.value", channels, mid, 1, 1)?,
                channel_doda: Doda::new(b, "channel.doda", mid, n, bias_b)?,
                channel_restore: Conv2d::pointwise(b, "channel.restore", mid, channels)?,
                channel_norm: LayerNorm::new(b, "channel.norm", channels)?,
                out: ConvBnRelu::new(b, "out", channels, channels, 1, 1)?,
            })
        })
    }

    fn check<T: Scalar>(&self, cx: &Ctx<'_, T>, e: Var, d: Var) -> Result<[usize; 4]> {
        let es = cx.tape.shape(e);
        let ds = cx.tape.shape(d);
        if es != ds {
            return Err(TensorError::ShapeMismatch { op: "ipof", lhs: es.to_vec(), rhs: ds.to_vec() });
        }
        let dims = cx.tape.value(e).dims4("ipof")?;
        if dims[1] != self.channels {
            return Err(TensorError::invalid("ipof", format!("expected {} channels, got {}", self.channels, dims[1])));
        }
        Ok(dims)
    }

    /// Pre-gating spatial attention map `[N,1,H,W]` with values in `[0.5, 1)`.
    pub fn spatial_map<T: Scalar>(&self, cx: &mut Ctx<'_, T>, e: Var, d: Var) -> Result<Var> {
        let [n, _, h, w] = self.check(cx, e, d)?;
        let q = self.spatial_query.forward(cx, e)?;
        let q = cx.tape.global_avg_pool(q)?;
        let q = cx.tape.softmax(q, 1)?;
        let v = self.spatial_value.forward(cx, d)?;
        let raw = polarized_sum(cx.tape, q, v)?;
        let seq = cx.tape.reshape(raw, &[n, 1, h * w])?;
        let seq = self.spatial_doda.forward(cx, seq)?;
        let plane = cx.tape.reshape(seq, &[n, 1, h, w])?;
        let plane = self.spatial_conv.forward(cx, plane)?;
        let plane = self.spatial_norm.forward(cx, plane)?;
        let plane = cx.tape.relu(plane)?;
        cx.tape.sigmoid(plane)
    }

    pub fn spatial<T: Scalar>(&self, cx: &mut Ctx<'_, T>, e: Var, d: Var) -> Result<Var> {
        let map = self.spatial_map(cx, e, d)?;
        cx.tape.spatial_scale(e, map)
    }

    /// Softmax channel weights `[N,C',1,1]` derived from `E`.
    pub fn channel_weights<T: Scalar>(&self, cx: &mut Ctx<'_, T>, e: Var) -> Result<Var> {
        let n = cx.tape.shape(e)[0];
        let k = self.channel_key.forward(cx, e)?;
        let g = cx.tape.global_avg_pool(k)?;
        let seq = cx.tape.reshape(g, &[n, 1, self.mid])?;
        let seq = self.channel_doda.forward(cx, seq)?;
        let w = cx.tape.softmax(seq, 2)?;
        cx.tape.reshape(w, &[n, self.mid, 1, 1])
    }

    /// Channel gate `[N,C,H,W]` applied to `D`.
    pub fn channel_gate<T: Scalar>(&self, cx: &mut Ctx<'_, T>, e: Var, d: Var) -> Result<Var> {
        self.check(cx, e, d)?;
        let w = self.channel_weights(cx, e)?;
        let u = self.channel_value.forward(cx, d)?;
        let scaled = cx.tape.channel_scale(u, w)?;
        let restored = self.channel_restore.forward(cx, scaled)?;
        let normed = self.channel_norm.forward(cx, restored)?;
        cx.tape.sigmoid(normed)
    }

    pub fn channel<T: Scalar>(&self, cx: &mut Ctx<'_, T>, e: Var, d: Var) -> Result<Var> {
        let gate = self.channel_gate(cx, e, d)?;
        cx.tape.mul(gate, d)
    }

    /// Fused output `[N,C,H,W]`.
    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, e: Var, d: Var) -> Result<Var> {
        let a_c = self.channel(cx, e, d)?;
        let a_s = self.spatial(cx, e, d)?;
        let sum = cx.tape.add(a_c, a_s)?;
        self.out.forward(cx, sum)
    }

    pub fn spatial_norm_beta(&self) -> &str {
        &self.spatial_norm.beta
    }

    pub fn channel_norm_beta(&self) -> &str {
        &self.channel_norm.beta
    }

    pub fn channel_key_bn_beta(&self) -> &str {
        &self.channel_key.bn.beta
    }

    pub fn channel_key_bn_gamma(&self) -> &str {
        &self.channel_key.bn.gamma
    }
}
