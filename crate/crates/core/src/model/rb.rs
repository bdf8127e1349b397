//! Side heads and the representative block that fuses them.
//!
//! Side index 0 is the deepest decoder and 5 the shallowest. Each head turns
//! its decoder output into `rb_channels(i, t)` edge channels plus a one-channel
//! supervision logit, both resized to the input. The shallow half builds a
//! sigmoid gate that rescales the deep half before the final 1×1 fusion.

use super::layers::{Builder, Conv2d, Ctx};
use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Var;

/// Edge channel budget `ceil(t · 2^(i-1))`.
pub fn rb_channels(i: usize, t: f64) -> usize {
    let v = t * 2f64.powi(i as i32 - 1);
    (v.ceil() as usize).max(1)
}

/// Number of side maps gated by the shallow-derived map: the deeper half.
pub fn rb_gated_count(stages: usize) -> usize {
    stages / 2
}

#[derive(Debug, Clone)]
pub struct SideHead {
    pub channels: usize,
    edge: Conv2d,
    sup: Conv2d,
}

impl SideHead {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, cin: usize, channels: usize) -> Result<Self> {
        b.scope(name, |b| {
            Ok(SideHead {
                channels,
                edge: Conv2d::new(b, "edge", (cin, channels), 3, 1, true)?,
                sup: Conv2d::pointwise(b, "sup", channels, 1)?,
            })
        })
    }

    /// Returns `(edge, supervision)` at `size`.
    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, d: Var, size: (usize, usize)) -> Result<(Var, Var)> {
        let edge = self.edge.forward(cx, d)?;
        let sup = self.sup.forward(cx, edge)?;
        let edge = cx.tape.upsample_bilinear(edge, size.0, size.1)?;
        let sup = cx.tape.upsample_bilinear(sup, size.0, size.1)?;
        Ok((edge, sup))
    }
}

#[derive(Debug, Clone)]
pub struct Rb {
    pub channels: Vec<usize>,
    pub gated: usize,
    gate: Conv2d,
    fuse: Conv2d,
}

impl Rb {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, channels: Vec<usize>) -> Result<Self> {
        let gated = rb_gated_count(channels.len());
        let shallow: usize = channels[gated..].iter().sum();
        let total: usize = channels.iter().sum();
        b.scope(name, |b| {
            Ok(Rb {
                gate: Conv2d::pointwise(b, "gate", shallow, 1)?,
                fuse: Conv2d::pointwise(b, "fuse", total, 1)?,
                channels,
                gated,
            })
        })
    }

    pub fn gate_param_names(&self) -> (&str, Option<&str>) {
        (&self.gate.weight, self.gate.bias.as_deref())
    }

    pub fn fuse_param_names(&self) -> (&str, Option<&str>) {
        (&self.fuse.weight, self.fuse.bias.as_deref())
    }

    fn check(&self, edges: &[Var]) -> Result<()> {
        if edges.len() != self.channels.len() {
            return Err(TensorError::invalid("rb", format!("expected {} edge maps, got {}", self.channels.len(), edges.len())));
        }
        Ok(())
    }

    /// γ from the shallow half of the edge maps, shape `[N,1,H,W]`.
    pub fn gate<T: Scalar>(&self, cx: &mut Ctx<'_, T>, edges: &[Var]) -> Result<Var> {
        self.check(edges)?;
        let shallow = cx.tape.concat(&edges[self.gated..], 1)?;
        let g = self.gate.forward(cx, shallow)?;
        cx.tape.sigmoid(g)
    }

    /// Gates the deep half with `gamma`; the shallow half passes through.
    pub fn enhance<T: Scalar>(&self, cx: &mut Ctx<'_, T>, edges: &[Var], gamma: Var) -> Result<Vec<Var>> {
        self.check(edges)?;
        edges
            .iter()
            .enumerate()
            .map(|(i, &e)| if i < self.gated { cx.tape.spatial_scale(e, gamma) } else { Ok(e) })
            .collect()
    }

    pub fn fuse<T: Scalar>(&self, cx: &mut Ctx<'_, T>, enhanced: &[Var]) -> Result<Var> {
        self.check(enhanced)?;
        let cat = cx.tape.concat(enhanced, 1)?;
        self.fuse.forward(cx, cat)
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, edges: &[Var]) -> Result<Var> {
        let gamma = self.gate(cx, edges)?;
        let enhanced = self.enhance(cx, edges, gamma)?;
        self.fuse(cx, &enhanced)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Init, ParamStore, Tape, Tensor};

    #[test]
    fn channel_budget() {
        let got: Vec<_> = (0..6).map(|i| rb_channels(i, 1.0)).collect();
        assert_eq!(got, [1, 1, 2, 4, 8, 16]);
        assert_eq!(got.iter().sum::<usize>(), 32);
        assert_eq!(rb_channels(2, 2.5), 5);
        assert_eq!(rb_channels(0, 0.5), 1);
        assert_eq!(rb_gated_count(6), 3);
    }

    struct Fixture {
        rb: Rb,
        params: ParamStore<f64>,
        buffers: ParamStore<f64>,
    }

    fn fixture() -> Fixture {
        let (mut params, mut buffers) = (ParamStore::new(), ParamStore::new());
        let mut init = Init::new(3);
        let chans = (0..6).map(|i| rb_channels(i, 1.0)).collect();
        let rb = Rb::new(&mut Builder::new(&mut params, &mut buffers, &mut init), "rb", chans).unwrap();
        Fixture { rb, params, buffers }
    }

    fn edges(tape: &mut Tape<f64>, rb: &Rb, seed: u64) -> Vec<Var> {
        rb.channels
            .iter()
            .enumerate()
            .map(|(i, &c)| tape.input(Init::new(seed + i as u64).uniform(vec![2, c, 5, 4], 1.0)).unwrap())
            .collect()
    }

    #[test]
    fn zero_gate_weights_give_half() {
        let mut f = fixture();
        let (w, b) = f.rb.gate_param_names();
        let (w, b) = (w.to_string(), b.unwrap().to_string());
        f.params.get_mut(&w).unwrap().data_mut().fill(0.0);
        f.params.get_mut(&b).unwrap().data_mut().fill(0.0);
        let mut tape = Tape::new();
        let es = edges(&mut tape, &f.rb, 1);
        let mut cx = Ctx::new(&mut tape, &f.params, &f.buffers, true);
        let g = f.rb.gate(&mut cx, &es).unwrap();
        assert_eq!(tape.shape(g), &[2, 1, 5, 4]);
        assert!(tape.value(g).data().iter().all(|v| *v == 0.5));
    }

    #[test]
    fn gate_is_monotone_in_a_positively_weighted_channel() {
        let mut f = fixture();
        let (w, _) = f.rb.gate_param_names();
        let w = w.to_string();
        f.params.get_mut(&w).unwrap().data_mut()[0] = 0.7;
        let mut prev = None;
        for bump in [0.0, 0.5, 1.0, 2.0] {
            let mut tape = Tape::new();
            let mut es = edges(&mut tape, &f.rb, 1);
            // first gate input channel = channel 0 of edge map 3
            let mut t = tape.value(es[3]).clone();
            for v in &mut t.data_mut()[..20] {
                *v += bump;
            }
            es[3] = tape.input(t).unwrap();
            let mut cx = Ctx::new(&mut tape, &f.params, &f.buffers, true);
            let g = f.rb.gate(&mut cx, &es).unwrap();
            let v = tape.value(g).data()[0];
            if let Some(p) = prev {
                assert!(v > p);
            }
            prev = Some(v);
        }
    }

    #[test]
    fn enhance_identities() {
        let f = fixture();
        let mut tape = Tape::new();
        let es = edges(&mut tape, &f.rb, 1);
        let ones = tape.input(Tensor::ones(vec![2, 1, 5, 4])).unwrap();
        let zeros = tape.input(Tensor::zeros(vec![2, 1, 5, 4])).unwrap();
        let mut cx = Ctx::new(&mut tape, &f.params, &f.buffers, true);
        let same = f.rb.enhance(&mut cx, &es, ones).unwrap();
        let gated = f.rb.enhance(&mut cx, &es, zeros).unwrap();
        for i in 0..6 {
            assert_eq!(tape.value(same[i]).data(), tape.value(es[i]).data());
            if i < 3 {
                assert!(tape.value(gated[i]).data().iter().all(|v| *v == 0.0));
            } else {
                assert_eq!(tape.value(gated[i]).data(), tape.value(es[i]).data());
            }
        }
    }

    #[test]
    fn fuse_of_zeros_is_zero() {
        let mut f = fixture();
        let (_, b) = f.rb.fuse_param_names();
        let b = b.unwrap().to_string();
        f.params.get_mut(&b).unwrap().data_mut().fill(0.0);
        let mut tape = Tape::new();
        let es: Vec<_> = f.rb.channels.iter().map(|&c| tape.input(Tensor::zeros(vec![1, c, 3, 3])).unwrap()).collect();
        let mut cx = Ctx::new(&mut tape, &f.params, &f.buffers, true);
        let o = f.rb.fuse(&mut cx, &es).unwrap();
        assert_eq!(tape.shape(o), &[1, 1, 3, 3]);
        assert!(tape.value(o).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn mismatched_resolutions_rejected() {
        let f = fixture();
        let mut tape = Tape::new();
        let mut es = edges(&mut tape, &f.rb, 1);
        es[4] = tape.input(Tensor::zeros(vec![2, 8, 3, 3])).unwrap();
        let mut cx = Ctx::new(&mut tape, &f.params, &f.buffers, true);
        assert!(f.rb.forward(&mut cx, &es).is_err());
    }
}
