//! Full network assembly.
//!
//! Encoders run at scales 1, 1/2, …, 1/16 and a bridge decoder at 1/32. Each
//! following decoder takes the upsampled output of the one below it,
//! concatenated with the (optionally IPOF-fused) encoder map of its scale.

use super::config::ModelConfig;
use super::ipof::Ipof;
use super::layers::{update_running_stats, Builder, Conv2d, Ctx};
use super::rb::{rb_channels, Rb, SideHead};
use super::rsu::Rsu;
use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::{count_params, Init, ParamStore, Tape, Tensor, Var};

/// RSU depth and dilation per encoder stage; decoders mirror them.
pub const ENCODER_DEPTHS: [(usize, bool); 5] = [(7, false), (6, false), (5, false), (4, false), (4, true)];

/// Per-stage encoder, decoder and fused maps of one forward pass.
#[derive(Debug, Clone)]
pub struct StageFeatures {
    /// `E_0..E_4`.
    pub encoders: Vec<Var>,
    /// `D_4..D_0, D_O` (bridge first).
    pub decoders: Vec<Var>,
    /// Skip inputs after fusion, indexed like `encoders`.
    pub fused: Vec<Var>,
}

/// Side maps at input resolution, deepest first.
#[derive(Debug, Clone)]
pub struct SideOutputs {
    pub edges: Vec<Var>,
    pub sups: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Final logits `[N,1,H,W]`.
    pub logits: Var,
    pub sides: SideOutputs,
    pub stages: StageFeatures,
}

#[derive(Debug, Clone)]
enum Head {
    Rb(Rb),
    Plain(Conv2d),
}

/// Parameter-free description of the layer graph.
#[derive(Debug, Clone)]
pub struct Network {
    pub encoders: Vec<Rsu>,
    /// Bridge first, output decoder last.
    pub decoders: Vec<Rsu>,
    pub ipof: Vec<Option<Ipof>>,
    pub heads: Vec<SideHead>,
    head: Head,
}

impl Network {
    fn build<T: Scalar>(cfg: &ModelConfig, b: &mut Builder<'_, T>) -> Result<Self> {
        let mut encoders = Vec::with_capacity(5);
        for (i, &(depth, dilated)) in ENCODER_DEPTHS.iter().enumerate() {
            encoders.push(Rsu::new(b, &format!("encoder{i}"), depth, dilated, cfg.encoder(i))?);
        }
        let mut decoders = Vec::with_capacity(6);
        for k in 0..6 {
            // the bridge mirrors encoder 4, decoder k>0 mirrors encoder 5-k
            let (depth, dilated) = ENCODER_DEPTHS[if k == 0 { 4 } else { 5 - k }];
            let name = if k == 5 { "decoder_out".to_string() } else { format!("decoder{}", 4 - k) };
            decoders.push(Rsu::new(b, &name, depth, dilated, cfg.decoder(k))?);
        }
        let mut ipof = Vec::with_capacity(5);
        for i in 0..5 {
            ipof.push(if cfg.ipof_enabled(i) {
                Some(Ipof::new(b, &format!("ipof{i}"), cfg.encoder(i).2, cfg.n, cfg.b)?)
            } else {
                None
            });
        }
        let channels: Vec<usize> = (0..6).map(|i| rb_channels(i, cfg.t)).collect();
        let mut heads = Vec::with_capacity(6);
        for (k, &c) in channels.iter().enumerate() {
            heads.push(SideHead::new(b, &format!("side{k}"), cfg.decoder(k).2, c)?);
        }
        let head = if cfg.use_rb { Head::Rb(Rb::new(b, "rb", channels)?) } else { Head::Plain(Conv2d::pointwise(b, "fuse", 6, 1)?) };
        Ok(Network { encoders, decoders, ipof, heads, head })
    }

    pub fn rb(&self) -> Option<&Rb> {
        match &self.head {
            Head::Rb(rb) => Some(rb),
            Head::Plain(_) => None,
        }
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<ForwardOutput> {
        let [_, c, h, w] = cx.tape.value(x).dims4("ilnet")?;
        if c != self.encoders[0].cin {
            return Err(TensorError::invalid("ilnet", format!("expected {} input channels, got {c}", self.encoders[0].cin)));
        }
        if h == 0 || w == 0 || h % 16 != 0 || w % 16 != 0 {
            return Err(TensorError::invalid("ilnet", format!("input {h}x{w} is not divisible by 16")));
        }
        let mut encoders = Vec::with_capacity(5);
        let mut cur = x;
        for (i, enc) in self.encoders.iter().enumerate() {
            if i > 0 {
                cur = cx.tape.maxpool2(cur)?;
            }
            cur = enc.forward(cx, cur)?;
            encoders.push(cur);
        }
        let pooled = cx.tape.maxpool2(cur)?;
        let mut d = self.decoders[0].forward(cx, pooled)?;
        let mut decoders = vec![d];
        let mut fused = vec![None; 5];
        for k in 1..6 {
            let i = 5 - k;
            let e = encoders[i];
            let [_, _, eh, ew] = cx.tape.value(e).dims4("ilnet")?;
            let up = cx.tape.upsample_bilinear(d, eh, ew)?;
            let f = match &self.ipof[i] {
                Some(m) => m.forward(cx, e, up)?,
                None => e,
            };
            fused[i] = Some(f);
            let cat = cx.tape.concat(&[up, f], 1)?;
            d = self.decoders[k].forward(cx, cat)?;
            decoders.push(d);
        }
        let mut edges = Vec::with_capacity(6);
        let mut sups = Vec::with_capacity(6);
        for (head, &d) in self.heads.iter().zip(&decoders) {
            let (e, s) = head.forward(cx, d, (h, w))?;
            edges.push(e);
            sups.push(s);
        }
        let logits = match &self.head {
            Head::Rb(rb) => rb.forward(cx, &edges)?,
            Head::Plain(conv) => {
                let cat = cx.tape.concat(&sups, 1)?;
                conv.forward(cx, cat)?
            }
        };
        Ok(ForwardOutput {
            logits,
            sides: SideOutputs { edges, sups },
            stages: StageFeatures { encoders, decoders, fused: fused.into_iter().map(|f| f.expect("all stages fused")).collect() },
        })
    }
}

/// A network together with its weights and batch-norm running statistics.
#[derive(Debug, Clone)]
pub struct Ilnet<T: Scalar> {
    pub config: ModelConfig,
    pub net: Network,
    pub params: ParamStore<T>,
    pub buffers: ParamStore<T>,
}

/// Builds `config` with weights drawn from `seed`.
pub fn build_model<T: Scalar>(config: &ModelConfig, seed: u64) -> Result<Ilnet<T>> {
    config.validate().map_err(|e| TensorError::invalid("build_model", e.to_string()))?;
    let (mut params, mut buffers) = (ParamStore::new(), ParamStore::new());
    let mut init = Init::new(seed);
    let net = Network::build(config, &mut Builder::new(&mut params, &mut buffers, &mut init))?;
    Ok(Ilnet { config: config.clone(), net, params, buffers })
}

impl<T: Scalar> Ilnet<T> {
    /// Builds with the seed stored in the config.
    pub fn new(config: &ModelConfig) -> Result<Self> {
        build_model(config, config.seed)
    }

    pub fn num_params(&self) -> usize {
        count_params(&self.params)
    }

    /// Records a forward pass on `tape`. `training` selects batch statistics.
    pub fn forward(&self, tape: &mut Tape<T>, x: Var, training: bool) -> Result<ForwardOutput> {
        let mut cx = Ctx::new(tape, &self.params, &self.buffers, training);
        self.net.forward(&mut cx, x)
    }

    /// Eval-mode probabilities `[N,1,H,W]` for a batch of images.
    pub fn predict(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let x = tape.input(images.clone())?;
        let out = self.forward(&mut tape, x, false)?;
        Ok(tape.value(out.logits).map(crate::tensor::kernels::sigmoid))
    }

    /// FLOPs of one eval forward pass on a single `h × w` image.
    pub fn count_flops(&self, h: usize, w: usize) -> Result<u64> {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::zeros(vec![1, self.net.encoders[0].cin, h, w]))?;
        self.forward(&mut tape, x, false)?;
        Ok(tape.flops())
    }

    /// Folds the batch statistics of a training pass into the running stats.
    pub fn update_running_stats(&mut self, tape: &Tape<T>) -> Result<()> {
        update_running_stats(&mut self.buffers, tape.bn_stats())
    }

    /// Parameters and running statistics, as stored in checkpoints.
    pub fn state(&self) -> [&ParamStore<T>; 2] {
        [&self.params, &self.buffers]
    }

    /// Overwrites weights and statistics from a merged checkpoint store.
    pub fn load_state(&mut self, state: &ParamStore<T>) -> Result<()> {
        for store in [&mut self.params, &mut self.buffers] {
            for (name, t) in store.iter_mut() {
                let src = state.get(name)?;
                if src.shape() != t.shape() {
                    return Err(TensorError::ShapeMismatch { op: "load_state", lhs: t.shape().to_vec(), rhs: src.shape().to_vec() });
                }
                t.data_mut().copy_from_slice(src.data());
            }
        }
        let expected = self.params.len() + self.buffers.len();
        if state.len() != expected {
            return Err(TensorError::invalid("load_state", format!("checkpoint holds {} tensors, model has {expected}", state.len())));
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> Ilnet<U> {
        Ilnet { config: self.config.clone(), net: self.net.clone(), params: self.params.cast(), buffers: self.buffers.cast() }
    }
}
