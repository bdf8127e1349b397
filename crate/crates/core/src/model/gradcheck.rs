//! Whole-network finite-difference check of the deep-supervised loss.

use super::config::ModelConfig;
use super::network::build_model;
use crate::error::Result;
use crate::tensor::gradcheck::{check_store, GradCheckOptions, GradReport};
use crate::tensor::{Init, ParamStore, Tape, Tensor};
use crate::training::total_loss;

#[derive(Debug, Clone, Copy)]
pub struct NetworkCheck {
    /// Square input side.
    pub size: usize,
    pub seed: u64,
    /// Negates the analytic gradients before comparing; a correct checker
    /// must then report failures.
    pub flip_sign: bool,
    /// Normalise with batch statistics instead of running statistics.
    pub batch_stats: bool,
    pub options: GradCheckOptions,
}

impl Default for NetworkCheck {
    fn default() -> Self {
        NetworkCheck {
            size: super::config::MIN_INPUT,
            seed: 0,
            flip_sign: false,
            batch_stats: false,
            options: GradCheckOptions { step: 1e-6, tolerance: 1e-2, floor: 1e-6, samples: Some(10), seed: 0 },
        }
    }
}

/// Half-width of the uniform offset added to every bias and norm shift.
pub const SHIFT_JITTER: f64 = 0.1;

/// Builds `config` in f64 and compares the parameter gradients of the total
/// loss on one random `1×3×size×size` image against central differences.
///
/// Batch norm uses running statistics unless `check.batch_stats` is set: with
/// a single image the deepest blocks see one value per channel, and batch
/// statistics there pin every output to `beta`, right on the ReLU kink.
pub fn check_network(config: &ModelConfig, check: &NetworkCheck) -> Result<GradReport> {
    let mut cfg = config.clone();
    cfg.input_size = (check.size, check.size);
    let mut model = build_model::<f64>(&cfg, check.seed)?;
    let mut init = Init::new(check.seed ^ 0x5eed);
    // Zero-initialised shifts put dead channels exactly on a ReLU kink, where
    // central differences see half a slope; nudge them off zero.
    for (name, t) in model.params.iter_mut() {
        if name.ends_with(".bias") || name.ends_with(".beta") {
            let jitter: Tensor<f64> = init.uniform(t.shape().to_vec(), SHIFT_JITTER);
            t.data_mut().iter_mut().zip(jitter.data()).for_each(|(v, j)| *v += *j);
        }
    }
    let cin = cfg.stage_channels[0].0;
    let image: Tensor<f64> = init.uniform(vec![1, cin, check.size, check.size], 1.0).map(|v| 0.5 + 0.5 * v);
    let target = init.uniform::<f64>(vec![1, 1, check.size, check.size], 1.0).map(|v| if v > 0.6 { 1.0 } else { 0.0 });

    let buffers = model.buffers.clone();
    let net = model.net.clone();
    let loss_at = |params: &ParamStore<f64>, backward: bool| -> Result<(f64, Tape<f64>)> {
        let mut tape = Tape::new();
        let x = tape.input(image.clone())?;
        let mut cx = super::layers::Ctx::new(&mut tape, params, &buffers, check.batch_stats);
        let out = net.forward(&mut cx, x)?;
        let (loss, _) = total_loss(&mut tape, &out.sides.sups, out.logits, &target)?;
        let value = tape.value(loss).item();
        if backward {
            tape.backward(loss)?;
        }
        Ok((value, tape))
    };
    let (_, tape) = loss_at(&model.params, true)?;
    model.params.load_grads(&tape)?;
    if check.flip_sign {
        for (_, t) in model.params.iter_mut() {
            if let Some(g) = t.grad.as_mut() {
                g.iter_mut().for_each(|v| *v = -*v);
            }
        }
    }
    check_store(&model.params, |p| loss_at(p, false).map(|r| r.0), &check.options)
}
