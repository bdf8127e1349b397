//! Parameterised building blocks shared by the network stages.

use std::collections::HashMap;

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{BnStats, ConvSpec, Init, ParamStore, Tape, Tensor, Var};

/// Registers parameters and running statistics while a model is built.
pub struct Builder<'a, T: Scalar> {
    pub(crate) params: &'a mut ParamStore<T>,
    pub(crate) buffers: &'a mut ParamStore<T>,
    pub(crate) init: &'a mut Init,
    prefix: String,
}

impl<'a, T: Scalar> Builder<'a, T> {
    pub fn new(params: &'a mut ParamStore<T>, buffers: &'a mut ParamStore<T>, init: &'a mut Init) -> Self {
        Builder { params, buffers, init, prefix: String::new() }
    }

    pub fn scope<R>(&mut self, name: &str, f: impl FnOnce(&mut Builder<'_, T>) -> Result<R>) -> Result<R> {
        let prefix = self.path(name);
        let mut inner = Builder { params: self.params, buffers: self.buffers, init: self.init, prefix };
        f(&mut inner)
    }

    pub fn path(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    fn param(&mut self, name: &str, tensor: Tensor<T>) -> Result<String> {
        let path = self.path(name);
        self.params.insert(path.clone(), tensor)?;
        Ok(path)
    }

    fn buffer(&mut self, name: &str, tensor: Tensor<T>) -> Result<String> {
        let path = self.path(name);
        self.buffers.insert(path.clone(), tensor)?;
        Ok(path)
    }
}

/// Forward-pass context: the tape plus read-only access to weights.
pub struct Ctx<'a, T: Scalar> {
    pub tape: &'a mut Tape<T>,
    params: &'a ParamStore<T>,
    buffers: &'a ParamStore<T>,
    pub training: bool,
    loaded: HashMap<String, Var>,
}

impl<'a, T: Scalar> Ctx<'a, T> {
    pub fn new(tape: &'a mut Tape<T>, params: &'a ParamStore<T>, buffers: &'a ParamStore<T>, training: bool) -> Self {
        Ctx { tape, params, buffers, training, loaded: HashMap::new() }
    }

    /// Loads a parameter onto the tape once per forward pass.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(v) = self.loaded.get(name) {
            return Ok(*v);
        }
        let v = self.tape.param(name, self.params.get(name)?.clone())?;
        self.loaded.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn buffer(&self, name: &str) -> Result<&Tensor<T>> {
        self.buffers.get(name)
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: String,
    pub bias: Option<String>,
    pub spec: ConvSpec,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
}

impl Conv2d {
    /// Size-preserving convolution with Kaiming-uniform weights and zero bias.
    pub fn new<T: Scalar>(
        b: &mut Builder<'_, T>,
        name: &str,
        (cin, cout): (usize, usize),
        kernel: usize,
        dilation: usize,
        bias: bool,
    ) -> Result<Self> {
        b.scope(name, |b| {
            let fan_in = cin * kernel * kernel;
            let w = b.init.kaiming_uniform(vec![cout, cin, kernel, kernel], fan_in);
            let weight = b.param("weight", w)?;
            let bias = if bias { Some(b.param("bias", Tensor::zeros(vec![cout]))?) } else { None };
            Ok(Conv2d { weight, bias, spec: ConvSpec::same(kernel, dilation), cin, cout, kernel })
        })
    }

    pub fn pointwise<T: Scalar>(b: &mut Builder<'_, T>, name: &str, cin: usize, cout: usize) -> Result<Self> {
        Self::new(b, name, (cin, cout), 1, 1, true)
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let w = cx.param(&self.weight)?;
        let bias = self.bias.as_deref().map(|n| cx.param(n)).transpose()?;
        cx.tape.conv2d(x, w, bias, self.spec)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: String,
    pub beta: String,
    pub running_mean: String,
    pub running_var: String,
}

impl BatchNorm {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, channels: usize) -> Result<Self> {
        b.scope(name, |b| {
            Ok(BatchNorm {
                gamma: b.param("gamma", Tensor::ones(vec![channels]))?,
                beta: b.param("beta", Tensor::zeros(vec![channels]))?,
                running_mean: b.buffer("running_mean", Tensor::zeros(vec![channels]))?,
                running_var: b.buffer("running_var", Tensor::ones(vec![channels]))?,
            })
        })
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let gamma = cx.param(&self.gamma)?;
        let beta = cx.param(&self.beta)?;
        if cx.training {
            cx.tape.batch_norm_train(x, gamma, beta, &self.gamma)
        } else {
            let mean = cx.buffer(&self.running_mean)?.data().to_vec();
            let var = cx.buffer(&self.running_var)?.data().to_vec();
            cx.tape.batch_norm_eval(x, gamma, beta, &mean, &var)
        }
    }
}

/// Running-average momentum: `running ← 0.9·running + 0.1·batch`.
pub const BN_MOMENTUM: f64 = 0.9;

/// Folds the batch statistics recorded on a training tape into the running
/// averages held in `buffers`.
pub fn update_running_stats<T: Scalar>(buffers: &mut ParamStore<T>, stats: &[BnStats<T>]) -> Result<()> {
    let keep = T::lit(BN_MOMENTUM);
    let take = T::one() - keep;
    for s in stats {
        let base = s.gamma_name.strip_suffix("gamma").unwrap_or(&s.gamma_name);
        for (suffix, batch) in [("running_mean", &s.mean), ("running_var", &s.var)] {
            let running = buffers.get_mut(&format!("{base}{suffix}"))?;
            for (r, v) in running.data_mut().iter_mut().zip(batch.iter()) {
                *r = keep * *r + take * *v;
            }
        }
    }
    Ok(())
}

/// Layer norm over `[C,H,W]` of each sample with per-channel affine.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: String,
    pub beta: String,
}

impl LayerNorm {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, channels: usize) -> Result<Self> {
        b.scope(name, |b| {
            Ok(LayerNorm {
                gamma: b.param("gamma", Tensor::ones(vec![channels]))?,
                beta: b.param("beta", Tensor::zeros(vec![channels]))?,
            })
        })
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let gamma = cx.param(&self.gamma)?;
        let beta = cx.param(&self.beta)?;
        cx.tape.layer_norm(x, 3, gamma, beta)
    }
}

/// Convolution → batch norm → ReLU.
#[derive(Debug, Clone)]
pub struct ConvBnRelu {
    pub conv: Conv2d,
    pub bn: BatchNorm,
}

impl ConvBnRelu {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, cin: usize, cout: usize, kernel: usize, dilation: usize) -> Result<Self> {
        b.scope(name, |b| {
            Ok(ConvBnRelu {
                conv: Conv2d::new(b, "conv", (cin, cout), kernel, dilation, true)?,
                bn: BatchNorm::new(b, "bn", cout)?,
            })
        })
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(cx, x)?;
        let y = self.bn.forward(cx, y)?;
        cx.tape.relu(y)
    }
}
