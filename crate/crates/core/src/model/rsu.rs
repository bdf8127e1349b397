//! Residual U-blocks: a small U-shaped network wrapped in a residual connection.

use super::layers::{Builder, ConvBnRelu, Ctx};
use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Var;

#[derive(Debug, Clone)]
pub struct Rsu {
    pub depth: usize,
    /// Dilated variant: keeps resolution and grows dilation instead of pooling.
    pub dilated: bool,
    pub cin: usize,
    pub mid: usize,
    pub cout: usize,
    entry: ConvBnRelu,
    down: Vec<ConvBnRelu>,
    bottom: ConvBnRelu,
    up: Vec<ConvBnRelu>,
}

impl Rsu {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, depth: usize, dilated: bool, (cin, mid, cout): (usize, usize, usize)) -> Result<Self> {
        if depth < 2 {
            return Err(TensorError::invalid("rsu", format!("depth {depth} < 2")));
        }
        b.scope(name, |b| {
            let entry = ConvBnRelu::new(b, "entry", cin, cout, 3, 1)?;
            let levels = depth - 1;
            let dil = |j: usize| if dilated { 1 << j } else { 1 };
            let mut down = Vec::with_capacity(levels);
            for j in 0..levels {
                let c_in = if j == 0 { cout } else { mid };
                down.push(ConvBnRelu::new(b, &format!("down{j}"), c_in, mid, 3, dil(j))?);
            }
            let bottom_dil = if dilated { 1 << levels } else { 2 };
            let bottom = ConvBnRelu::new(b, "bottom", mid, mid, 3, bottom_dil)?;
            // up[k] merges with down[levels-1-k]
            let mut up = Vec::with_capacity(levels);
            for k in 0..levels {
                let j = levels - 1 - k;
                let c_out = if j == 0 { cout } else { mid };
                up.push(ConvBnRelu::new(b, &format!("up{j}"), 2 * mid, c_out, 3, dil(j))?);
            }
            Ok(Rsu { depth, dilated, cin, mid, cout, entry, down, bottom, up })
        })
    }

    /// Smallest spatial size the pooling ladder accepts.
    pub fn min_size(&self) -> usize {
        if self.dilated {
            1
        } else {
            1 << (self.depth - 2)
        }
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let [_, _, h, w] = cx.tape.value(x).dims4("rsu")?;
        if h < self.min_size() || w < self.min_size() {
            return Err(TensorError::invalid(
                "rsu",
                format!("input {h}x{w} too small for depth {} (needs {})", self.depth, self.min_size()),
            ));
        }
        let residual = self.entry.forward(cx, x)?;
        let mut skips = Vec::with_capacity(self.down.len());
        let mut h = residual;
        for (j, layer) in self.down.iter().enumerate() {
            if j > 0 && !self.dilated {
                h = cx.tape.maxpool2(h)?;
            }
            h = layer.forward(cx, h)?;
            skips.push(h);
        }
        let mut d = self.bottom.forward(cx, h)?;
        for (layer, skip) in self.up.iter().zip(skips.iter().rev()) {
            let [_, _, sh, sw] = cx.tape.value(*skip).dims4("rsu")?;
            d = cx.tape.upsample_bilinear(d, sh, sw)?;
            let cat = cx.tape.concat(&[d, *skip], 1)?;
            d = layer.forward(cx, cat)?;
        }
        cx.tape.add(d, residual)
    }

    /// Output of the entry convolution alone (the residual branch).
    pub fn entry_forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        self.entry.forward(cx, x)
    }

    /// Names of every parameter outside the entry convolution.
    pub fn internal_params(&self) -> Vec<String> {
        self.down
            .iter()
            .chain(std::iter::once(&self.bottom))
            .chain(&self.up)
            .flat_map(|l| [Some(l.conv.weight.clone()), l.conv.bias.clone(), Some(l.bn.gamma.clone()), Some(l.bn.beta.clone())])
            .flatten()
            .collect()
    }
}
