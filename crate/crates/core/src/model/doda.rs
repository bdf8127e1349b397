//! Dynamic one-dimensional aggregation: a stack of 1-D convolutions whose
//! depth and kernel size follow the width of the sequence they aggregate.

use super::layers::{Builder, Ctx};
use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Var;

/// Number of 1-D layers `⌈1 − b/(2n) + log2(√C′)/n⌉`, at least 1.
///
/// Evaluated exactly as the smallest `L` with `C′ ≤ 2^(2n(L−1)+b)`, which is
/// the same ceiling without floating point rounding at the integer edges.
pub fn doda_num_layers(c_prime: usize, n: u32, b: u32) -> usize {
    assert!(c_prime >= 1 && n >= 1, "doda_num_layers needs C' >= 1 and n >= 1");
    // ceil(log2 C') as an exact integer
    let lg = (usize::BITS - (c_prime - 1).leading_zeros()) as u64;
    let (n, b) = (u64::from(n), u64::from(b));
    let mut layers = 1;
    while 2 * n * (layers - 1) + b < lg {
        layers += 1;
    }
    layers as usize
}

/// Kernel size from `C′ = 2^(2k−1)`: `(1 + log2 C′)/2` rounded to an odd
/// integer (values in `[2m, 2m+1)` go up to `2m+1`), at least 1.
pub fn doda_kernel_size(c_prime: usize) -> usize {
    assert!(c_prime >= 1, "doda_kernel_size needs C' >= 1");
    let v = (1.0 + (c_prime as f64).log2()) / 2.0;
    let t = v.floor() as usize;
    let k = if t % 2 == 1 { t } else { t + 1 };
    k.max(1)
}

#[derive(Debug, Clone)]
pub struct Doda {
    pub c_prime: usize,
    pub kernel: usize,
    pub layers: Vec<String>,
}

impl Doda {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, c_prime: usize, n: u32, bias_b: u32) -> Result<Self> {
        let count = doda_num_layers(c_prime, n, bias_b);
        let kernel = doda_kernel_size(c_prime);
        b.scope(name, |b| {
            let mut layers = Vec::with_capacity(count);
            for i in 0..count {
                let w = b.init.kaiming_uniform(vec![1, 1, kernel], kernel);
                let path = b.path(&format!("conv{i}.weight"));
                b.params.insert(path.clone(), w)?;
                layers.push(path);
            }
            Ok(Doda { c_prime, kernel, layers })
        })
    }

    /// `[N,1,L] -> [N,1,L]`; ReLU between layers, none after the last.
    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, seq: Var) -> Result<Var> {
        let mut h = seq;
        for (i, name) in self.layers.iter().enumerate() {
            let w = cx.param(name)?;
            if cx.tape.shape(w) != [1, 1, self.kernel] {
                return Err(TensorError::invalid("doda", format!("`{name}` is not a [1,1,{}] kernel", self.kernel)));
            }
            h = cx.tape.conv1d(h, w)?;
            if i + 1 < self.layers.len() {
                h = cx.tape.relu(h)?;
            }
        }
        Ok(h)
    }
}
