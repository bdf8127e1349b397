use serde::Serialize;

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

/// Per-term BCE values of one deep-supervised loss.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LossBreakdown {
    /// Side supervision terms, deepest first.
    pub sides: [f64; 6],
    pub fused: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn components(&self) -> [f64; 7] {
        let s = self.sides;
        [s[0], s[1], s[2], s[3], s[4], s[5], self.fused]
    }

    /// `self + w · other`, used for running averages.
    pub fn add_scaled(&mut self, other: &LossBreakdown, w: f64) {
        for (a, b) in self.sides.iter_mut().zip(other.sides) {
            *a += w * b;
        }
        self.fused += w * other.fused;
        self.total += w * other.total;
    }
}

/// Mean binary cross-entropy of `logits` against a 0/1 target.
pub fn bce_loss<T: Scalar>(tape: &mut Tape<T>, logits: Var, gt: &Tensor<T>) -> Result<Var> {
    tape.bce_with_logits(logits, gt)
}

/// Unweighted sum of the six side terms and the fused term.
pub fn total_loss<T: Scalar>(tape: &mut Tape<T>, sides: &[Var], fused: Var, gt: &Tensor<T>) -> Result<(Var, LossBreakdown)> {
    if sides.len() != 6 {
        return Err(TensorError::InvalidArgument { op: "total_loss", msg: format!("expected 6 side maps, got {}", sides.len()) });
    }
    let mut breakdown = LossBreakdown::default();
    let mut total = bce_loss(tape, fused, gt)?;
    breakdown.fused = tape.value(total).item().to_f64().unwrap_or(f64::NAN);
    for (slot, &s) in breakdown.sides.iter_mut().zip(sides) {
        let term = bce_loss(tape, s, gt)?;
        *slot = tape.value(term).item().to_f64().unwrap_or(f64::NAN);
        total = tape.add(total, term)?;
    }
    breakdown.total = tape.value(total).item().to_f64().unwrap_or(f64::NAN);
    Ok((total, breakdown))
}
