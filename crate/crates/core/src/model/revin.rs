use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};

const EPS: f64 = 1e-5;

/// Per-instance, per-channel statistics of a `[B, C, L]` batch, each `[B, C, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RevinState {
    pub mean: Tensor,
    pub std: Tensor,
}

impl RevinState {
    pub fn from_batch(x: &Tensor) -> Result<Self> {
        let [b, c, l] = x.shape()[..] else {
            return Err(Error::shape("revin", format!("expected [B, C, L], got {:?}", x.shape())));
        };
        let mut mean = vec![0.0; b * c];
        let mut std = vec![0.0; b * c];
        for (r, row) in x.data().chunks(l).enumerate() {
            let m = row.iter().sum::<f64>() / l as f64;
            let v = row.iter().map(|&v| (v - m) * (v - m)).sum::<f64>() / l as f64;
            mean[r] = m;
            std[r] = (v + EPS).sqrt();
        }
        Ok(RevinState {
            mean: Tensor::new(vec![b, c, 1], mean)?,
            std: Tensor::new(vec![b, c, 1], std)?,
        })
    }

    /// `(x - mean) / std * weight + bias`; `weight` and `bias` are `[1, C, 1]`.
    pub fn normalize<'t>(&self, x: Var<'t>, weight: Var<'t>, bias: Var<'t>) -> Result<Var<'t>> {
        let tape = x.tape();
        x.sub(tape.constant(self.mean.clone()))?
            .div(tape.constant(self.std.clone()))?
            .mul(weight)?
            .add(bias)
    }

    /// Inverse of [`RevinState::normalize`].
    pub fn denormalize<'t>(&self, y: Var<'t>, weight: Var<'t>, bias: Var<'t>) -> Result<Var<'t>> {
        let tape = y.tape();
        y.sub(bias)?
            .div(weight)?
            .mul(tape.constant(self.std.clone()))?
            .add(tape.constant(self.mean.clone()))
    }
}
