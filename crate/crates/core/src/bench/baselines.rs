use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::params::{Binder, NamedGrads, Parameterized};
use crate::tensor::{Tape, Tensor};
use crate::train::Trainable;

/// Repeat the last observed value of every row `horizon` times.
pub fn persistence(x: &Tensor, horizon: usize) -> Result<Tensor> {
    let shape = x.shape();
    let l = shape[shape.len() - 1];
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be positive".into()));
    }
    let mut out_shape = shape.to_vec();
    *out_shape.last_mut().unwrap() = horizon;
    let data = x
        .data()
        .chunks(l)
        .flat_map(|row| std::iter::repeat_n(row[l - 1], horizon))
        .collect();
    Tensor::new(out_shape, data)
}

/// One affine map over time shared by all channels.
#[derive(Clone, Debug)]
pub struct LinearBaseline {
    pub config: ModelConfig,
    /// `[L, L_p]`
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LinearBaseline {
    /// Identity weights when `L == L_p`, otherwise window-mean weights.
    pub fn new(config: ModelConfig) -> Self {
        let (l, lp) = (config.input_len, config.horizon);
        let weight = if l == lp {
            Tensor::eye(l)
        } else {
            Tensor::full(&[l, lp], 1.0 / l as f64)
        };
        LinearBaseline {
            config,
            weight,
            bias: Tensor::zeros(&[lp]),
        }
    }
}

impl Parameterized for LinearBaseline {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Tensor)) {
        f("linear.weight", &self.weight);
        f("linear.bias", &self.bias);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f("linear.weight", &mut self.weight);
        f("linear.bias", &mut self.bias);
    }
}

impl Trainable for LinearBaseline {
    fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let tape = Tape::inference();
        let y = tape
            .constant(x.clone())
            .linear(tape.constant(self.weight.clone()), Some(tape.constant(self.bias.clone())))?;
        Ok((*y.value()).clone())
    }

    fn loss_and_grads(&self, x: &Tensor, target: &Tensor, mask: Option<&Tensor>) -> Result<(f64, NamedGrads)> {
        let tape = Tape::new();
        let mut binder = Binder::new(&tape);
        let w = binder.param("linear.weight", &self.weight);
        let b = binder.param("linear.bias", &self.bias);
        let loss = tape.constant(x.clone()).linear(w, Some(b))?.mse(tape.constant(target.clone()), mask)?;
        let value = loss.value().item();
        let mut grads = tape.backward(loss)?;
        Ok((value, binder.collect(&mut grads)))
    }
}

/// Persistence wrapped as a (parameter-free) model.
#[derive(Clone, Debug)]
pub struct Persistence {
    pub config: ModelConfig,
}

impl Parameterized for Persistence {
    fn visit_params<'a>(&'a self, _f: &mut dyn FnMut(&str, &'a Tensor)) {}
    fn visit_params_mut(&mut self, _f: &mut dyn FnMut(&str, &mut Tensor)) {}
}

impl Trainable for Persistence {
    fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn predict(&self, x: &Tensor) -> Result<Tensor> {
        persistence(x, self.config.horizon)
    }

    fn loss_and_grads(&self, x: &Tensor, target: &Tensor, mask: Option<&Tensor>) -> Result<(f64, NamedGrads)> {
        let pred = self.predict(x)?;
        let m = crate::bench::metrics::metrics(&pred, target, mask)?;
        Ok((m.mse, NamedGrads::default()))
    }
}
