//! Named trainable parameters and their binding onto a tape.

use crate::tensor::{Gradients, Tape, Tensor, Var};
use std::collections::BTreeMap;

/// Anything that owns named trainable tensors.
pub trait Parameterized {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Tensor));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, t| n += t.numel());
        n
    }

    fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.visit_params(&mut |name, t| out.push((name.to_string(), t.clone())));
        out
    }
}

/// Records which tape leaf belongs to which parameter name.
pub struct Binder<'t> {
    tape: &'t Tape,
    bound: Vec<(String, Var<'t>)>,
}

impl<'t> Binder<'t> {
    pub fn new(tape: &'t Tape) -> Self {
        Binder {
            tape,
            bound: Vec::new(),
        }
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn param(&mut self, name: &str, value: &Tensor) -> Var<'t> {
        let v = self.tape.param(value.clone());
        self.bound.push((name.to_string(), v));
        v
    }

    /// Pull the gradient of every bound parameter out of `grads`.
    pub fn collect(&self, grads: &mut Gradients) -> NamedGrads {
        NamedGrads(
            self.bound
                .iter()
                .filter_map(|(name, v)| grads.take(*v).map(|g| (name.clone(), g)))
                .collect(),
        )
    }
}

/// Gradients keyed by parameter name.
#[derive(Clone, Debug, Default)]
pub struct NamedGrads(pub BTreeMap<String, Tensor>);

impl NamedGrads {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.0.get(name)
    }

    pub fn global_norm(&self) -> f64 {
        self.0
            .values()
            .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.0.values_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }

    /// First parameter whose gradient contains NaN or Inf.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.0
            .iter()
            .find(|(_, g)| !g.all_finite())
            .map(|(n, _)| n.as_str())
    }
}
