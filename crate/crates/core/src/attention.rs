//! Channel-wise self-attention over the coarsest seasonal approximation.
//!
//! Each channel's approximation row is one token. Tokens are embedded to
//! `d_model`, passed through a single pre-norm multi-head self-attention block
//! with a residual connection, and projected to the target approximation
//! length. There is no positional encoding over channels, so the map is
//! equivariant to channel permutations.

use crate::error::{Error, Result};
use crate::params::Binder;
use crate::tensor::{Tape, Tensor, Var};
use rand::Rng;

pub const DEFAULT_D_MODEL: usize = 128;
pub const DEFAULT_HEADS: usize = 4;
const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct AttentionHead {
    pub heads: usize,
    /// `[L_N, d_model]`
    pub embed_w: Tensor,
    pub embed_b: Tensor,
    pub norm_g: Tensor,
    pub norm_b: Tensor,
    pub query_w: Tensor,
    pub query_b: Tensor,
    pub key_w: Tensor,
    pub key_b: Tensor,
    pub value_w: Tensor,
    pub value_b: Tensor,
    pub out_w: Tensor,
    pub out_b: Tensor,
    /// `[d_model, L_N_target]`
    pub target_w: Tensor,
    pub target_b: Tensor,
}

fn xavier(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(&[fan_in, fan_out], |_| rng.random_range(-a..a))
}

fn check_dims(d_model: usize, heads: usize) -> Result<()> {
    if heads == 0 || d_model == 0 || d_model % heads != 0 {
        return Err(Error::Config(format!(
            "d_model {d_model} must be a positive multiple of the head count {heads}"
        )));
    }
    Ok(())
}

impl AttentionHead {
    /// Xavier-uniform weights, zero biases, identity layer norm.
    pub fn random(len_in: usize, len_out: usize, d_model: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        check_dims(d_model, heads)?;
        let zeros = |n| Tensor::zeros(&[n]);
        Ok(AttentionHead {
            heads,
            embed_w: xavier(rng, len_in, d_model),
            embed_b: zeros(d_model),
            norm_g: Tensor::ones(&[d_model]),
            norm_b: zeros(d_model),
            query_w: xavier(rng, d_model, d_model),
            query_b: zeros(d_model),
            key_w: xavier(rng, d_model, d_model),
            key_b: zeros(d_model),
            value_w: xavier(rng, d_model, d_model),
            value_b: zeros(d_model),
            out_w: xavier(rng, d_model, d_model),
            out_b: zeros(d_model),
            target_w: xavier(rng, d_model, len_out),
            target_b: zeros(len_out),
        })
    }

    /// Embed and target projections compose to the identity and the attention
    /// branch is zeroed, so the head returns its input unchanged.
    pub fn pass_through(len: usize, d_model: usize, heads: usize) -> Result<Self> {
        check_dims(d_model, heads)?;
        if d_model < len {
            return Err(Error::Config(format!(
                "pass-through attention needs d_model >= approximation length ({d_model} < {len})"
            )));
        }
        let zeros = |n| Tensor::zeros(&[n]);
        let sq = || Tensor::zeros(&[d_model, d_model]);
        Ok(AttentionHead {
            heads,
            embed_w: Tensor::from_fn(&[len, d_model], |i| f64::from(u8::from(i / d_model == i % d_model))),
            embed_b: zeros(d_model),
            norm_g: Tensor::ones(&[d_model]),
            norm_b: zeros(d_model),
            query_w: sq(),
            query_b: zeros(d_model),
            key_w: sq(),
            key_b: zeros(d_model),
            value_w: sq(),
            value_b: zeros(d_model),
            out_w: sq(),
            out_b: zeros(d_model),
            target_w: Tensor::from_fn(&[d_model, len], |i| f64::from(u8::from(i / len == i % len))),
            target_b: zeros(len),
        })
    }

    pub fn len_in(&self) -> usize {
        self.embed_w.shape()[0]
    }

    pub fn len_out(&self) -> usize {
        self.target_w.shape()[1]
    }

    pub fn d_model(&self) -> usize {
        self.embed_w.shape()[1]
    }

    /// Parameters in binding order.
    pub fn fields(&self) -> [(&'static str, &Tensor); 14] {
        [
            ("embed_w", &self.embed_w),
            ("embed_b", &self.embed_b),
            ("norm_g", &self.norm_g),
            ("norm_b", &self.norm_b),
            ("query_w", &self.query_w),
            ("query_b", &self.query_b),
            ("key_w", &self.key_w),
            ("key_b", &self.key_b),
            ("value_w", &self.value_w),
            ("value_b", &self.value_b),
            ("out_w", &self.out_w),
            ("out_b", &self.out_b),
            ("target_w", &self.target_w),
            ("target_b", &self.target_b),
        ]
    }

    fn fields_mut(&mut self) -> [(&'static str, &mut Tensor); 14] {
        [
            ("embed_w", &mut self.embed_w),
            ("embed_b", &mut self.embed_b),
            ("norm_g", &mut self.norm_g),
            ("norm_b", &mut self.norm_b),
            ("query_w", &mut self.query_w),
            ("query_b", &mut self.query_b),
            ("key_w", &mut self.key_w),
            ("key_b", &mut self.key_b),
            ("value_w", &mut self.value_w),
            ("value_b", &mut self.value_b),
            ("out_w", &mut self.out_w),
            ("out_b", &mut self.out_b),
            ("target_w", &mut self.target_w),
            ("target_b", &mut self.target_b),
        ]
    }

    pub(crate) fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor)) {
        for (n, t) in self.fields() {
            f(&format!("{prefix}.{n}"), t);
        }
    }

    pub(crate) fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (n, t) in self.fields_mut() {
            f(&format!("{prefix}.{n}"), t);
        }
    }

    pub fn bind<'t>(&self, binder: &mut Binder<'t>, prefix: &str) -> AttentionVars<'t> {
        let v: Vec<Var<'t>> = self
            .fields()
            .into_iter()
            .map(|(n, t)| binder.param(&format!("{prefix}.{n}"), t))
            .collect();
        AttentionVars::from_slice(&v, self.heads).expect("14 fields")
    }

    fn constants<'t>(&self, tape: &'t Tape) -> AttentionVars<'t> {
        let v: Vec<Var<'t>> = self
            .fields()
            .into_iter()
            .map(|(_, t)| tape.constant(t.clone()))
            .collect();
        AttentionVars::from_slice(&v, self.heads).expect("14 fields")
    }

    /// Map `[C, L_N]` or `[B, C, L_N]` to the target approximation length.
    pub fn project(&self, x: &Tensor) -> Result<Tensor> {
        let tape = Tape::inference();
        let out = self.constants(&tape).project(tape.constant(x.clone()))?;
        Ok((*out.output.value()).clone())
    }

    /// Attention weights `[B, H, C, C]` for the given input.
    pub fn attention_weights(&self, x: &Tensor) -> Result<Tensor> {
        let tape = Tape::inference();
        let out = self.constants(&tape).project(tape.constant(x.clone()))?;
        Ok((*out.weights.value()).clone())
    }
}

/// An [`AttentionHead`] placed on a tape.
pub struct AttentionVars<'t> {
    heads: usize,
    embed_w: Var<'t>,
    embed_b: Var<'t>,
    norm_g: Var<'t>,
    norm_b: Var<'t>,
    query_w: Var<'t>,
    query_b: Var<'t>,
    key_w: Var<'t>,
    key_b: Var<'t>,
    value_w: Var<'t>,
    value_b: Var<'t>,
    out_w: Var<'t>,
    out_b: Var<'t>,
    target_w: Var<'t>,
    target_b: Var<'t>,
}

pub struct Projection<'t> {
    pub output: Var<'t>,
    pub weights: Var<'t>,
}

impl<'t> AttentionVars<'t> {
    /// Build from leaves given in [`AttentionHead::fields`] order.
    pub fn from_slice(v: &[Var<'t>], heads: usize) -> Result<Self> {
        if v.len() != 14 {
            return Err(Error::InvalidArgument(format!("attention needs 14 tensors, got {}", v.len())));
        }
        Ok(AttentionVars {
            heads,
            embed_w: v[0],
            embed_b: v[1],
            norm_g: v[2],
            norm_b: v[3],
            query_w: v[4],
            query_b: v[5],
            key_w: v[6],
            key_b: v[7],
            value_w: v[8],
            value_b: v[9],
            out_w: v[10],
            out_b: v[11],
            target_w: v[12],
            target_b: v[13],
        })
    }

    pub fn project(&self, x: Var<'t>) -> Result<Projection<'t>> {
        let shape = x.shape();
        let squeeze = shape.len() == 2;
        let x = match shape.as_slice() {
            [c, l] => x.reshape(&[1, *c, *l])?,
            [_, _, _] => x,
            s => return Err(Error::shape("attention", format!("expected [C, L] or [B, C, L], got {s:?}"))),
        };
        let len_in = self.embed_w.shape()[0];
        let [b, c, l] = x.shape()[..] else { unreachable!() };
        if l != len_in {
            return Err(Error::shape(
                "attention",
                format!("approximation length {l}, head expects {len_in}"),
            ));
        }
        let d = self.embed_w.shape()[1];
        let h = self.heads;
        let dh = d / h;

        let tokens = x.linear(self.embed_w, Some(self.embed_b))?;
        let normed = tokens.layer_norm(self.norm_g, self.norm_b, LN_EPS)?;
        let split_heads = |v: Var<'t>| -> Result<Var<'t>> { v.reshape(&[b, c, h, dh])?.permute(&[0, 2, 1, 3]) };
        let q = split_heads(normed.linear(self.query_w, Some(self.query_b))?)?;
        let k = split_heads(normed.linear(self.key_w, Some(self.key_b))?)?;
        let v = split_heads(normed.linear(self.value_w, Some(self.value_b))?)?;
        let scores = q.matmul(k.transpose_last()?)?.scale(1.0 / (dh as f64).sqrt())?;
        let weights = scores.softmax(3)?;
        let context = weights.matmul(v)?.permute(&[0, 2, 1, 3])?.reshape(&[b, c, d])?;
        let mixed = tokens.add(context.linear(self.out_w, Some(self.out_b))?)?;
        let mut output = mixed.linear(self.target_w, Some(self.target_b))?;
        if squeeze {
            let lo = output.shape()[2];
            output = output.reshape(&[c, lo])?;
        }
        Ok(Projection { output, weights })
    }
}
