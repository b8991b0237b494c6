use super::kernels::{self, Padding};
use super::tape::{BackwardFn, Var};
use super::Tensor;
use crate::error::{Error, Result};
use std::rc::Rc;

fn same_tape(a: &Var<'_>, b: &Var<'_>) -> Result<()> {
    if std::ptr::eq(a.tape, b.tape) {
        Ok(())
    } else {
        Err(Error::InvalidArgument("operands live on different tapes".into()))
    }
}

fn boxed(f: impl FnOnce(&Tensor) -> Vec<Option<Tensor>> + 'static) -> BackwardFn {
    Box::new(f)
}

impl<'t> Var<'t> {
    fn unary(
        self,
        op: &'static str,
        value: Tensor,
        backward: impl FnOnce(&Tensor) -> Tensor + 'static,
    ) -> Result<Var<'t>> {
        self.tape
            .record(op, value, &[self.id], || boxed(move |g| vec![Some(backward(g))]))
    }

    fn binary_broadcast(
        self,
        other: Var<'t>,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
        // (a, b, g) -> (d_a, d_b) in broadcast shape
        df: impl Fn(f64, f64, f64) -> (f64, f64) + 'static,
    ) -> Result<Var<'t>> {
        same_tape(&self, &other)?;
        let (a, b) = (self.value(), other.value());
        let out = kernels::broadcast_binary(&a, &b, op, f)?;
        self.tape.record(op, out, &[self.id, other.id], || {
            boxed(move |g| {
                let out_shape = g.shape().to_vec();
                let a_full = expand(&a, &out_shape);
                let b_full = expand(&b, &out_shape);
                let mut ga = Tensor::zeros(&out_shape);
                let mut gb = Tensor::zeros(&out_shape);
                for i in 0..g.numel() {
                    let (da, db) = df(a_full.data()[i], b_full.data()[i], g.data()[i]);
                    ga.data_mut()[i] = da;
                    gb.data_mut()[i] = db;
                }
                vec![
                    Some(kernels::reduce_to_shape(&ga, a.shape())),
                    Some(kernels::reduce_to_shape(&gb, b.shape())),
                ]
            })
        })
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary_broadcast(other, "add", |a, b| a + b, |_, _, g| (g, g))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary_broadcast(other, "sub", |a, b| a - b, |_, _, g| (g, -g))
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary_broadcast(other, "mul", |a, b| a * b, |a, b, g| (g * b, g * a))
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary_broadcast(other, "div", |a, b| a / b, |a, b, g| (g / b, -g * a / (b * b)))
    }

    pub fn scale(self, s: f64) -> Result<Var<'t>> {
        let out = self.value().map(|v| v * s);
        self.unary("scale", out, move |g| g.map(|v| v * s))
    }

    pub fn neg(self) -> Result<Var<'t>> {
        self.scale(-1.0)
    }

    pub fn tanh(self) -> Result<Var<'t>> {
        let y = Rc::new(self.value().map(f64::tanh));
        let saved = Rc::clone(&y);
        self.unary("tanh", (*y).clone(), move |g| {
            g.zip_map(&saved, |g, y| g * (1.0 - y * y)).unwrap()
        })
    }

    pub fn relu(self) -> Result<Var<'t>> {
        let x = self.value();
        let out = x.map(|v| v.max(0.0));
        self.unary("relu", out, move |g| {
            g.zip_map(&x, |g, x| if x > 0.0 { g } else { 0.0 }).unwrap()
        })
    }

    pub fn softmax(self, axis: usize) -> Result<Var<'t>> {
        let y = Rc::new(kernels::softmax(&self.value(), axis)?);
        let saved = Rc::clone(&y);
        self.unary("softmax", (*y).clone(), move |g| {
            kernels::softmax_backward(&saved, g, axis)
        })
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(self) -> Result<Var<'t>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        self.unary("sum", Tensor::scalar(x.sum()), move |g| {
            Tensor::full(&shape, g.item())
        })
    }

    pub fn mean(self) -> Result<Var<'t>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let n = x.numel() as f64;
        self.unary("mean", Tensor::scalar(x.mean()), move |g| {
            Tensor::full(&shape, g.item() / n)
        })
    }

    /// Mean squared error. With a mask, only positions where `mask == 1`
    /// contribute and the mean runs over those positions.
    pub fn mse(self, target: Var<'t>, mask: Option<&Tensor>) -> Result<Var<'t>> {
        same_tape(&self, &target)?;
        let (p, t) = (self.value(), target.value());
        if p.shape() != t.shape() {
            return Err(Error::shape("mse", format!("{:?} vs {:?}", p.shape(), t.shape())));
        }
        let weights: Tensor = match mask {
            Some(m) if m.shape() != p.shape() => {
                return Err(Error::shape("mse", format!("mask {:?} vs {:?}", m.shape(), p.shape())))
            }
            Some(m) => m.clone(),
            None => Tensor::ones(p.shape()),
        };
        let count = weights.sum();
        if count <= 0.0 {
            return Err(Error::InvalidArgument("mse mask selects no positions".into()));
        }
        let diff = p.zip_map(&t, |a, b| a - b)?;
        let loss = diff
            .data()
            .iter()
            .zip(weights.data())
            .map(|(d, w)| w * d * d)
            .sum::<f64>()
            / count;
        self.tape.record("mse", Tensor::scalar(loss), &[self.id, target.id], || {
            boxed(move |g| {
                let s = 2.0 * g.item() / count;
                let gp = diff.zip_map(&weights, |d, w| s * w * d).unwrap();
                let gt = gp.map(|v| -v);
                vec![Some(gp), Some(gt)]
            })
        })
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        let original = x.shape().to_vec();
        let out = x.reshape(shape)?;
        self.unary("reshape", out, move |g| g.reshape(&original).unwrap())
    }

    pub fn permute(self, perm: &[usize]) -> Result<Var<'t>> {
        let out = kernels::permute(&self.value(), perm)?;
        let inv = kernels::inverse_permutation(perm);
        self.unary("permute", out, move |g| kernels::permute(g, &inv).unwrap())
    }

    /// Swap the last two axes.
    pub fn transpose_last(self) -> Result<Var<'t>> {
        let r = self.value().rank();
        if r < 2 {
            return Err(Error::shape("transpose", "rank < 2"));
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(&perm)
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        same_tape(&self, &other)?;
        let (a, b) = (self.value(), other.value());
        let out = kernels::matmul(&a, &b)?;
        self.tape.record("matmul", out, &[self.id, other.id], || {
            boxed(move |g| {
                let (ga, gb) = kernels::matmul_backward(&a, &b, g);
                vec![Some(ga), Some(gb)]
            })
        })
    }

    /// Affine map over the trailing axis: `x · w + bias`, `w: [D_in, D_out]`.
    pub fn linear(self, weight: Var<'t>, bias: Option<Var<'t>>) -> Result<Var<'t>> {
        same_tape(&self, &weight)?;
        let (x, w) = (self.value(), weight.value());
        let b = bias.map(|b| b.value());
        let out = kernels::linear(&x, &w, b.as_deref())?;
        let mut parents = vec![self.id, weight.id];
        if let Some(bv) = bias {
            same_tape(&self, &bv)?;
            parents.push(bv.id);
        }
        let has_bias = bias.is_some();
        self.tape.record("linear", out, &parents, || {
            boxed(move |g| {
                let (gx, gw, gb) = kernels::linear_backward(&x, &w, g);
                let mut v = vec![Some(gx), Some(gw)];
                if has_bias {
                    v.push(Some(gb));
                }
                v
            })
        })
    }

    /// Grouped 1-D cross-correlation; `kernels: [C_out, C_in/groups, K]`.
    pub fn conv1d(self, kernels: Var<'t>, bias: Option<Var<'t>>, groups: usize, padding: Padding) -> Result<Var<'t>> {
        same_tape(&self, &kernels)?;
        let (x, w) = (self.value(), kernels.value());
        let b = bias.map(|b| b.value());
        let out = kernels::conv1d(&x, &w, b.as_deref(), groups, padding)?;
        let mut parents = vec![self.id, kernels.id];
        if let Some(bv) = bias {
            parents.push(bv.id);
        }
        let has_bias = bias.is_some();
        self.tape.record("conv1d", out, &parents, || {
            boxed(move |g| {
                let gx = kernels::conv_transpose1d(g, &w, None, groups, padding).unwrap();
                let gw = kernels::conv1d_grad_weight(&x, g, w.shape(), groups, padding).unwrap();
                let mut v = vec![Some(gx), Some(gw)];
                if has_bias {
                    v.push(Some(kernels::channel_sums(g)));
                }
                v
            })
        })
    }

    /// Adjoint of [`Var::conv1d`] in its input; `kernels: [C_in, C_out/groups, K]`.
    pub fn conv_transpose1d(
        self,
        kernels: Var<'t>,
        bias: Option<Var<'t>>,
        groups: usize,
        padding: Padding,
    ) -> Result<Var<'t>> {
        same_tape(&self, &kernels)?;
        let (y, w) = (self.value(), kernels.value());
        let b = bias.map(|b| b.value());
        let out = kernels::conv_transpose1d(&y, &w, b.as_deref(), groups, padding)?;
        let mut parents = vec![self.id, kernels.id];
        if let Some(bv) = bias {
            parents.push(bv.id);
        }
        let has_bias = bias.is_some();
        self.tape.record("conv_transpose1d", out, &parents, || {
            boxed(move |g| {
                let gy = kernels::conv1d(g, &w, None, groups, padding).unwrap();
                let gw = kernels::conv_transpose1d_grad_weight(&y, g, w.shape(), groups, padding).unwrap();
                let mut v = vec![Some(gy), Some(gw)];
                if has_bias {
                    v.push(Some(kernels::channel_sums(g)));
                }
                v
            })
        })
    }

    pub fn layer_norm(self, gamma: Var<'t>, beta: Var<'t>, eps: f64) -> Result<Var<'t>> {
        same_tape(&self, &gamma)?;
        let gm = gamma.value();
        let (y, xhat, inv) = kernels::layer_norm(&self.value(), &gm, &beta.value(), eps)?;
        self.tape.record("layer_norm", y, &[self.id, gamma.id, beta.id], || {
            boxed(move |g| {
                let (gx, gg, gb) = kernels::layer_norm_backward(&xhat, &inv, &gm, g);
                vec![Some(gx), Some(gg), Some(gb)]
            })
        })
    }

    /// Centered moving average along the last axis with edge replication.
    pub fn moving_average(self, window: usize) -> Result<Var<'t>> {
        let out = kernels::moving_average(&self.value(), window)?;
        self.unary("moving_average", out, move |g| {
            kernels::moving_average_backward(g, window)
        })
    }

    pub fn pad_right_replicate(self, n: usize) -> Result<Var<'t>> {
        let out = kernels::pad_right_replicate(&self.value(), n);
        self.unary("pad_right_replicate", out, move |g| {
            kernels::pad_right_replicate_backward(g, n)
        })
    }

    pub fn narrow_last(self, start: usize, len: usize) -> Result<Var<'t>> {
        let x = self.value();
        let full = *x.shape().last().unwrap();
        let out = kernels::narrow_last(&x, start, len)?;
        self.unary("narrow", out, move |g| {
            kernels::narrow_last_backward(g, start, full)
        })
    }

    /// Every `step`-th sample along the last axis starting at `offset`.
    pub fn stride_last(self, offset: usize, step: usize) -> Result<Var<'t>> {
        let x = self.value();
        let full = *x.shape().last().unwrap();
        let out = kernels::stride_last(&x, offset, step)?;
        self.unary("stride", out, move |g| {
            kernels::stride_last_backward(g, offset, step, full)
        })
    }

    /// Inverse of splitting into even/odd samples along the last axis.
    pub fn interleave(self, odd: Var<'t>) -> Result<Var<'t>> {
        same_tape(&self, &odd)?;
        let out = kernels::interleave_last(&self.value(), &odd.value())?;
        self.tape.record("interleave", out, &[self.id, odd.id], || {
            boxed(move |g| {
                let e = kernels::stride_last(g, 0, 2).unwrap();
                let o = kernels::stride_last(g, 1, 2).unwrap();
                vec![Some(e), Some(o)]
            })
        })
    }

    /// Per-channel choice of linear head: `x: [B, C, L]`, `weight: [k, L, L_p]`,
    /// `bias: [k, L_p]`, `assignments[c] ∈ 0..k`.
    pub fn grouped_linear(self, weight: Var<'t>, bias: Var<'t>, assignments: &[usize]) -> Result<Var<'t>> {
        same_tape(&self, &weight)?;
        let (x, w) = (self.value(), weight.value());
        let out = kernels::grouped_linear(&x, &w, &bias.value(), assignments)?;
        let assign = assignments.to_vec();
        self.tape.record("grouped_linear", out, &[self.id, weight.id, bias.id], || {
            boxed(move |g| {
                let (gx, gw, gb) = kernels::grouped_linear_backward(&x, &w, &assign, g);
                vec![Some(gx), Some(gw), Some(gb)]
            })
        })
    }
}

fn expand(t: &Tensor, shape: &[usize]) -> Tensor {
    if t.shape() == shape {
        return t.clone();
    }
    kernels::broadcast_binary(t, &Tensor::zeros(shape), "expand", |a, _| a).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    #[test]
    fn tanh_of_zero() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[3]));
        assert_eq!(x.tanh().unwrap().value().data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[3]));
        let y = x.softmax(0).unwrap().value();
        for v in y.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn linear_hand_arithmetic() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(vec![1.0, 2.0]));
        let w = tape.constant(Tensor::eye(2));
        let b = tape.constant(Tensor::from_vec(vec![3.0, 3.0]));
        let y = x.linear(w, Some(b)).unwrap().value();
        assert_eq!(y.data(), &[4.0, 5.0]);
    }

    #[test]
    fn broadcast_add_and_gradient_reduction() {
        let tape = Tape::new();
        let x = tape.param(Tensor::from_fn(&[2, 3], |i| i as f64));
        let b = tape.param(Tensor::new(vec![2, 1], vec![10.0, 20.0]).unwrap());
        let y = x.add(b).unwrap();
        assert_eq!(y.value().data(), &[10.0, 11.0, 12.0, 23.0, 24.0, 25.0]);
        let grads = tape.backward(y.sum().unwrap()).unwrap();
        assert_eq!(grads.get(b).unwrap().data(), &[3.0, 3.0]);
    }

    #[test]
    fn incompatible_broadcast_is_an_error() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 3]));
        let y = tape.constant(Tensor::zeros(&[2, 2]));
        assert!(matches!(x.add(y), Err(Error::Shape { .. })));
    }

    #[test]
    fn masked_mse_with_full_mask_matches_unmasked() {
        let tape = Tape::new();
        let p = tape.constant(Tensor::from_fn(&[4, 5], |i| (i as f64 * 0.37).sin()));
        let t = tape.constant(Tensor::from_fn(&[4, 5], |i| (i as f64 * 0.11).cos()));
        let full = p.mse(t, None).unwrap().value().item();
        let masked = p.mse(t, Some(&Tensor::ones(&[4, 5]))).unwrap().value().item();
        assert_eq!(full, masked);
    }

    #[test]
    fn masked_mse_ignores_unmasked_positions() {
        let tape = Tape::new();
        let p = tape.constant(Tensor::from_vec(vec![1.0, 5.0, 3.0]));
        let t = tape.constant(Tensor::from_vec(vec![0.0, 0.0, 0.0]));
        let mask = Tensor::from_vec(vec![1.0, 0.0, 1.0]);
        assert_eq!(p.mse(t, Some(&mask)).unwrap().value().item(), 5.0);
    }
}
