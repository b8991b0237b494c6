#![allow(dead_code)]

use adawave::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_EPS: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
/// Denominator floor so that entries whose true gradient is ~0 are compared
/// on an absolute scale of `FD_REL_TOL * FD_FLOOR`.
pub const FD_FLOOR: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

pub fn normal(rng: &mut impl Rng, shape: &[usize], std: f64) -> Tensor {
    use rand_distr::{Distribution, StandardNormal};
    Tensor::from_fn(shape, |_| {
        let z: f64 = StandardNormal.sample(rng);
        std * z
    })
}

/// Values bounded away from zero, for ops with a kink there.
pub fn away_from_zero(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.05..1.5);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FD_FLOOR)
}

#[derive(Debug)]
pub struct FdReport {
    pub checked: usize,
    pub worst: f64,
    pub worst_at: String,
}

impl FdReport {
    pub fn passed(&self) -> bool {
        self.worst <= FD_REL_TOL
    }
}

/// Compare reverse-mode gradients of a scalar `f(inputs)` with central
/// differences for every element of every input.
pub fn fd_check<F>(inputs: &[Tensor], f: F) -> FdReport
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> adawave::Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&tape, &vars).expect("forward");
    let grads = tape.backward(out).expect("backward");
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let eval = |xs: &[Tensor]| -> f64 {
        let tape = Tape::inference();
        let vars: Vec<Var<'_>> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        f(&tape, &vars).expect("forward").value().item()
    };

    let mut report = FdReport {
        checked: 0,
        worst: 0.0,
        worst_at: String::new(),
    };
    let mut xs = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.numel() {
            let x0 = input.data()[j];
            xs[i].data_mut()[j] = x0 + FD_EPS;
            let up = eval(&xs);
            xs[i].data_mut()[j] = x0 - FD_EPS;
            let down = eval(&xs);
            xs[i].data_mut()[j] = x0;
            let numeric = (up - down) / (2.0 * FD_EPS);
            let e = rel_err(analytic[i].data()[j], numeric);
            report.checked += 1;
            if e > report.worst {
                report.worst = e;
                report.worst_at = format!("input {i}[{j}]: analytic {} numeric {numeric}", analytic[i].data()[j]);
            }
        }
    }
    report
}

/// Reduce any output to a scalar through a fixed random projection so that
/// every output element gets a distinct upstream gradient.
pub fn project<'t>(tape: &'t Tape, y: Var<'t>, seed: u64) -> adawave::Result<Var<'t>> {
    let mut r = rng(seed ^ 0x9e37_79b9);
    let w = uniform(&mut r, &y.shape(), -1.0, 1.0);
    y.mul(tape.constant(w))?.sum()
}

pub mod grad_cases;
