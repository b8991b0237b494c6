//! Finite-difference cases for every differentiable op and composed block.
//! Each case builds one random instance from its seed.

use super::*;
use adawave::attention::{AttentionHead, AttentionVars};
use adawave::lifting::{analyze_var, synthesize_var, InverseMode, LiftingLevel, LiftingStack};
use adawave::model::{AdaWaveNet, ModelConfig, Task, TrendInit};
use adawave::params::Parameterized;
use adawave::tensor::Padding;
use adawave::{Tensor, Var};
use rand::Rng;

pub const INSTANCES: u64 = 20;

pub type Case = fn(u64) -> FdReport;

/// Every case, by name.
pub const ALL: &[(&str, Case)] = &[
    ("add", add),
    ("sub", sub),
    ("mul", mul),
    ("div", div),
    ("scale", scale),
    ("neg", neg),
    ("tanh", tanh),
    ("relu", relu),
    ("sum", sum),
    ("mean", mean),
    ("softmax", softmax),
    ("mse", mse),
    ("reshape", reshape),
    ("permute", permute),
    ("transpose_last", transpose_last),
    ("pad_right_replicate", pad_right_replicate),
    ("narrow_last", narrow_last),
    ("stride_last", stride_last),
    ("interleave", interleave),
    ("matmul", matmul),
    ("linear", linear),
    ("grouped_linear", grouped_linear),
    ("layer_norm", layer_norm),
    ("moving_average", moving_average),
    ("conv1d", conv1d),
    ("conv_transpose1d", conv_transpose1d),
    ("lifting", lifting),
    ("attention", attention),
    ("model", model),
];

/// Worst instance of `case`, with `checked` summed over all instances.
pub fn worst(case: Case) -> (u64, FdReport) {
    let mut total = 0;
    let (seed, mut report) = (0..INSTANCES)
        .map(|seed| {
            let r = case(seed);
            total += r.checked;
            (seed, r)
        })
        .max_by(|a, b| a.1.worst.total_cmp(&b.1.worst))
        .expect("instances");
    report.checked = total;
    (seed, report)
}

fn dims(r: &mut impl Rng) -> (usize, usize, usize) {
    (r.random_range(1..=2), r.random_range(1..=3), r.random_range(2..=7))
}

type BinaryOp = for<'t> fn(Var<'t>, Var<'t>) -> adawave::Result<Var<'t>>;

fn binary(seed: u64, op: BinaryOp) -> FdReport {
    let mut r = rng(seed);
    let (b, c, l) = dims(&mut r);
    let a = uniform(&mut r, &[b, c, l], -1.0, 1.0);
    let rhs_shape: Vec<usize> = match seed % 3 {
        0 => vec![b, c, l],
        1 => vec![c, 1],
        _ => vec![l],
    };
    let rhs = away_from_zero(&mut r, &rhs_shape);
    fd_check(&[a, rhs], |t, v| project(t, op(v[0], v[1])?, seed))
}

pub fn add(seed: u64) -> FdReport {
    binary(seed, |a, b| a.add(b))
}

pub fn sub(seed: u64) -> FdReport {
    binary(seed, |a, b| a.sub(b))
}

pub fn mul(seed: u64) -> FdReport {
    binary(seed, |a, b| a.mul(b))
}

pub fn div(seed: u64) -> FdReport {
    binary(seed, |a, b| a.div(b))
}

type UnaryOp = for<'t> fn(Var<'t>) -> adawave::Result<Var<'t>>;

fn unary(seed: u64, op: UnaryOp) -> FdReport {
    let mut r = rng(seed);
    let (b, c, l) = dims(&mut r);
    let x = away_from_zero(&mut r, &[b, c, l]);
    fd_check(&[x], |t, v| project(t, op(v[0])?, seed))
}

pub fn scale(seed: u64) -> FdReport {
    unary(seed, |a| a.scale(-1.7))
}

pub fn neg(seed: u64) -> FdReport {
    unary(seed, |a| a.neg())
}

pub fn tanh(seed: u64) -> FdReport {
    unary(seed, |a| a.tanh())
}

pub fn relu(seed: u64) -> FdReport {
    unary(seed, |a| a.relu())
}

pub fn sum(seed: u64) -> FdReport {
    let mut r = rng(seed);
    let (b, c, l) = dims(&mut r);
    fd_check(&[uniform(&mut r, &[b, c, l], -1.0, 1.0)], |_, v| v[0].tanh()?.sum())
}

pub fn mean(seed: u64) -> FdReport {
    let mut r = rng(seed);
    let (b, c, l) = dims(&mut r);
    fd_check(&[uniform(&mut r, &[b, c, l], -1.0, 1.0)], |_, v| v[0].tanh()?.mean())
}

pub fn softmax(seed: u64) -> FdReport {
    let mut r = rng(seed);
    let (b, c, l) = dims(&mut r);
    let axis = r.random_range(0..3);
    fd_check(&[uniform(&mut r, &[b, c, l], -2.0, 2.0)], |t, v| project(t, v[0].softmax(axis)?, seed))
}

pub fn mse(seed: u64) -> FdReport {
    let mut r = rng(seed);
    let (b, c, l) = dims(&mut r);
    let p = uniform(&mut r, &[b, c, l], -1.0, 1.0);
    let q = uniform(&mut r, &[b, c, l], -1.0, 1.0);
    let mut mask = Tensor::from_fn(&[b, c, l], |_| f64::from(u8::from(r.random_bool(0.5))));
    mask.data_mut()[0] = 1.0;
    let use_mask = seed % 2 == 1;
    fd_check(&[p, q], |_, v| v[0].mse(v[1], use_mask.then_some(&mask)))
}

pub fn reshape(seed: u64) -> FdReport {
    let mut r = rng(seed);
    let (b, c, l) = dims(&mut r);
    fd_check(&[uniform(&mut r, &[b, c, l], -1.0, 1.0)], |t, v| {
        project(t, v[0].reshape(&[b * c, l])?.tanh()?, seed)
    })
}

pub fn permute(seed: u64) -> FdReport {
    let mut r = rng(seed);
    let (b, c, l) = dims(&mut r);
    let perms = [[0, 2, 1], [2, 0, 1], [1, 2, 0], [2, 1, 0]];
    let perm = perms[seed as usize % perms.len()];
    fd_check(&[uniform(&mut r, &[b, c, l], -1.0, 1.0)], |t, v| project(t, v[0].permute(&perm)?, seed))
}

pub fn transpose_last(seed: u64) -> FdReport {
    let mut r = rng(seed);
    let (b, c, l) = dims(&mut r);
    fd_check(&[uniform(&mut r, &[b, c, l], -1.0, 1.0)], |t, v| project(t, v[0].transpose_last()?, seed))
}

pub fn pad_right_replicate(seed: u64) -> FdReport {
    let mut r = rng(seed);
    let (b, c, l) = dims(&mut r);
    let n = r.random_range(1..4);
    fd_check(&[uniform(&mut r, &[b, c, l], -1.0, 1.0)], |t, v| {
        project(t, v[0].pad_right_replicate(n)?, seed)
    })
}

pub fn narrow_last(seed: u64) -> FdReport {
    let mut r = rng(seed);
    let (b, c, l) = dims(&mut r);
    let start = r.random_range(0..l);
    let len = r.random_range(1..=l - start);
    fd_check(&[uniform(&mut r, &[b, c, l], -1.0, 1.0)], |t, v| {
        project(t, v[0].narrow_last(start, len)?, seed)
    })
}

pub fn stride_last(seed: u64) -> FdReport {
    let mut r = rng(seed);
    let (b, c, _) = dims(&mut r);
    let l = r.random_range(4..10);
    let step = r.random_range(1..4);
    let offset = r.random_range(0..step);
    fd_check(&[uniform(&mut r, &[b, c, l], -1.0, 1.0)], |t, v| {
        project(t, v[0].stride_last(offset, step)?, seed)
    })
}

pub fn interleave(seed: u64) -> FdReport {
    let mut r = rng(seed);
    let (b, c, l) = dims(&mut r);
    let e = uniform(&mut r, &[b, c, l], -1.0, 1.0);
    let o = uniform(&mut r, &[b, c, l], -1.0, 1.0);
    fd_check(&[e, o], |t, v| project(t, v[0].interleave(v[1])?, seed))
}

pub fn matmul(seed: u64) -> FdReport {
    let mut r = rng(seed);
    let (b, m, k) = dims(&mut r);
    let n = r.random_range(1..5);
    let a = uniform(&mut r, &[b, m, k], -1.0, 1.0);
    let w = uniform(&mut r, &[b, k, n], -1.0, 1.0);
    fd_check(&[a, w], |t, v| project(t, v[0].matmul(v[1])?, seed))
}

pub fn linear(seed: u64) -> FdReport {
    let mut r = rng(seed);
    let (b, c, d_in) = dims(&mut r);
    let d_out = r.random_range(1..6);
    let x = uniform(&mut r, &[b, c, d_in], -1.0, 1.0);
    let w = uniform(&mut r, &[d_in, d_out], -1.0, 1.0);
    let bias = uniform(&mut r, &[d_out], -1.0, 1.0);
    fd_check(&[x, w, bias], |t, v| project(t, v[0].linear(v[1], Some(v[2]))?, seed))
}

pub fn grouped_linear(seed: u64) -> FdReport {
    let mut r = rng(seed);
    let (b, c, l) = dims(&mut r);
    let k = r.random_range(1..=c);
    let lp = r.random_range(1..6);
    let assign: Vec<usize> = (0..c).map(|i| if i < k { i } else { r.random_range(0..k) }).collect();
    let x = uniform(&mut r, &[b, c, l], -1.0, 1.0);
    let w = uniform(&mut r, &[k, l, lp], -1.0, 1.0);
    let bias = uniform(&mut r, &[k, lp], -1.0, 1.0);
    fd_check(&[x, w, bias], |t, v| project(t, v[0].grouped_linear(v[1], v[2], &assign)?, seed))
}

pub fn layer_norm(seed: u64) -> FdReport {
    let mut r = rng(seed);
    let (b, c, d) = dims(&mut r);
    let d = d.max(2);
    let x = uniform(&mut r, &[b, c, d], -2.0, 2.0);
    let g = uniform(&mut r, &[d], 0.5, 1.5);
    let beta = uniform(&mut r, &[d], -0.5, 0.5);
    fd_check(&[x, g, beta], |t, v| project(t, v[0].layer_norm(v[1], v[2], 1e-5)?, seed))
}

pub fn moving_average(seed: u64) -> FdReport {
    let mut r = rng(seed);
    let (b, c, l) = dims(&mut r);
    let window = 2 * r.random_range(0..4) + 1;
    fd_check(&[uniform(&mut r, &[b, c, l], -1.0, 1.0)], |t, v| {
        project(t, v[0].moving_average(window)?, seed)
    })
}

fn padding_for(seed: u64, k: usize) -> Padding {
    match seed % 3 {
        0 if k % 2 == 1 => Padding::Same,
        2 if k >= 3 => Padding::Explicit { left: 1, right: 1 },
        _ => Padding::SameAsymmetric,
    }
}

pub fn conv1d(seed: u64) -> FdReport {
    let mut r = rng(seed);
    let b = r.random_range(1..3);
    let groups = r.random_range(1..3);
    let cin = groups * r.random_range(1..3);
    let cout = groups * r.random_range(1..3);
    let k = r.random_range(1..6);
    let l = r.random_range(k.max(3)..9);
    let pad = padding_for(seed, k);
    let x = uniform(&mut r, &[b, cin, l], -1.0, 1.0);
    let w = uniform(&mut r, &[cout, cin / groups, k], -1.0, 1.0);
    let bias = uniform(&mut r, &[cout], -1.0, 1.0);
    fd_check(&[x, w, bias], |t, v| project(t, v[0].conv1d(v[1], Some(v[2]), groups, pad)?, seed))
}

pub fn conv_transpose1d(seed: u64) -> FdReport {
    let mut r = rng(seed);
    let b = r.random_range(1..3);
    let groups = r.random_range(1..3);
    let cin = groups * r.random_range(1..3);
    let cout = groups * r.random_range(1..3);
    let k = r.random_range(1..6);
    let l = r.random_range(k.max(3)..9);
    let pad = padding_for(seed, k);
    let y = uniform(&mut r, &[b, cin, l], -1.0, 1.0);
    let w = uniform(&mut r, &[cin, cout / groups, k], -1.0, 1.0);
    let bias = uniform(&mut r, &[cout], -1.0, 1.0);
    fd_check(&[y, w, bias], |t, v| {
        project(t, v[0].conv_transpose1d(v[1], Some(v[2]), groups, pad)?, seed)
    })
}

fn random_level(r: &mut impl Rng, c: usize, k: usize, mode: InverseMode) -> LiftingLevel {
    let mut level = LiftingLevel::zeros(c, k, mode);
    let mut fill = |t: &mut Tensor| *t = uniform(r, t.shape(), -0.5, 0.5);
    fill(&mut level.predict_w);
    fill(&mut level.predict_b);
    fill(&mut level.update_w);
    fill(&mut level.update_b);
    if let Some(inv) = &mut level.inverse {
        fill(&mut inv.predict_w);
        fill(&mut inv.predict_b);
        fill(&mut inv.update_w);
        fill(&mut inv.update_b);
    }
    level
}

pub fn lifting(seed: u64) -> FdReport {
    let mut r = rng(seed);
    let c = r.random_range(1..3);
    let k = [3, 4, 7][seed as usize % 3];
    let levels = r.random_range(1..3);
    let l = r.random_range(4 << levels..(4 << levels) + 5);
    let mode = if seed % 2 == 0 { InverseMode::Tied } else { InverseMode::Learned };
    let subtract = seed % 4 == 3;
    let stack = LiftingStack {
        levels: (0..levels).map(|_| random_level(&mut r, c, k, mode)).collect(),
        mode,
        subtract_detail_first: subtract,
    };
    let params: Vec<(String, Tensor)> = stack.named_params();
    let mut inputs = vec![uniform(&mut r, &[1, c, l], -1.0, 1.0)];
    inputs.extend(params.iter().map(|(_, t)| t.clone()));
    let per_level = if mode == InverseMode::Learned { 8 } else { 4 };
    fd_check(&inputs, |t, v| {
        let levels: Vec<_> = (0..levels)
            .map(|i| level_vars(&v[1 + i * per_level..1 + (i + 1) * per_level]))
            .collect();
        let p = analyze_var(v[0], &levels)?;
        // Perturb the approximation so the inverse does not collapse to identity.
        let approx = p.approx.tanh()?;
        let y = synthesize_var(approx, &p.details, &p.padded, &levels, mode, subtract)?;
        project(t, y, seed)
    })
}

fn level_vars<'t>(v: &[Var<'t>]) -> adawave::lifting::LevelVars<'t> {
    adawave::lifting::LevelVars {
        predict_w: v[0],
        predict_b: v[1],
        update_w: v[2],
        update_b: v[3],
        inverse: (v.len() == 8).then(|| adawave::lifting::InverseVars {
            update_w: v[4],
            update_b: v[5],
            predict_w: v[6],
            predict_b: v[7],
        }),
    }
}

pub fn attention(seed: u64) -> FdReport {
    let mut r = rng(seed);
    let b = r.random_range(1..3);
    let c = r.random_range(1..4);
    let l_in = r.random_range(2..6);
    let l_out = r.random_range(2..6);
    let heads = r.random_range(1..3);
    let d = heads * r.random_range(1..4);
    let mut head = AttentionHead::random(l_in, l_out, d, heads, &mut r).unwrap();
    head.norm_g = uniform(&mut r, &[d], 0.5, 1.5);
    head.norm_b = uniform(&mut r, &[d], -0.3, 0.3);
    let x = uniform(&mut r, &[b, c, l_in], -1.0, 1.0);
    let mut inputs = vec![x];
    inputs.extend(head.fields().into_iter().map(|(_, t)| t.clone()));
    fd_check(&inputs, |t, v| {
        let vars = AttentionVars::from_slice(&v[1..], heads)?;
        project(t, vars.project(v[0])?.output, seed)
    })
}

/// Small composed models with every parameter group randomized.
fn random_model(seed: u64) -> (AdaWaveNet, Tensor, Tensor, Option<Tensor>) {
    let mut r = rng(seed);
    let c = r.random_range(2..4);
    let task = [Task::Forecast, Task::Impute, Task::SuperRes][seed as usize % 3];
    let l = [16, 17, 20][seed as usize % 3];
    let l = if task == Task::SuperRes { 16 } else { l };
    let mut cfg = ModelConfig::new(task, c, l);
    cfg.levels = r.random_range(1..3);
    cfg.kernel_size = [3, 5][seed as usize % 2];
    cfg.n_clusters = r.random_range(1..=c);
    cfg.ma_window = 5;
    cfg.heads = 2;
    cfg.d_model = 4;
    cfg.revin = seed % 2 == 0;
    cfg.inverse = if seed % 5 == 4 { InverseMode::Tied } else { InverseMode::Learned };
    cfg.subtract_detail_first = seed % 7 == 3;
    cfg.channel_attention = seed % 6 != 5;
    cfg.trend_init = TrendInit::Average;
    cfg.sr_ratio = if task == Task::SuperRes { 2 } else { 1 };
    cfg.seed = seed;
    let mut model = AdaWaveNet::new(cfg.clone()).unwrap();
    let windows = uniform(&mut r, &[6, c, l], -1.0, 1.0);
    model.fit_clustering(&windows).unwrap();
    model.visit_params_mut(&mut |name, t| {
        let (lo, hi) = if name.ends_with("norm_g") || name == "revin.weight" {
            (0.5, 1.5)
        } else {
            (-0.4, 0.4)
        };
        *t = uniform(&mut r, t.shape(), lo, hi);
    });
    let b = r.random_range(1..3);
    let x = uniform(&mut r, &[b, c, l], -2.0, 2.0);
    let y = uniform(&mut r, &[b, c, cfg.horizon], -2.0, 2.0);
    let mask = (task == Task::Impute).then(|| {
        let mut m = Tensor::from_fn(&[b, c, cfg.horizon], |_| f64::from(u8::from(r.random_bool(0.4))));
        m.data_mut()[0] = 1.0;
        m
    });
    (model, x, y, mask)
}

pub fn model(seed: u64) -> FdReport {
    let (model, x, y, mask) = random_model(seed);
    let (_, grads) = model.loss_and_grads(&x, &y, mask.as_ref()).unwrap();
    let mut report = FdReport {
        checked: 0,
        worst: 0.0,
        worst_at: String::new(),
    };
    for (name, value) in model.named_params() {
        let analytic = grads.get(&name).cloned().unwrap_or_else(|| Tensor::zeros(value.shape()));
        for j in 0..value.numel() {
            let eval = |delta: f64| {
                let mut m = model.clone();
                m.visit_params_mut(&mut |n, t| {
                    if n == name {
                        t.data_mut()[j] += delta;
                    }
                });
                m.loss(&x, &y, mask.as_ref()).unwrap()
            };
            let numeric = (eval(FD_EPS) - eval(-FD_EPS)) / (2.0 * FD_EPS);
            let e = rel_err(analytic.data()[j], numeric);
            report.checked += 1;
            if e > report.worst {
                report.worst = e;
                report.worst_at = format!("{name}[{j}]: analytic {} numeric {numeric}", analytic.data()[j]);
            }
        }
    }
    report
}
