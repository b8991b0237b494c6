mod common;

use adawave::tensor::kernels::{self, Padding};
use adawave::Tensor;
use common::*;
use rand::Rng;

const TOL: f64 = 1e-10;

/// Literal zero-padded cross-correlation.
fn conv_oracle(x: &Tensor, w: &Tensor, groups: usize, left: usize, right: usize) -> Tensor {
    let (b, cin, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (cout, cin_g, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    let lout = l + left + right - k + 1;
    let cout_g = cout / groups;
    let mut out = Tensor::zeros(&[b, cout, lout]);
    for bi in 0..b {
        for o in 0..cout {
            let g = o / cout_g;
            for t in 0..lout {
                let mut s = 0.0;
                for il in 0..cin_g {
                    for j in 0..k {
                        let src = t as isize + j as isize - left as isize;
                        if src >= 0 && (src as usize) < l {
                            s += w.at(&[o, il, j]) * x.at(&[bi, g * cin_g + il, src as usize]);
                        }
                    }
                }
                out.set(&[bi, o, t], s);
            }
        }
    }
    assert_eq!(cin, groups * cin_g);
    out
}

#[test]
fn conv1d_matches_direct_summation() {
    for seed in 0..30 {
        let mut r = rng(seed);
        let groups = r.random_range(1..4);
        let cin = groups * r.random_range(1..3);
        let cout = groups * r.random_range(1..3);
        let k = r.random_range(1..9);
        let l = r.random_range(k..k + 10);
        let b = r.random_range(1..3);
        let x = uniform(&mut r, &[b, cin, l], -1.0, 1.0);
        let w = uniform(&mut r, &[cout, cin / groups, k], -1.0, 1.0);
        for pad in [Padding::SameAsymmetric, Padding::Explicit { left: 0, right: 0 }, Padding::Explicit { left: 2, right: 1 }] {
            let (left, right) = pad.resolve(k).unwrap();
            let got = kernels::conv1d(&x, &w, None, groups, pad).unwrap();
            let want = conv_oracle(&x, &w, groups, left, right);
            assert!(got.max_abs_diff(&want) < TOL, "seed {seed} {pad:?}");
        }
    }
}

#[test]
fn same_asymmetric_padding_preserves_length_for_even_kernels() {
    for k in 1..=16 {
        let (left, right) = Padding::SameAsymmetric.resolve(k).unwrap();
        assert_eq!(left + right, k - 1);
        assert_eq!(left, (k - 1) / 2);
    }
    assert!(Padding::Same.resolve(16).is_err());
}

#[test]
fn conv_transpose_is_the_adjoint_of_conv() {
    for seed in 0..30 {
        let mut r = rng(seed);
        let groups = r.random_range(1..3);
        let cin = groups * r.random_range(1..3);
        let cout = groups * r.random_range(1..3);
        let k = r.random_range(1..17);
        let l = r.random_range(k.max(2)..k + 12);
        let pad = Padding::SameAsymmetric;
        let x = uniform(&mut r, &[2, cin, l], -1.0, 1.0);
        let w = uniform(&mut r, &[cout, cin / groups, k], -1.0, 1.0);
        let y = uniform(&mut r, &[2, cout, l], -1.0, 1.0);
        let ax = kernels::conv1d(&x, &w, None, groups, pad).unwrap();
        // [C_out, C_in/groups, K] read as a transposed kernel maps C_out channels back to C_in.
        let aty = kernels::conv_transpose1d(&y, &w, None, groups, pad).unwrap();
        let lhs = ax.dot(&y);
        let rhs = x.dot(&aty);
        assert!((lhs - rhs).abs() < TOL * lhs.abs().max(1.0), "seed {seed}: {lhs} vs {rhs}");
    }
}

#[test]
fn matmul_and_linear_match_index_sums() {
    for seed in 0..20 {
        let mut r = rng(seed);
        let (b, m, k, n) = (r.random_range(1..3), r.random_range(1..5), r.random_range(1..5), r.random_range(1..5));
        let a = uniform(&mut r, &[b, m, k], -1.0, 1.0);
        let w = uniform(&mut r, &[b, k, n], -1.0, 1.0);
        let got = kernels::matmul(&a, &w).unwrap();
        for bi in 0..b {
            for i in 0..m {
                for j in 0..n {
                    let s: f64 = (0..k).map(|q| a.at(&[bi, i, q]) * w.at(&[bi, q, j])).sum();
                    assert!((got.at(&[bi, i, j]) - s).abs() < TOL);
                }
            }
        }
        let w2 = uniform(&mut r, &[k, n], -1.0, 1.0);
        let bias = uniform(&mut r, &[n], -1.0, 1.0);
        let got = kernels::linear(&a, &w2, Some(&bias)).unwrap();
        for bi in 0..b {
            for i in 0..m {
                for j in 0..n {
                    let s: f64 = bias.data()[j] + (0..k).map(|q| a.at(&[bi, i, q]) * w2.at(&[q, j])).sum::<f64>();
                    assert!((got.at(&[bi, i, j]) - s).abs() < TOL);
                }
            }
        }
    }
}

#[test]
fn softmax_rows_sum_to_one_and_match_exp_ratio() {
    let mut r = rng(5);
    let x = uniform(&mut r, &[2, 3, 4], -30.0, 30.0);
    for axis in 0..3 {
        let y = kernels::softmax(&x, axis).unwrap();
        let p = kernels::permute(&y, &move_last(axis)).unwrap();
        let xp = kernels::permute(&x, &move_last(axis)).unwrap();
        let d = x.shape()[axis];
        for (row, xrow) in p.data().chunks(d).zip(xp.data().chunks(d)) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < TOL);
            let z: f64 = xrow.iter().map(|v| (v - xrow[0]).exp()).sum();
            assert!((row[0] - 1.0 / z).abs() < TOL);
        }
    }
}

fn move_last(axis: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..3).filter(|&a| a != axis).collect();
    p.push(axis);
    p
}

#[test]
fn layer_norm_output_statistics() {
    let mut r = rng(8);
    let x = uniform(&mut r, &[3, 10], -5.0, 5.0);
    let (y, _, _) = kernels::layer_norm(&x, &Tensor::ones(&[10]), &Tensor::zeros(&[10]), 0.0).unwrap();
    for row in y.data().chunks(10) {
        let m = row.iter().sum::<f64>() / 10.0;
        let v = row.iter().map(|a| (a - m).powi(2)).sum::<f64>() / 10.0;
        assert!(m.abs() < TOL && (v - 1.0).abs() < 1e-9);
    }
}

#[test]
fn moving_average_matches_clamped_window_mean() {
    for seed in 0..20 {
        let mut r = rng(seed);
        let l = r.random_range(1..30);
        let w = 2 * r.random_range(0..15) + 1;
        let x = uniform(&mut r, &[2, l], -1.0, 1.0);
        let got = kernels::moving_average(&x, w).unwrap();
        let h = (w as isize - 1) / 2;
        for c in 0..2 {
            for t in 0..l as isize {
                let s: f64 = (t - h..=t + h).map(|i| x.at(&[c, i.clamp(0, l as isize - 1) as usize])).sum();
                assert!((got.at(&[c, t as usize]) - s / w as f64).abs() < TOL);
            }
        }
    }
    assert!(kernels::moving_average(&Tensor::zeros(&[1, 4]), 4).is_err());
}

#[test]
fn permute_and_inverse_permutation() {
    let x = Tensor::from_fn(&[2, 3, 4], |i| i as f64);
    let y = kernels::permute(&x, &[2, 0, 1]).unwrap();
    assert_eq!(y.shape(), &[4, 2, 3]);
    for a in 0..2 {
        for b in 0..3 {
            for c in 0..4 {
                assert_eq!(y.at(&[c, a, b]), x.at(&[a, b, c]));
            }
        }
    }
    let back = kernels::permute(&y, &kernels::inverse_permutation(&[2, 0, 1])).unwrap();
    assert_eq!(back, x);
}

#[test]
fn broadcasting_rules() {
    assert_eq!(kernels::broadcast_shape(&[2, 3, 4], &[3, 1]), Some(vec![2, 3, 4]));
    assert_eq!(kernels::broadcast_shape(&[4], &[2, 1]), Some(vec![2, 4]));
    assert_eq!(kernels::broadcast_shape(&[2, 3], &[4]), None);
    let a = Tensor::from_fn(&[2, 3], |i| i as f64);
    let b = Tensor::from_vec(vec![10.0, 20.0, 30.0]);
    let s = kernels::broadcast_binary(&a, &b, "add", |x, y| x + y).unwrap();
    assert_eq!(s.data(), &[10.0, 21.0, 32.0, 13.0, 24.0, 35.0]);
    let g = kernels::reduce_to_shape(&Tensor::ones(&[2, 3]), &[3]);
    assert_eq!(g.data(), &[2.0, 2.0, 2.0]);
}

#[test]
fn grouped_linear_indexes_the_assigned_head() {
    let mut r = rng(3);
    let (b, c, l, lp, k) = (2, 5, 6, 4, 3);
    let assign = [2, 0, 1, 0, 2];
    let x = uniform(&mut r, &[b, c, l], -1.0, 1.0);
    let w = uniform(&mut r, &[k, l, lp], -1.0, 1.0);
    let bias = uniform(&mut r, &[k, lp], -1.0, 1.0);
    let y = kernels::grouped_linear(&x, &w, &bias, &assign).unwrap();
    for bi in 0..b {
        for (ch, &a) in assign.iter().enumerate() {
            for j in 0..lp {
                let s: f64 = bias.at(&[a, j]) + (0..l).map(|i| x.at(&[bi, ch, i]) * w.at(&[a, i, j])).sum::<f64>();
                assert!((y.at(&[bi, ch, j]) - s).abs() < TOL);
            }
        }
    }
    assert!(kernels::grouped_linear(&x, &w, &bias, &[0, 0, 0, 0, 3]).is_err());
}
