//! Optimized kernels against the direct references in `oracle`.

use rand::Rng;

use crate::oracle::{conv2d_direct, cross_entropy_direct, matvec, maxpool_direct, spearman_oracle};
use crate::seed::child_rng;
use crate::tensor::{Graph, Tensor};
use crate::train::evaluate_spearman;

pub const KERNEL_TOLERANCE: f64 = 1e-12;
pub const SPEARMAN_TOLERANCE: f64 = 1e-10;
const ORACLE_SEED: u64 = 0x6f72_636c;

/// Largest gap and number of cases for one comparison.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OracleGap {
    pub worst: f64,
    pub cases: usize,
}

impl OracleGap {
    fn record(&mut self, gap: f64) {
        self.worst = if gap.is_nan() || self.worst.is_nan() { f64::NAN } else { self.worst.max(gap) };
        self.cases += 1;
    }

    pub fn within(&self, tolerance: f64) -> bool {
        self.cases > 0 && self.worst <= tolerance
    }
}

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::NAN;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn random(shape: &[usize], r: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| r.gen_range(-1.0..1.0))
}

fn sample_of(t: &Tensor, n: usize) -> Tensor {
    let per: usize = t.shape()[1..].iter().product();
    Tensor::new(t.shape()[1..].to_vec(), t.data()[n * per..(n + 1) * per].to_vec()).expect("shape")
}

/// Grouped convolution of one `C×H×W` sample, one direct call per group.
fn grouped_direct(x: &Tensor, wt: &Tensor, bias: &[f64], groups: usize, stride: usize, pad: usize) -> Vec<f64> {
    let (cin, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (cout, k) = (wt.shape()[0], wt.shape()[2]);
    let (per_in, per_out) = (cin / groups, cout / groups);
    let (xs, ws) = (per_in * h * w, per_out * per_in * k * k);
    let mut out = Vec::new();
    for gi in 0..groups {
        let xi = Tensor::new(vec![per_in, h, w], x.data()[gi * xs..(gi + 1) * xs].to_vec()).expect("shape");
        let wi = Tensor::new(vec![per_out, per_in, k, k], wt.data()[gi * ws..(gi + 1) * ws].to_vec()).expect("shape");
        out.extend(conv2d_direct(&xi, &wi, Some(&bias[gi * per_out..(gi + 1) * per_out]), stride, pad).into_data());
    }
    out
}

/// Every combination of batch, channels, size, kernel, stride, padding and
/// groups in a small range, forward only.
pub fn conv_vs_direct() -> OracleGap {
    let mut gap = OracleGap::default();
    let r = &mut child_rng(ORACLE_SEED, &[1]);
    for n in [1, 3] {
        for (cin, groups) in [(1, 1), (2, 1), (3, 1), (4, 2), (3, 3)] {
            for cout_per in [1, 2, 5] {
                let cout = cout_per * groups;
                for h in 3..=7 {
                    for w in [3, 4, 7] {
                        for k in 1..=3 {
                            for stride in 1..=3 {
                                for pad in 0..=2 {
                                    if k > h + 2 * pad || k > w + 2 * pad || pad >= k {
                                        continue;
                                    }
                                    let x = random(&[n, cin, h, w], r);
                                    let wt = random(&[cout, cin / groups, k, k], r);
                                    let b = random(&[cout], r);
                                    let mut g = Graph::no_grad();
                                    let (xv, wv, bv) = (g.input(x.clone()), g.input(wt.clone()), g.input(b.clone()));
                                    let y = match g.conv2d_grouped(xv, wv, Some(bv), stride, pad, groups) {
                                        Ok(y) => g.value(y).clone(),
                                        Err(_) => {
                                            gap.record(f64::NAN);
                                            continue;
                                        }
                                    };
                                    let expected: Vec<f64> = (0..n)
                                        .flat_map(|i| {
                                            grouped_direct(&sample_of(&x, i), &wt, b.data(), groups, stride, pad)
                                        })
                                        .collect();
                                    gap.record(max_gap(y.data(), &expected));
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    gap
}

/// Gradients of `Σ conv(x) ⊙ p` where `p` at flat output position `i` is a
/// fixed pattern of `offset + i`.
fn conv_grads(x: Tensor, wt: &Tensor, b: &Tensor, stride: usize, pad: usize, offset: usize) -> [Tensor; 3] {
    let mut g = Graph::new();
    let (xv, wv, bv) = (g.leaf(x), g.leaf(wt.clone()), g.leaf(b.clone()));
    let y = g.conv2d(xv, wv, Some(bv), stride, pad).expect("valid conv");
    let pattern = Tensor::from_fn(g.shape(y), |i| (((offset + i) * 7919) % 13) as f64 / 13.0 - 0.5);
    let p = g.input(pattern);
    let prod = g.mul(y, p).expect("same shape");
    let loss = g.sum(prod);
    let grads = g.backward(loss).expect("scalar");
    [xv, wv, bv].map(|v| grads.wrt(v).expect("leaf grad").clone())
}

/// Gradients of a batch of 11 against per-sample sums, covering the chunked
/// reduction of the batched backward pass.
pub fn conv_batch_gradient() -> OracleGap {
    let mut gap = OracleGap::default();
    let r = &mut child_rng(ORACLE_SEED, &[2]);
    for (cin, cout, stride, pad) in [(3, 2, 1, 1), (2, 7, 2, 0), (4, 6, 1, 2)] {
        let x = random(&[11, cin, 6, 6], r);
        let wt = random(&[cout, cin, 3, 3], r);
        let b = random(&[cout], r);
        let batched = conv_grads(x.clone(), &wt, &b, stride, pad, 0);
        let side = (6 + 2 * pad - 3) / stride + 1;
        let per_out = cout * side * side;
        let mut dw = vec![0.0; wt.numel()];
        let mut db = vec![0.0; cout];
        let mut dx = Vec::new();
        for s in 0..11 {
            let single = sample_of(&x, s).reshape(&[1, cin, 6, 6]).expect("shape");
            let [gx, gw, gb] = conv_grads(single, &wt, &b, stride, pad, s * per_out);
            dx.extend_from_slice(gx.data());
            dw.iter_mut().zip(gw.data()).for_each(|(a, v)| *a += v);
            db.iter_mut().zip(gb.data()).for_each(|(a, v)| *a += v);
        }
        gap.record(max_gap(batched[0].data(), &dx));
        gap.record(max_gap(batched[1].data(), &dw));
        gap.record(max_gap(batched[2].data(), &db));
    }
    gap
}

pub fn maxpool_vs_direct() -> OracleGap {
    let mut gap = OracleGap::default();
    let r = &mut child_rng(ORACLE_SEED, &[3]);
    for n in [1, 2] {
        for c in 1..=3 {
            for h in 2..=8 {
                for w in 2..=8 {
                    for window in 1..=3 {
                        for stride in 1..=3 {
                            if window > h || window > w {
                                continue;
                            }
                            let x = random(&[n, c, h, w], r);
                            let mut g = Graph::no_grad();
                            let xv = g.input(x.clone());
                            let y = match g.maxpool2d(xv, window, stride) {
                                Ok(y) => g.value(y).clone(),
                                Err(_) => {
                                    gap.record(f64::NAN);
                                    continue;
                                }
                            };
                            let expected: Vec<f64> = (0..n)
                                .flat_map(|s| maxpool_direct(&sample_of(&x, s), window, stride).into_data())
                                .collect();
                            gap.record(max_gap(y.data(), &expected));
                        }
                    }
                }
            }
        }
    }
    gap
}

pub fn linear_vs_direct() -> OracleGap {
    let mut gap = OracleGap::default();
    let r = &mut child_rng(ORACLE_SEED, &[4]);
    for batch in 1..=4 {
        for n_in in 1..=7 {
            for n_out in 1..=7 {
                let x = random(&[batch, n_in], r);
                let wt = random(&[n_out, n_in], r);
                let b = random(&[n_out], r);
                let mut g = Graph::no_grad();
                let (xv, wv, bv) = (g.input(x.clone()), g.input(wt.clone()), g.input(b.clone()));
                let y = g.linear(xv, wv, bv).map(|y| g.value(y).clone());
                let expected: Vec<f64> = x.data().chunks(n_in).flat_map(|row| matvec(&wt, row, b.data())).collect();
                gap.record(y.map_or(f64::NAN, |y| max_gap(y.data(), &expected)));
            }
        }
    }
    gap
}

/// Random vectors over a handful of distinct values, so ties are common.
pub fn spearman_vs_oracle(trials: usize) -> OracleGap {
    let mut gap = OracleGap::default();
    let r = &mut child_rng(ORACLE_SEED, &[5]);
    let draw = |n: usize, r: &mut rand_chacha::ChaCha8Rng| loop {
        let levels = r.gen_range(2..9);
        let v: Vec<f64> = (0..n).map(|_| r.gen_range(0..levels) as f64 * 0.5).collect();
        if v.windows(2).any(|p| p[0] != p[1]) {
            return v;
        }
    };
    for _ in 0..trials {
        let n = r.gen_range(2..80);
        let (a, b) = (draw(n, r), draw(n, r));
        let got = evaluate_spearman(&a, &b).unwrap_or(f64::NAN);
        gap.record((got - spearman_oracle(&a, &b)).abs());
    }
    gap
}

/// Uniform logits give `ln(S+1)`; random logits match the direct formula.
pub fn cross_entropy_points() -> OracleGap {
    let mut gap = OracleGap::default();
    let r = &mut child_rng(ORACLE_SEED, &[6]);
    for classes in 2..=13 {
        for level in [0.0, -3.5, 7.25] {
            let labels: Vec<usize> = (0..3).map(|i| i % classes).collect();
            let mut g = Graph::no_grad();
            let logits = g.input(Tensor::full(&[3, classes], level));
            let loss = g.softmax_cross_entropy(logits, &labels).map(|l| g.value(l).item());
            gap.record(loss.map_or(f64::NAN, |l| (l - (classes as f64).ln()).abs()));
        }
        let logits = random(&[4, classes], r).map(|v| 4.0 * v);
        let labels: Vec<usize> = (0..4).map(|_| r.gen_range(0..classes)).collect();
        let direct =
            logits.data().chunks(classes).zip(&labels).map(|(row, &l)| cross_entropy_direct(row, l)).sum::<f64>() / 4.0;
        let mut g = Graph::no_grad();
        let lv = g.input(logits);
        let loss = g.softmax_cross_entropy(lv, &labels).map(|l| g.value(l).item());
        gap.record(loss.map_or(f64::NAN, |l| (l - direct).abs()));
    }
    gap
}
