//! Reference implementations used to verify the optimized paths.
//!
//! Everything here is written as the most direct loop over the definition
//! and shares no code with the kernels it checks. The `check` command and
//! the test suites both use these.

use crate::tensor::Tensor;

/// Direct quadruple-loop cross-correlation of a `C×H×W` input.
pub fn conv2d_direct(input: &Tensor, weight: &Tensor, bias: Option<&[f64]>, stride: usize, pad: usize) -> Tensor {
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (co, k) = (weight.shape()[0], weight.shape()[2]);
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    let x = input.data();
    let wt = weight.data();
    let mut out = vec![0.0; co * ho * wo];
    for o in 0..co {
        for i in 0..ho {
            for j in 0..wo {
                let mut acc = bias.map_or(0.0, |b| b[o]);
                for ch in 0..c {
                    for a in 0..k {
                        for b in 0..k {
                            let r = (i * stride + a) as isize - pad as isize;
                            let q = (j * stride + b) as isize - pad as isize;
                            if r >= 0 && q >= 0 && (r as usize) < h && (q as usize) < w {
                                acc += x[(ch * h + r as usize) * w + q as usize] * wt[((o * c + ch) * k + a) * k + b];
                            }
                        }
                    }
                }
                out[(o * ho + i) * wo + j] = acc;
            }
        }
    }
    Tensor::new(vec![co, ho, wo], out).expect("oracle shape")
}

/// Exhaustive window scan.
pub fn maxpool_direct(input: &Tensor, window: usize, stride: usize) -> Tensor {
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let ho = (h - window) / stride + 1;
    let wo = (w - window) / stride + 1;
    let mut out = Vec::new();
    for ch in 0..c {
        for i in 0..ho {
            for j in 0..wo {
                let mut m = f64::NEG_INFINITY;
                for a in 0..window {
                    for b in 0..window {
                        m = m.max(input.data()[(ch * h + i * stride + a) * w + j * stride + b]);
                    }
                }
                out.push(m);
            }
        }
    }
    Tensor::new(vec![c, ho, wo], out).expect("oracle shape")
}

/// Row-by-row dot products.
pub fn matvec(weight: &Tensor, x: &[f64], bias: &[f64]) -> Vec<f64> {
    let n_in = weight.shape()[1];
    weight
        .data()
        .chunks(n_in)
        .zip(bias)
        .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
        .collect()
}

/// Cross-entropy straight from its definition, without max subtraction.
pub fn cross_entropy_direct(logits: &[f64], label: usize) -> f64 {
    let z: f64 = logits.iter().map(|v| v.exp()).sum();
    -(logits[label].exp() / z).ln()
}

/// Average ranks (1-based); tied values share the mean of their positions.
/// Quadratic on purpose: rank = #smaller + (#equal + 1) / 2.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .map(|&v| {
            let less = values.iter().filter(|&&u| u < v).count() as f64;
            let equal = values.iter().filter(|&&u| u == v).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

pub fn spearman_oracle(a: &[f64], b: &[f64]) -> f64 {
    pearson(&average_ranks(a), &average_ranks(b))
}

/// Bilinear interpolation of a single-channel `H×W` image at pixel
/// coordinates `(px, py)`, reading zero outside the raster.
pub fn bilinear_direct(img: &[f64], h: usize, w: usize, px: f64, py: f64) -> f64 {
    let pixel = |r: i64, c: i64| {
        if r < 0 || c < 0 || r >= h as i64 || c >= w as i64 {
            0.0
        } else {
            img[r as usize * w + c as usize]
        }
    };
    let (x0, y0) = (px.floor(), py.floor());
    let (fx, fy) = (px - x0, py - y0);
    let (c0, r0) = (x0 as i64, y0 as i64);
    (1.0 - fx) * (1.0 - fy) * pixel(r0, c0)
        + fx * (1.0 - fy) * pixel(r0, c0 + 1)
        + (1.0 - fx) * fy * pixel(r0 + 1, c0)
        + fx * fy * pixel(r0 + 1, c0 + 1)
}

/// Central finite differences of a scalar function at `x`.
pub fn numeric_gradient(x: &Tensor, h: f64, mut f: impl FnMut(&Tensor) -> f64) -> Tensor {
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// Worst `|analytic - numeric| / max(1, |numeric|)` over all entries.
pub fn max_relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    analytic.data().iter().zip(numeric.data()).map(|(a, n)| (a - n).abs() / n.abs().max(1.0)).fold(0.0, f64::max)
}
