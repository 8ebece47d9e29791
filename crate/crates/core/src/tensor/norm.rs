use super::graph::{Function, Graph, Var};
use super::shape::as_nchw;
use super::Tensor;
use crate::error::{Result, VinetError};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPSILON: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchNormMode {
    Train,
    Eval,
}

/// Per-channel running mean/variance, updated by exponential moving average.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats { mean: vec![0.0; channels], var: vec![1.0; channels] }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

struct BatchNormFn {
    nchw: [usize; 4],
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    mode: BatchNormMode,
}

impl Function for BatchNormFn {
    fn name(&self) -> &'static str {
        "batchnorm2d"
    }

    fn backward(&self, g: &Tensor, inputs: &[&Tensor], _: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let [n, c, h, w] = self.nchw;
        let hw = h * w;
        let m = (n * hw) as f64;
        let gamma = inputs[1].data();
        let gd = g.data();

        let mut sum_g = vec![0.0; c];
        let mut sum_gx = vec![0.0; c];
        for s in 0..n {
            for ch in 0..c {
                let off = (s * c + ch) * hw;
                for i in off..off + hw {
                    sum_g[ch] += gd[i];
                    sum_gx[ch] += gd[i] * self.xhat[i];
                }
            }
        }

        let dx = needs[0].then(|| {
            let mut dx = vec![0.0; gd.len()];
            for s in 0..n {
                for ch in 0..c {
                    let off = (s * c + ch) * hw;
                    let k = gamma[ch] * self.inv_std[ch];
                    for i in off..off + hw {
                        dx[i] = match self.mode {
                            BatchNormMode::Train => k / m * (m * gd[i] - sum_g[ch] - self.xhat[i] * sum_gx[ch]),
                            BatchNormMode::Eval => k * gd[i],
                        };
                    }
                }
            }
            Tensor::new(inputs[0].shape().to_vec(), dx).expect("input shape")
        });
        vec![dx, needs[1].then(|| Tensor::from_vec(sum_gx)), needs[2].then(|| Tensor::from_vec(sum_g))]
    }
}

impl Graph {
    /// Per-channel batch normalization over `N×C×H×W`.
    ///
    /// Train mode normalizes with the biased batch variance and folds the
    /// batch statistics into `stats` (the variance update uses the unbiased
    /// estimate). Eval mode normalizes with `stats` and leaves them alone.
    pub fn batchnorm2d(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats,
        mode: BatchNormMode,
    ) -> Result<Var> {
        let x = self.value(input);
        let nchw = as_nchw("batchnorm2d", x.shape())?;
        let [n, c, h, w] = nchw;
        let (gm, bt) = (self.value(gamma), self.value(beta));
        if gm.shape() != [c] || bt.shape() != [c] || stats.channels() != c {
            return Err(VinetError::contract(
                "batchnorm2d",
                format!("{c} channels but gamma {:?}, beta {:?}, stats {}", gm.shape(), bt.shape(), stats.channels()),
            ));
        }
        let hw = h * w;
        let m = (n * hw) as f64;
        let xd = x.data();

        let (mean, var) = match mode {
            BatchNormMode::Train => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for s in 0..n {
                    for ch in 0..c {
                        mean[ch] += xd[(s * c + ch) * hw..][..hw].iter().sum::<f64>();
                    }
                }
                mean.iter_mut().for_each(|v| *v /= m);
                for s in 0..n {
                    for ch in 0..c {
                        var[ch] += xd[(s * c + ch) * hw..][..hw].iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>();
                    }
                }
                var.iter_mut().for_each(|v| *v /= m);
                let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
                for ch in 0..c {
                    stats.mean[ch] = (1.0 - BN_MOMENTUM) * stats.mean[ch] + BN_MOMENTUM * mean[ch];
                    stats.var[ch] = (1.0 - BN_MOMENTUM) * stats.var[ch] + BN_MOMENTUM * var[ch] * unbias;
                }
                (mean, var)
            }
            BatchNormMode::Eval => (stats.mean.clone(), stats.var.clone()),
        };

        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
        let mut xhat = vec![0.0; xd.len()];
        let mut y = vec![0.0; xd.len()];
        let (gmd, btd) = (gm.data(), bt.data());
        for s in 0..n {
            for ch in 0..c {
                let off = (s * c + ch) * hw;
                for i in off..off + hw {
                    xhat[i] = (xd[i] - mean[ch]) * inv_std[ch];
                    y[i] = gmd[ch] * xhat[i] + btd[ch];
                }
            }
        }
        let out = Tensor::new(x.shape().to_vec(), y)?;
        Ok(self.apply(Box::new(BatchNormFn { nchw, xhat, inv_std, mode }), &[input, gamma, beta], out))
    }
}
