//! Exactness of the affine grid and bilinear sampler.

use rand::Rng;

use crate::oracle::bilinear_direct;
use crate::seed::child_rng;
use crate::tensor::{Graph, Tensor};
use crate::vtdm::{affine_grid, bilinear_sample, AffineParams};

pub const STN_TOLERANCE: f64 = 1e-12;
const STN_SEED: u64 = 0x73_746e;

/// Largest deviation found by each exactness property over `trials` random cases.
#[derive(Clone, Debug, PartialEq)]
pub struct StnReport {
    pub identity: f64,
    pub linearity: f64,
    pub composition: f64,
    /// Largest magnitude sampled at points more than one pixel outside the raster.
    pub outside: f64,
    /// Largest gap to the direct interpolation formula.
    pub versus_direct: f64,
    /// Largest gradient entry for an image seen only from outside the raster.
    pub outside_grad: f64,
    pub trials: usize,
}

impl StnReport {
    pub fn identity_ok(&self) -> bool {
        self.identity <= STN_TOLERANCE
    }

    pub fn linearity_ok(&self) -> bool {
        self.linearity <= STN_TOLERANCE
    }

    pub fn composition_ok(&self) -> bool {
        self.composition <= STN_TOLERANCE
    }

    pub fn padding_ok(&self) -> bool {
        self.outside == 0.0 && self.outside_grad == 0.0 && self.versus_direct <= STN_TOLERANCE
    }
}

fn random_theta(r: &mut impl Rng) -> AffineParams {
    AffineParams([r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0)])
}

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn stn_exactness(trials: usize) -> StnReport {
    let mut report = StnReport {
        identity: 0.0,
        linearity: 0.0,
        composition: 0.0,
        outside: 0.0,
        versus_direct: 0.0,
        outside_grad: 0.0,
        trials,
    };
    for trial in 0..trials as u64 {
        let r = &mut child_rng(STN_SEED, &[trial]);
        let (h, w) = (r.gen_range(1..12), r.gen_range(1..12));
        let image = Tensor::from_fn(&[h, w], |_| r.gen_range(-1.0..1.0));
        let other = Tensor::from_fn(&[h, w], |_| r.gen_range(-1.0..1.0));

        let same = bilinear_sample(&image, &affine_grid(&AffineParams::IDENTITY, h, w).expect("grid")).expect("sample");
        report.identity = report.identity.max(max_gap(same.data(), image.data()));

        let theta = random_theta(r);
        let (oh, ow) = (r.gen_range(1..10), r.gen_range(1..10));
        let grid = affine_grid(&theta, oh, ow).expect("grid");
        let (a, b) = (r.gen_range(-3.0..3.0), r.gen_range(-3.0..3.0));
        let mix = Tensor::new(vec![h, w], image.data().iter().zip(other.data()).map(|(p, q)| a * p + b * q).collect())
            .expect("shape");
        let lhs = bilinear_sample(&mix, &grid).expect("sample");
        let (sp, sq) =
            (bilinear_sample(&image, &grid).expect("sample"), bilinear_sample(&other, &grid).expect("sample"));
        let rhs: Vec<f64> = sp.data().iter().zip(sq.data()).map(|(p, q)| a * p + b * q).collect();
        report.linearity = report.linearity.max(max_gap(lhs.data(), &rhs));

        let outer = random_theta(r);
        let composed = affine_grid(&outer.compose(&theta), oh, ow).expect("grid");
        for (c, s) in composed.points.iter().zip(&grid.points) {
            let (x, y) = outer.apply(s.0, s.1);
            report.composition = report.composition.max((c.0 - x).abs()).max((c.1 - y).abs());
        }

        for (k, &(x, y)) in grid.points.iter().enumerate() {
            let px = (x + 1.0) / 2.0 * (w - 1) as f64;
            let py = (y + 1.0) / 2.0 * (h - 1) as f64;
            let direct = bilinear_direct(image.data(), h, w, px, py);
            report.versus_direct = report.versus_direct.max((direct - sp.data()[k]).abs());
            if px <= -1.0 || py <= -1.0 || px >= w as f64 || py >= h as f64 {
                report.outside = report.outside.max(sp.data()[k].abs());
            }
        }
    }

    // a 40× zoom puts every point of a 4×4 grid beyond the border
    let r = &mut child_rng(STN_SEED, &[u64::MAX]);
    let mut g = Graph::new();
    let img = g.leaf(Tensor::from_fn(&[1, 1, 5, 5], |_| r.gen_range(0.5..1.0)));
    let theta = g.leaf(Tensor::from_vec(vec![40.0, 0.0, 0.0, 40.0]).reshape(&[1, 4]).expect("shape"));
    let grid = g.affine_grid(theta, 4, 4).expect("grid");
    let out = g.bilinear_sample(img, grid).expect("sample");
    report.outside = report.outside.max(g.value(out).max_abs());
    let loss = g.sum(out);
    let grads = g.backward(loss).expect("scalar loss");
    for v in [img, theta] {
        report.outside_grad = report.outside_grad.max(grads.wrt(v).map_or(0.0, Tensor::max_abs));
    }
    report
}
