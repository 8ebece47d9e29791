//! Affine sampling grid and differentiable bilinear sampler.
//!
//! Coordinates are normalized to `[-1, 1]` with corners aligned: `-1` is the
//! centre of pixel 0 and `+1` the centre of pixel `W-1` (resp. `H-1`). `x`
//! runs along width, `y` along height. Neighbours outside the raster read as
//! zero, so a point well outside `[-1, 1]²` samples 0.

use std::hash::Hasher;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VinetError};
use crate::tensor::{Function, Graph, Tensor, Var};

/// The 2×2 matrix `[[a11, a12], [a21, a22]]` stored row-major. No translation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineParams(pub [f64; 4]);

impl AffineParams {
    pub const IDENTITY: AffineParams = AffineParams([1.0, 0.0, 0.0, 1.0]);

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let [a, b, c, d] = self.0;
        (a * x + b * y, c * x + d * y)
    }

    /// Matrix product `self · other`.
    pub fn compose(&self, other: &AffineParams) -> AffineParams {
        let [a, b, c, d] = self.0;
        let [e, f, g, h] = other.0;
        AffineParams([a * e + b * g, a * f + b * h, c * e + d * g, c * f + d * h])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Normalized coordinate of index `i` on an axis of `len` samples.
pub fn base_coord(i: usize, len: usize) -> f64 {
    if len == 1 {
        0.0
    } else {
        -1.0 + 2.0 * i as f64 / (len - 1) as f64
    }
}

/// `H'×W'` source points, stored as interleaved `(x, y)` pairs row by row.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingGrid {
    pub height: usize,
    pub width: usize,
    pub points: Vec<(f64, f64)>,
}

impl SamplingGrid {
    /// The regular lattice `G` over `[-1, 1]²`.
    pub fn base(height: usize, width: usize) -> Self {
        let points =
            (0..height).flat_map(|i| (0..width).map(move |j| (base_coord(j, width), base_coord(i, height)))).collect();
        SamplingGrid { height, width, points }
    }

    pub fn to_tensor(&self) -> Tensor {
        let data = self.points.iter().flat_map(|&(x, y)| [x, y]).collect();
        Tensor::new(vec![1, self.height, self.width, 2], data).expect("grid shape")
    }
}

/// Every base-grid point mapped through `theta`.
pub fn affine_grid(theta: &AffineParams, height: usize, width: usize) -> Result<SamplingGrid> {
    if !theta.is_finite() {
        return Err(VinetError::contract("affine_grid", format!("non-finite theta {:?}", theta.0)));
    }
    let mut grid = SamplingGrid::base(height, width);
    grid.points.iter_mut().for_each(|p| *p = theta.apply(p.0, p.1));
    Ok(grid)
}

/// Samples one `H×W` plane at `grid`, returning `H'×W'` values.
pub fn bilinear_sample(image: &Tensor, grid: &SamplingGrid) -> Result<Tensor> {
    let &[h, w] = image.shape() else {
        return Err(VinetError::contract("bilinear_sample", format!("expected H×W, got {:?}", image.shape())));
    };
    let data = grid.points.iter().map(|&(x, y)| sample_point(image.data(), h, w, x, y).value).collect();
    Tensor::new(vec![grid.height, grid.width], data)
}

struct Corners {
    value: f64,
    /// Flat index and weight of the up-to-four in-range neighbours.
    taps: [(usize, f64); 4],
    ntaps: usize,
    /// d value / d px and d value / d py.
    dpx: f64,
    dpy: f64,
}

fn sample_point(img: &[f64], h: usize, w: usize, x: f64, y: f64) -> Corners {
    let px = (x + 1.0) * 0.5 * (w - 1) as f64;
    let py = (y + 1.0) * 0.5 * (h - 1) as f64;
    let (x0, y0) = (px.floor(), py.floor());
    let (fx, fy) = (px - x0, py - y0);
    let (c0, r0) = (x0 as i64, y0 as i64);
    let mut out = Corners { value: 0.0, taps: [(0, 0.0); 4], ntaps: 0, dpx: 0.0, dpy: 0.0 };
    if !px.is_finite() || !py.is_finite() {
        return out;
    }
    for (dr, dc) in [(0i64, 0i64), (0, 1), (1, 0), (1, 1)] {
        let (r, c) = (r0 + dr, c0 + dc);
        if r < 0 || c < 0 || r >= h as i64 || c >= w as i64 {
            continue;
        }
        let idx = r as usize * w + c as usize;
        let v = img[idx];
        let wx = if dc == 0 { 1.0 - fx } else { fx };
        let wy = if dr == 0 { 1.0 - fy } else { fy };
        out.value += wx * wy * v;
        out.dpx += if dc == 0 { -wy } else { wy } * v;
        out.dpy += if dr == 0 { -wx } else { wx } * v;
        out.taps[out.ntaps] = (idx, wx * wy);
        out.ntaps += 1;
    }
    out
}

struct AffineGridFn {
    height: usize,
    width: usize,
}

impl Function for AffineGridFn {
    fn name(&self) -> &'static str {
        "affine_grid"
    }

    fn backward(&self, g: &Tensor, inputs: &[&Tensor], _: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let n = inputs[0].shape()[0];
        let hw = self.height * self.width;
        let mut dtheta = vec![0.0; n * 4];
        for s in 0..n {
            let gs = &g.data()[s * hw * 2..(s + 1) * hw * 2];
            let dt = &mut dtheta[s * 4..s * 4 + 4];
            for i in 0..self.height {
                let yg = base_coord(i, self.height);
                for j in 0..self.width {
                    let xg = base_coord(j, self.width);
                    let k = (i * self.width + j) * 2;
                    let (gx, gy) = (gs[k], gs[k + 1]);
                    dt[0] += gx * xg;
                    dt[1] += gx * yg;
                    dt[2] += gy * xg;
                    dt[3] += gy * yg;
                }
            }
        }
        vec![Some(Tensor::new(inputs[0].shape().to_vec(), dtheta).expect("theta shape"))]
    }
}

struct BilinearFn {
    nchw: [usize; 4],
    out_hw: (usize, usize),
}

impl Function for BilinearFn {
    fn name(&self) -> &'static str {
        "bilinear_sample"
    }

    fn backward(&self, g: &Tensor, inputs: &[&Tensor], _: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let [n, c, h, w] = self.nchw;
        let (ho, wo) = self.out_hw;
        let (img, grid) = (inputs[0].data(), inputs[1].data());
        let mut dimg = needs[0].then(|| vec![0.0; img.len()]);
        let mut dgrid = needs[1].then(|| vec![0.0; grid.len()]);
        let sx = 0.5 * (w - 1) as f64;
        let sy = 0.5 * (h - 1) as f64;
        for s in 0..n {
            for p in 0..ho * wo {
                let (x, y) = (grid[(s * ho * wo + p) * 2], grid[(s * ho * wo + p) * 2 + 1]);
                let (mut gx, mut gy) = (0.0, 0.0);
                for ch in 0..c {
                    let plane_off = (s * c + ch) * h * w;
                    let gv = g.data()[(s * c + ch) * ho * wo + p];
                    let pt = sample_point(&img[plane_off..plane_off + h * w], h, w, x, y);
                    if let Some(d) = dimg.as_mut() {
                        for &(idx, wt) in &pt.taps[..pt.ntaps] {
                            d[plane_off + idx] += gv * wt;
                        }
                    }
                    gx += gv * pt.dpx * sx;
                    gy += gv * pt.dpy * sy;
                }
                if let Some(d) = dgrid.as_mut() {
                    d[(s * ho * wo + p) * 2] = gx;
                    d[(s * ho * wo + p) * 2 + 1] = gy;
                }
            }
        }
        vec![
            dimg.map(|d| Tensor::new(inputs[0].shape().to_vec(), d).expect("image shape")),
            dgrid.map(|d| Tensor::new(inputs[1].shape().to_vec(), d).expect("grid shape")),
        ]
    }

    fn branch_key(&self, inputs: &[&Tensor], state: &mut dyn Hasher) {
        let [_, _, h, w] = self.nchw;
        for xy in inputs[1].data().chunks(2) {
            let px = (xy[0] + 1.0) * 0.5 * (w - 1) as f64;
            let py = (xy[1] + 1.0) * 0.5 * (h - 1) as f64;
            state.write_i64(px.floor() as i64);
            state.write_i64(py.floor() as i64);
        }
    }
}

impl Graph {
    /// `theta: [N, 4]` -> grid `[N, H', W', 2]`.
    pub fn affine_grid(&mut self, theta: Var, height: usize, width: usize) -> Result<Var> {
        let th = self.value(theta);
        let &[n, 4] = th.shape() else {
            return Err(VinetError::contract("affine_grid", format!("theta must be [N, 4], got {:?}", th.shape())));
        };
        if !th.all_finite() {
            return Err(VinetError::contract("affine_grid", "non-finite theta"));
        }
        let base = SamplingGrid::base(height, width);
        let mut data = Vec::with_capacity(n * height * width * 2);
        for t in th.data().chunks(4) {
            let m = AffineParams([t[0], t[1], t[2], t[3]]);
            for &(x, y) in &base.points {
                let (a, b) = m.apply(x, y);
                data.push(a);
                data.push(b);
            }
        }
        let out = Tensor::new(vec![n, height, width, 2], data)?;
        Ok(self.apply(Box::new(AffineGridFn { height, width }), &[theta], out))
    }

    /// `image: [N, C, H, W]`, `grid: [N, H', W', 2]` -> `[N, C, H', W']`.
    pub fn bilinear_sample(&mut self, image: Var, grid: Var) -> Result<Var> {
        let (img, gr) = (self.value(image), self.value(grid));
        let &[n, c, h, w] = img.shape() else {
            return Err(VinetError::contract("bilinear_sample", format!("image must be 4-D, got {:?}", img.shape())));
        };
        let &[gn, ho, wo, 2] = gr.shape() else {
            return Err(VinetError::contract(
                "bilinear_sample",
                format!("grid must be [N, H', W', 2], got {:?}", gr.shape()),
            ));
        };
        if gn != n {
            return Err(VinetError::contract("bilinear_sample", format!("grid batch {gn} vs image batch {n}")));
        }
        let mut out = vec![0.0; n * c * ho * wo];
        for s in 0..n {
            for p in 0..ho * wo {
                let (x, y) = (gr.data()[(s * ho * wo + p) * 2], gr.data()[(s * ho * wo + p) * 2 + 1]);
                for ch in 0..c {
                    let off = (s * c + ch) * h * w;
                    out[(s * c + ch) * ho * wo + p] = sample_point(&img.data()[off..off + h * w], h, w, x, y).value;
                }
            }
        }
        let out = Tensor::new(vec![n, c, ho, wo], out)?;
        Ok(self.apply(Box::new(BilinearFn { nchw: [n, c, h, w], out_hw: (ho, wo) }), &[image, grid], out))
    }
}
