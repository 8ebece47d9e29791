//! 2D cross-correlation (no kernel flip) with zero padding and optional
//! channel groups, lowered to im2col + GEMM per sample and group.

use super::graph::{Function, Graph, Var};
use super::shape::{as_nchw, gemm, gemm_strided, window_out};
use rayon::prelude::*;

use super::Tensor;
use crate::error::{Result, VinetError};

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    n: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    pad: usize,
    groups: usize,
    h_out: usize,
    w_out: usize,
}

impl ConvGeom {
    fn cg(&self) -> usize {
        self.c_in / self.groups
    }

    fn og(&self) -> usize {
        self.c_out / self.groups
    }

    fn col_rows(&self) -> usize {
        self.cg() * self.k * self.k
    }

    fn col_cols(&self) -> usize {
        self.h_out * self.w_out
    }
}

fn geometry(
    x: &[usize],
    weight: &[usize],
    bias: Option<&[usize]>,
    stride: usize,
    pad: usize,
    groups: usize,
) -> Result<ConvGeom> {
    let [n, c_in, h, w] = as_nchw("conv2d", x)?;
    let &[c_out, cw, kh, kw] = weight else {
        return Err(VinetError::contract("conv2d", format!("weight must be 4-D, got {weight:?}")));
    };
    if stride == 0 || groups == 0 {
        return Err(VinetError::contract("conv2d", "stride and groups must be positive"));
    }
    if kh != kw {
        return Err(VinetError::contract("conv2d", format!("kernel must be square, got {kh}×{kw}")));
    }
    if c_in % groups != 0 || c_out % groups != 0 {
        return Err(VinetError::contract(
            "conv2d",
            format!("channels in={c_in} out={c_out} not divisible by groups={groups}"),
        ));
    }
    if cw * groups != c_in {
        return Err(VinetError::contract(
            "conv2d",
            format!("weight expects {} input channels, input has {c_in}", cw * groups),
        ));
    }
    if kh > h + 2 * pad || kw > w + 2 * pad {
        return Err(VinetError::contract(
            "conv2d",
            format!("kernel {kh}×{kw} larger than padded input {}×{}", h + 2 * pad, w + 2 * pad),
        ));
    }
    if let Some(b) = bias {
        if b != [c_out] {
            return Err(VinetError::contract("conv2d", format!("bias shape {b:?}, expected [{c_out}]")));
        }
    }
    Ok(ConvGeom {
        n,
        c_in,
        h,
        w,
        c_out,
        k: kh,
        stride,
        pad,
        groups,
        h_out: window_out(h, kh, stride, pad),
        w_out: window_out(w, kw, stride, pad),
    })
}

/// Unfolds channels `c0..c0+cg` of one sample into `col`
/// (rows: channel-major then kernel row then kernel col).
fn im2col(g: &ConvGeom, x: &[f64], c0: usize, col: &mut [f64]) {
    let (k, s, p) = (g.k, g.stride as isize, g.pad as isize);
    let ncols = g.col_cols();
    for c in 0..g.cg() {
        let plane = &x[(c0 + c) * g.h * g.w..(c0 + c + 1) * g.h * g.w];
        for ki in 0..k {
            for kj in 0..k {
                let row = &mut col[((c * k + ki) * k + kj) * ncols..][..ncols];
                for oh in 0..g.h_out {
                    let ih = oh as isize * s + ki as isize - p;
                    let dst = &mut row[oh * g.w_out..(oh + 1) * g.w_out];
                    if ih < 0 || ih >= g.h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[ih as usize * g.w..(ih as usize + 1) * g.w];
                    for (ow, d) in dst.iter_mut().enumerate() {
                        let iw = ow as isize * s + kj as isize - p;
                        *d = if iw < 0 || iw >= g.w as isize { 0.0 } else { src[iw as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds `col` back into `dx`.
fn col2im(g: &ConvGeom, col: &[f64], c0: usize, dx: &mut [f64]) {
    let (k, s, p) = (g.k, g.stride as isize, g.pad as isize);
    let ncols = g.col_cols();
    for c in 0..g.cg() {
        let plane = &mut dx[(c0 + c) * g.h * g.w..(c0 + c + 1) * g.h * g.w];
        for ki in 0..k {
            for kj in 0..k {
                let row = &col[((c * k + ki) * k + kj) * ncols..][..ncols];
                for oh in 0..g.h_out {
                    let ih = oh as isize * s + ki as isize - p;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[ih as usize * g.w..(ih as usize + 1) * g.w];
                    for (ow, v) in row[oh * g.w_out..(oh + 1) * g.w_out].iter().enumerate() {
                        let iw = ow as isize * s + kj as isize - p;
                        if iw >= 0 && iw < g.w as isize {
                            dst[iw as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Groups with at most this many output channels at stride 1 skip im2col and
/// stream rows directly; GEMM gains nothing there.
const DIRECT_MAX_OUT: usize = 4;

fn use_direct(g: &ConvGeom) -> bool {
    g.stride == 1 && g.og() <= DIRECT_MAX_OUT
}

/// Valid output-column range for kernel column `kj` at stride 1, and the
/// input column of its first element.
fn col_span(g: &ConvGeom, kj: usize) -> (usize, usize, usize) {
    let lo = g.pad.saturating_sub(kj);
    let hi = (g.w + g.pad).saturating_sub(kj).min(g.w_out);
    (lo, hi.max(lo), lo + kj - g.pad)
}

fn direct_forward(g: &ConvGeom, xn: &[f64], w: &[f64], out_n: &mut [f64]) {
    let (k, cg, og) = (g.k, g.cg(), g.og());
    for o in 0..g.c_out {
        let grp = o / og;
        let dst = &mut out_n[o * g.h_out * g.w_out..(o + 1) * g.h_out * g.w_out];
        for c in 0..cg {
            let plane = &xn[(grp * cg + c) * g.h * g.w..][..g.h * g.w];
            for ki in 0..k {
                for oh in 0..g.h_out {
                    let ih = (oh + ki) as isize - g.pad as isize;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    let src = &plane[ih as usize * g.w..][..g.w];
                    let row = &mut dst[oh * g.w_out..][..g.w_out];
                    for kj in 0..k {
                        let wv = w[((o * cg + c) * k + ki) * k + kj];
                        let (lo, hi, i0) = col_span(g, kj);
                        for (d, s) in row[lo..hi].iter_mut().zip(&src[i0..i0 + hi - lo]) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
}

fn direct_backward(
    g: &ConvGeom,
    xn: &[f64],
    w: &[f64],
    dout_n: &[f64],
    mut dx_n: Option<&mut [f64]>,
    mut dw: Option<&mut [f64]>,
) {
    let (k, cg, og) = (g.k, g.cg(), g.og());
    for o in 0..g.c_out {
        let grp = o / og;
        let gplane = &dout_n[o * g.h_out * g.w_out..][..g.h_out * g.w_out];
        for c in 0..cg {
            let off = (grp * cg + c) * g.h * g.w;
            for ki in 0..k {
                for oh in 0..g.h_out {
                    let ih = (oh + ki) as isize - g.pad as isize;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    let grow = &gplane[oh * g.w_out..][..g.w_out];
                    let rbase = off + ih as usize * g.w;
                    for kj in 0..k {
                        let widx = ((o * cg + c) * k + ki) * k + kj;
                        let (lo, hi, i0) = col_span(g, kj);
                        if let Some(dw) = dw.as_deref_mut() {
                            let src = &xn[rbase + i0..rbase + i0 + hi - lo];
                            dw[widx] += grow[lo..hi].iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                        }
                        if let Some(dx) = dx_n.as_deref_mut() {
                            let wv = w[widx];
                            for (d, gv) in dx[rbase + i0..rbase + i0 + hi - lo].iter_mut().zip(&grow[lo..hi]) {
                                *d += wv * gv;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Samples per weight-gradient partial sum. The partition is fixed, so the
/// reduction order and therefore the result do not depend on thread count.
const GRAD_CHUNK: usize = 8;

fn forward_sample(g: &ConvGeom, xn: &[f64], w: &[f64], b: Option<&[f64]>, out_n: &mut [f64], col: &mut [f64]) {
    let (rows, cols, og) = (g.col_rows(), g.col_cols(), g.og());
    if use_direct(g) {
        direct_forward(g, xn, w, out_n);
    } else {
        for grp in 0..g.groups {
            im2col(g, xn, grp * g.cg(), col);
            let wg = &w[grp * og * rows..(grp + 1) * og * rows];
            // out_gᵀ[p, o] = colᵀ[p, :] · W_gᵀ[:, o], written through strides
            let (r, c) = (rows as isize, cols as isize);
            gemm_strided(
                cols,
                rows,
                og,
                col,
                (1, c),
                wg,
                (1, r),
                0.0,
                &mut out_n[grp * og * cols..(grp + 1) * og * cols],
                (1, c),
            );
        }
    }
    if let Some(b) = b {
        for (plane, bv) in out_n.chunks_mut(cols).zip(b) {
            plane.iter_mut().for_each(|v| *v += bv);
        }
    }
}

fn forward(g: &ConvGeom, x: &[f64], w: &[f64], b: Option<&[f64]>) -> Vec<f64> {
    let cols = g.col_cols();
    let scratch = if use_direct(g) { 0 } else { g.col_rows() * cols };
    let mut out = vec![0.0; g.n * g.c_out * cols];
    out.par_chunks_mut(g.c_out * cols)
        .zip(x.par_chunks(g.c_in * g.h * g.w))
        .for_each_init(|| vec![0.0; scratch], |col, (out_n, xn)| forward_sample(g, xn, w, b, out_n, col));
    out
}

/// Accumulates one sample's input gradient into `dx_n` and its weight
/// gradient into `dw`.
fn backward_sample(
    g: &ConvGeom,
    xn: &[f64],
    w: &[f64],
    dout_n: &[f64],
    dx_n: Option<&mut [f64]>,
    mut dw: Option<&mut [f64]>,
    col: &mut [f64],
    dcol: &mut [f64],
) {
    if use_direct(g) {
        direct_backward(g, xn, w, dout_n, dx_n, dw);
        return;
    }
    let (rows, cols, og) = (g.col_rows(), g.col_cols(), g.og());
    let mut dx_n = dx_n;
    for grp in 0..g.groups {
        let dout_g = &dout_n[grp * og * cols..(grp + 1) * og * cols];
        if let Some(dw) = dw.as_deref_mut() {
            im2col(g, xn, grp * g.cg(), col);
            // dW_gᵀ[k, o] += col[k, :] · dOut_gᵀ[:, o]
            let (r, c) = (rows as isize, cols as isize);
            gemm_strided(
                rows,
                cols,
                og,
                col,
                (c, 1),
                dout_g,
                (1, c),
                1.0,
                &mut dw[grp * og * rows..(grp + 1) * og * rows],
                (1, r),
            );
        }
        if let Some(dx) = dx_n.as_deref_mut() {
            let wg = &w[grp * og * rows..(grp + 1) * og * rows];
            // dcol = W_gᵀ · dOut_g
            gemm(rows, og, cols, wg, (1, rows as isize), dout_g, (cols as isize, 1), 0.0, dcol);
            col2im(g, dcol, grp * g.cg(), dx);
        }
    }
}

/// Gradient-free convolution of plain tensors.
pub fn conv2d_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let g = geometry(input.shape(), weight.shape(), bias.map(|b| b.shape()), stride, padding, 1)?;
    let out = forward(&g, input.data(), weight.data(), bias.map(|b| b.data()));
    Tensor::new(out_shape(&g, input.ndim()), out)
}

fn out_shape(g: &ConvGeom, ndim: usize) -> Vec<usize> {
    if ndim == 3 {
        vec![g.c_out, g.h_out, g.w_out]
    } else {
        vec![g.n, g.c_out, g.h_out, g.w_out]
    }
}

struct Conv2dFn {
    geom: ConvGeom,
}

impl Function for Conv2dFn {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, grad: &Tensor, inputs: &[&Tensor], _: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let g = &self.geom;
        let (rows, cols) = (g.col_rows(), g.col_cols());
        let (x, w) = (inputs[0].data(), inputs[1].data());
        let dout = grad.data();
        let in_stride = g.c_in * g.h * g.w;

        let mut dx = needs[0].then(|| vec![0.0; x.len()]);
        let scratch = if use_direct(g) { 0 } else { rows * cols };
        let out_stride = g.c_out * cols;
        let chunk_in = GRAD_CHUNK * in_stride;
        let chunk_out = GRAD_CHUNK * out_stride;
        let need_dw = needs[1];

        // one partial weight gradient per fixed chunk of samples
        let run_chunk = |ci: usize, dx_chunk: Option<&mut [f64]>, bufs: &mut (Vec<f64>, Vec<f64>)| {
            let mut dw = need_dw.then(|| vec![0.0; w.len()]);
            let xs = &x[ci * chunk_in..((ci + 1) * chunk_in).min(x.len())];
            let douts = &dout[ci * chunk_out..((ci + 1) * chunk_out).min(dout.len())];
            let mut dx_chunk = dx_chunk;
            for (i, (xn, dout_n)) in xs.chunks(in_stride).zip(douts.chunks(out_stride)).enumerate() {
                let dx_n = dx_chunk.as_deref_mut().map(|d| &mut d[i * in_stride..(i + 1) * in_stride]);
                backward_sample(g, xn, w, dout_n, dx_n, dw.as_deref_mut(), &mut bufs.0, &mut bufs.1);
            }
            dw
        };
        let init = || (vec![0.0; scratch], vec![0.0; scratch]);
        let partials: Vec<Option<Vec<f64>>> = match dx.as_mut() {
            Some(dx) => dx
                .par_chunks_mut(chunk_in)
                .enumerate()
                .map_init(init, |bufs, (ci, d)| run_chunk(ci, Some(d), bufs))
                .collect(),
            None => (0..g.n.div_ceil(GRAD_CHUNK))
                .into_par_iter()
                .map_init(init, |bufs, ci| run_chunk(ci, None, bufs))
                .collect(),
        };
        let dw = need_dw.then(|| {
            let mut acc = vec![0.0; w.len()];
            for p in partials.iter().flatten() {
                acc.iter_mut().zip(p).for_each(|(a, v)| *a += v);
            }
            acc
        });

        let db = (needs.len() > 2 && needs[2]).then(|| {
            let mut db = vec![0.0; g.c_out];
            for (i, plane) in dout.chunks(cols).enumerate() {
                db[i % g.c_out] += plane.iter().sum::<f64>();
            }
            Tensor::from_vec(db)
        });

        let mut out = vec![
            dx.map(|d| Tensor::new(inputs[0].shape().to_vec(), d).expect("input shape")),
            dw.map(|d| Tensor::new(inputs[1].shape().to_vec(), d).expect("weight shape")),
        ];
        if needs.len() > 2 {
            out.push(db);
        }
        out
    }
}

impl Graph {
    /// `input` is `C×H×W` or `N×C×H×W`; `weight` is `C_out×C_in×k×k`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        self.conv2d_grouped(input, weight, bias, stride, padding, 1)
    }

    /// Grouped variant: `weight` is `C_out×(C_in/groups)×k×k`.
    pub fn conv2d_grouped(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Var> {
        let (x, w) = (self.value(input), self.value(weight));
        let b = bias.map(|b| self.value(b));
        let geom = geometry(x.shape(), w.shape(), b.map(|b| b.shape()), stride, padding, groups)?;
        let out = forward(&geom, x.data(), w.data(), b.map(|b| b.data()));
        let out = Tensor::new(out_shape(&geom, x.ndim()), out)?;
        let mut ins = vec![input, weight];
        ins.extend(bias);
        Ok(self.apply(Box::new(Conv2dFn { geom }), &ins, out))
    }
}
