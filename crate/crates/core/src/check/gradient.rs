//! Central finite-difference checks of every differentiable operation.
//!
//! Inputs are drawn away from the kinks of the piecewise operations: relu
//! inputs keep a margin from zero, pooling windows have well-separated
//! values and bilinear sample points keep a margin from pixel centres. The
//! error of one tensor is `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂, NORM_FLOOR)` over the
//! checked entries.

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, VinetError};
use crate::model::{ModelConfig, ViNet};
use crate::msm::{BackboneStyle, ScorerConfig};
use crate::oracle::numeric_gradient;
use crate::seed::child_rng;
use crate::tensor::{BatchNormMode, Graph, RunningStats, Tensor, Var};
use crate::vtdm::{AffineParams, VtdmConfig};

pub const FD_STEP: f64 = 1e-4;
pub const FD_TOLERANCE: f64 = 1e-4;
/// Gradient norms below this are compared absolutely. Central differences of
/// an O(1) loss carry about 1e-12 of rounding noise at `FD_STEP`.
pub const NORM_FLOOR: f64 = 1e-6;
/// Entries probed per parameter tensor of the full network.
pub const MODEL_PROBES: usize = 12;
/// Side of the clips fed to the full network.
pub const MODEL_SIDE: usize = 16;
/// Entries tried per tensor before giving up on finding smooth probes.
pub const MAX_CANDIDATES: usize = 48;
const MAX_DIRECTIONS: usize = 8;

const SUITE_SEED: u64 = 0x6772_6164;
/// Minimum distance, in pixels, between a sample point and a pixel centre.
/// One step moves a point on the 5×6 test image by at most 2.5 steps.
const SAMPLE_MARGIN: f64 = 2e-3;

/// Worst error of one operation at one seed.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientCheck {
    pub op: String,
    pub seed: u64,
    pub error: f64,
    /// Number of gradient entries compared.
    pub entries: usize,
    /// Probes dropped because the stencil crossed a kink.
    pub skipped: usize,
    /// Parameter tensors for which every probe crossed a kink.
    pub uncovered: Vec<String>,
}

impl GradientCheck {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.error < tolerance
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(NORM_FLOOR)
}

fn worse(a: f64, b: f64) -> f64 {
    // NaN counts as the worst possible error
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else {
        a.max(b)
    }
}

fn uniform(shape: &[usize], lo: f64, hi: f64, r: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| r.gen_range(lo..hi))
}

/// Values bounded away from zero by `margin`.
fn off_zero(shape: &[usize], margin: f64, r: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let v = r.gen_range(margin..1.0);
        if r.gen_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

/// A shuffled lattice with spacing 0.05, so no two values are close.
fn distinct(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let mut values: Vec<f64> = (0..n).map(|i| i as f64 * 0.05 - n as f64 * 0.025).collect();
    rand::seq::SliceRandom::shuffle(values.as_mut_slice(), r);
    Tensor::new(shape.to_vec(), values).expect("shape")
}

/// `Σ y ⊙ r` for a fixed random `r`, turning any output into a scalar.
fn project(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let weights = uniform(g.shape(y), -1.0, 1.0, &mut child_rng(seed, &[99]));
    let w = g.input(weights);
    let prod = g.mul(y, w)?;
    Ok(g.sum(prod))
}

/// Compares backprop against finite differences for every input of `build`.
fn check_leaves(inputs: &[Tensor], h: f64, build: impl Fn(&mut Graph, &[Var]) -> Result<Var>) -> Result<(f64, usize)> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = build(&mut g, &vars)?;
    let grads = g.backward(loss)?;
    let mut worst = 0.0;
    let mut entries = 0;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.wrt(vars[k]).cloned().unwrap_or_else(|| Tensor::zeros(input.shape()));
        let numeric = numeric_gradient(input, h, |probe| {
            let mut g = Graph::no_grad();
            let vars: Vec<Var> = inputs
                .iter()
                .enumerate()
                .map(|(i, t)| g.input(if i == k { probe.clone() } else { t.clone() }))
                .collect();
            build(&mut g, &vars).map(|v| g.value(v).item()).unwrap_or(f64::NAN)
        });
        worst = worse(worst, relative_error(analytic.data(), numeric.data()));
        entries += input.numel();
    }
    Ok((worst, entries))
}

/// Operation names in the order `op_checks` reports them.
pub const OPS: [&str; 13] = [
    "conv2d",
    "conv2d_strided",
    "conv2d_grouped",
    "maxpool2d",
    "maxpool2d_overlapping",
    "relu",
    "batchnorm2d_train",
    "batchnorm2d_eval",
    "linear",
    "softmax_cross_entropy",
    "bilinear_sample",
    "affine_grid_bilinear_theta",
    "shape_ops",
];

/// Grid parameters whose sample points all keep `SAMPLE_MARGIN` pixels from
/// any pixel centre, so a step of `FD_STEP` never crosses a kink.
/// True when every point of the grid of `t` lies more than `SAMPLE_MARGIN`
/// pixels from a cell edge of an `h×w` image.
fn grid_clear(t: &AffineParams, out_h: usize, out_w: usize, h: usize, w: usize) -> bool {
    let Ok(grid) = crate::vtdm::affine_grid(t, out_h, out_w) else {
        return false;
    };
    let clear = |c: f64, len: usize| {
        let p = (c + 1.0) / 2.0 * (len - 1) as f64;
        (p - p.round()).abs() > SAMPLE_MARGIN
    };
    grid.points.iter().all(|&(x, y)| clear(x, w) && clear(y, h))
}

fn smooth_theta(n: usize, out_h: usize, out_w: usize, h: usize, w: usize, r: &mut ChaCha8Rng) -> Tensor {
    let mut data = Vec::with_capacity(4 * n);
    for _ in 0..n {
        loop {
            let t = AffineParams([
                r.gen_range(0.5..1.3),
                r.gen_range(-0.4..0.4),
                r.gen_range(-0.4..0.4),
                r.gen_range(0.5..1.3),
            ]);
            if grid_clear(&t, out_h, out_w, h, w) {
                data.extend(t.0);
                break;
            }
        }
    }
    Tensor::new(vec![n, 4], data).expect("shape")
}

/// Checks one named operation at one seed.
pub fn op_check(op: &str, seed: u64, h: f64) -> Result<GradientCheck> {
    let r = &mut child_rng(SUITE_SEED, &[seed, OPS.iter().position(|o| *o == op).unwrap_or(99) as u64]);
    let (error, entries) = match op {
        "conv2d" => {
            let ins = [
                uniform(&[2, 3, 6, 5], -1.0, 1.0, r),
                uniform(&[4, 3, 3, 3], -1.0, 1.0, r),
                uniform(&[4], -1.0, 1.0, r),
            ];
            check_leaves(&ins, h, |g, v| {
                let y = g.conv2d(v[0], v[1], Some(v[2]), 1, 1)?;
                project(g, y, seed)
            })?
        }
        "conv2d_strided" => {
            let ins = [uniform(&[2, 2, 7, 8], -1.0, 1.0, r), uniform(&[3, 2, 3, 3], -1.0, 1.0, r)];
            check_leaves(&ins, h, |g, v| {
                let y = g.conv2d(v[0], v[1], None, 2, 0)?;
                project(g, y, seed)
            })?
        }
        "conv2d_grouped" => {
            let ins = [
                uniform(&[2, 4, 5, 5], -1.0, 1.0, r),
                uniform(&[6, 2, 3, 3], -1.0, 1.0, r),
                uniform(&[6], -1.0, 1.0, r),
            ];
            check_leaves(&ins, h, |g, v| {
                let y = g.conv2d_grouped(v[0], v[1], Some(v[2]), 1, 1, 2)?;
                project(g, y, seed)
            })?
        }
        "maxpool2d" => {
            let ins = [distinct(&[2, 3, 6, 6], r)];
            check_leaves(&ins, h, |g, v| {
                let y = g.maxpool2d(v[0], 2, 2)?;
                project(g, y, seed)
            })?
        }
        "maxpool2d_overlapping" => {
            let ins = [distinct(&[1, 2, 7, 7], r)];
            check_leaves(&ins, h, |g, v| {
                let y = g.maxpool2d(v[0], 3, 2)?;
                project(g, y, seed)
            })?
        }
        "relu" => {
            let ins = [off_zero(&[3, 7], 0.01, r)];
            check_leaves(&ins, h, |g, v| {
                let y = g.relu(v[0]);
                project(g, y, seed)
            })?
        }
        "batchnorm2d_train" | "batchnorm2d_eval" => {
            let mode = if op == "batchnorm2d_train" { BatchNormMode::Train } else { BatchNormMode::Eval };
            let ins = [uniform(&[3, 2, 3, 4], -2.0, 2.0, r), uniform(&[2], 0.5, 1.5, r), uniform(&[2], -1.0, 1.0, r)];
            let (mean, var) =
                ([r.gen_range(-0.5..0.5), r.gen_range(-0.5..0.5)], [r.gen_range(0.5..2.0), r.gen_range(0.5..2.0)]);
            check_leaves(&ins, h, |g, v| {
                let mut stats = RunningStats::new(2);
                stats.mean = mean.to_vec();
                stats.var = var.to_vec();
                let y = g.batchnorm2d(v[0], v[1], v[2], &mut stats, mode)?;
                project(g, y, seed)
            })?
        }
        "linear" => {
            let ins = [uniform(&[3, 5], -1.0, 1.0, r), uniform(&[4, 5], -1.0, 1.0, r), uniform(&[4], -1.0, 1.0, r)];
            check_leaves(&ins, h, |g, v| {
                let y = g.linear(v[0], v[1], v[2])?;
                project(g, y, seed)
            })?
        }
        "softmax_cross_entropy" => {
            let labels: Vec<usize> = (0..4).map(|_| r.gen_range(0..5)).collect();
            let ins = [uniform(&[4, 5], -3.0, 3.0, r)];
            check_leaves(&ins, h, |g, v| g.softmax_cross_entropy(v[0], &labels))?
        }
        "bilinear_sample" => {
            let theta = smooth_theta(2, 4, 5, 5, 6, r);
            let ins = [uniform(&[2, 2, 5, 6], -1.0, 1.0, r)];
            check_leaves(&ins, h, |g, v| {
                let th = g.input(theta.clone());
                let grid = g.affine_grid(th, 4, 5)?;
                let y = g.bilinear_sample(v[0], grid)?;
                project(g, y, seed)
            })?
        }
        "affine_grid_bilinear_theta" => {
            let ins = [uniform(&[2, 2, 5, 6], -1.0, 1.0, r), smooth_theta(2, 4, 5, 5, 6, r)];
            check_leaves(&ins, h, |g, v| {
                let grid = g.affine_grid(v[1], 4, 5)?;
                let y = g.bilinear_sample(v[0], grid)?;
                project(g, y, seed)
            })?
        }
        "shape_ops" => {
            let ins = [uniform(&[2, 3, 2, 2], -1.0, 1.0, r), uniform(&[2, 3, 2, 2], -1.0, 1.0, r)];
            check_leaves(&ins, h, |g, v| {
                let p = g.mul(v[0], v[1])?;
                let s = g.scale(p, 1.7);
                let a = g.add(s, v[0])?;
                let pooled = g.global_avg_pool(a)?;
                let flat = g.reshape(pooled, &[6])?;
                project(g, flat, seed)
            })?
        }
        other => {
            return Err(crate::error::VinetError::Config(format!("no gradient check named {other}")));
        }
    };
    Ok(GradientCheck { op: op.to_string(), seed, error, entries, skipped: 0, uncovered: Vec::new() })
}

/// Loss and branch key of the full network on fixed clips.
fn model_loss(model: &mut ViNet, clips: &Tensor, labels: &[usize]) -> (f64, u64) {
    // a recording graph keeps the ops, which the branch key needs
    let mut g = Graph::new();
    match model.forward(&mut g, clips.clone(), BatchNormMode::Train).and_then(|l| g.softmax_cross_entropy(l, labels)) {
        Ok(loss) => (g.value(loss).item(), g.branch_key()),
        Err(_) => (f64::NAN, 0),
    }
}

/// One Gaussian of peak 255 per frame at a random centre, like rendered
/// joint heatmaps.
fn blob_clips(shape: &[usize; 5], r: &mut ChaCha8Rng) -> Tensor {
    let [b, j, t, h, w] = *shape;
    let mut data = Vec::with_capacity(b * j * t * h * w);
    for _ in 0..b * j * t {
        let (cy, cx, sigma) =
            (r.gen_range(2.0..h as f64 - 2.0), r.gen_range(2.0..w as f64 - 2.0), r.gen_range(1.5..3.0));
        for y in 0..h {
            for x in 0..w {
                let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                data.push(255.0 * (-d2 / (2.0 * sigma * sigma)).exp());
            }
        }
    }
    Tensor::new(shape.to_vec(), data).expect("shape")
}

/// Transformer matrices the network produces for `clips`.
fn thetas(model: &mut ViNet, clips: &Tensor) -> Result<Vec<AffineParams>> {
    let v = model.config.vtdm.clone();
    let s = clips.shape();
    let mut g = Graph::no_grad();
    let x = g.input(clips.clone().reshape(&[s[0] * v.joints, v.clip_len, v.height, v.width])?);
    let out = model.vtdm.forward(&mut g, &mut model.store, x, BatchNormMode::Train)?;
    Ok(out.theta.map_or_else(Vec::new, |t| {
        g.value(t).data().chunks(4).map(|c| AffineParams([c[0], c[1], c[2], c[3]])).collect()
    }))
}

/// Full network at `MODEL_SIDE`×`MODEL_SIDE`, two clips, cross-entropy loss.
///
/// Every trainable tensor is checked on up to `MODEL_PROBES` random entries
/// and along one random direction covering all of its entries. A probe
/// counts only when the network takes the same branches (relu signs,
/// pooling winners, sampler cells) at both ends of the stencil as at the
/// centre; probes that straddle a kink are counted in `skipped` and replaced
/// by fresh ones, up to `MAX_CANDIDATES` per tensor. The localisation head
/// is moved off its identity start so the sampler is exercised at generic
/// points; with `aligned` the start is drawn so that no sample point lies
/// within `SAMPLE_MARGIN` of a cell edge.
pub fn model_check(style: BackboneStyle, joints: usize, aligned: bool, seed: u64, h: f64) -> Result<GradientCheck> {
    let r = &mut child_rng(SUITE_SEED, &[seed, 1000 + style as u64, joints as u64, u64::from(aligned)]);
    let vtdm = VtdmConfig { joints, height: MODEL_SIDE, width: MODEL_SIDE, ..VtdmConfig::default() };
    let config = ModelConfig { scorer: ScorerConfig::for_style(style, joints, 4), vtdm };
    let mut model = ViNet::build(config, seed)?;
    let v = model.config.vtdm.clone();
    let shape = [2, v.joints, v.clip_len, v.height, v.width];
    let clips = if aligned { blob_clips(&shape, r) } else { uniform(&shape, 0.0, 255.0, r) };
    let (weight, bias) = (
        model.store.id("vtdm.loc.fc2.weight").expect("loc head"),
        model.store.id("vtdm.loc.fc2.bias").expect("loc head"),
    );
    if aligned {
        // a diagonal start and a shrinking head until no sample point sits near a cell edge
        let mut spread = 0.02;
        for attempt in 0.. {
            if attempt == 400 {
                return Err(VinetError::contract("model_check", "no kink-free transformer start found"));
            }
            let t = [r.gen_range(0.6..1.2), 0.0, 0.0, r.gen_range(0.6..1.2)];
            model.store.get_mut(bias).value = Tensor::from_vec(t.to_vec());
            model.store.get_mut(weight).value.data_mut().iter_mut().for_each(|x| *x = r.gen_range(-spread..spread));
            if thetas(&mut model, &clips)?.iter().all(|t| grid_clear(t, v.height, v.width, v.height, v.width)) {
                break;
            }
            spread *= 0.9;
        }
    } else {
        for (id, spread, centre) in [(weight, 0.02, None), (bias, 0.15, Some(AffineParams::IDENTITY))] {
            let p = &mut model.store.get_mut(id).value;
            for (i, x) in p.data_mut().iter_mut().enumerate() {
                *x = centre.map_or(0.0, |c| c.0[i]) + r.gen_range(-spread..spread);
            }
        }
    }
    let labels = [r.gen_range(0..5), r.gen_range(0..5)];

    model.store.zero_grad();
    let mut g = Graph::new();
    let logits = model.forward(&mut g, clips.clone(), BatchNormMode::Train)?;
    let loss = g.softmax_cross_entropy(logits, &labels)?;
    g.backward_into(loss, &mut model.store)?;
    let centre_key = g.branch_key();
    drop(g);

    let ids: Vec<_> =
        model.store.iter().filter(|p| p.trainable).map(|p| model.store.id(&p.name).expect("own name")).collect();
    let mut worst = 0.0;
    let (mut entries, mut skipped) = (0, 0);
    let mut uncovered = Vec::new();
    for id in ids {
        let p = model.store.get(id);
        let analytic = p.grad.clone().unwrap_or_else(|| Tensor::zeros(p.value.shape()));
        let original = p.value.clone();
        let n = original.numel();

        // central difference along `dir`, or None when it straddles a kink
        let probe = |dir: &[(usize, f64)], m: &mut ViNet| -> Option<f64> {
            let mut ends = [(0.0, 0), (0.0, 0)];
            for (end, delta) in ends.iter_mut().zip([h, -h]) {
                let mut moved = original.clone();
                for &(i, d) in dir {
                    moved.data_mut()[i] += delta * d;
                }
                m.store.get_mut(id).value = moved;
                *end = model_loss(m, &clips, &labels);
            }
            m.store.get_mut(id).value = original.clone();
            if ends.iter().all(|e| e.1 == centre_key) {
                Some((ends[0].0 - ends[1].0) / (2.0 * h))
            } else {
                None
            }
        };

        let covered_before = entries;
        let order: Vec<usize> = sample(r, n, n.min(MAX_CANDIDATES)).into_vec();
        let (mut picked, mut numeric) = (Vec::new(), Vec::new());
        for i in order {
            if picked.len() == MODEL_PROBES {
                break;
            }
            match probe(&[(i, 1.0)], &mut model) {
                Some(fd) => {
                    picked.push(analytic.data()[i]);
                    numeric.push(fd);
                }
                None => skipped += 1,
            }
        }
        if !picked.is_empty() {
            worst = worse(worst, relative_error(&picked, &numeric));
        }
        entries += picked.len();

        // unit direction mixing the gradient with noise, so the projection is not tiny
        // tensors with few entries make up their candidate budget with directions
        let gnorm = norm(analytic.data()).max(NORM_FLOOR);
        for _ in 0..MAX_DIRECTIONS.max(MAX_CANDIDATES.saturating_sub(n)) {
            let mut dir: Vec<f64> =
                analytic.data().iter().map(|a| a / gnorm + r.gen_range(-1.0..1.0) / (n as f64).sqrt()).collect();
            let dnorm = norm(&dir);
            dir.iter_mut().for_each(|d| *d /= dnorm);
            let indexed: Vec<(usize, f64)> = dir.iter().copied().enumerate().collect();
            if let Some(fd) = probe(&indexed, &mut model) {
                let directional: f64 = analytic.data().iter().zip(&dir).map(|(a, d)| a * d).sum();
                worst = worse(worst, relative_error(&[directional], &[fd]));
                entries += 1;
                break;
            }
            skipped += 1;
        }
        if entries == covered_before {
            uncovered.push(model.store.get(id).name.clone());
        }
    }
    let name = serde_json::to_value(style).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
    Ok(GradientCheck {
        op: format!("model_{name}_j{joints}{}", if aligned { "_aligned" } else { "" }),
        seed,
        error: worst,
        entries,
        skipped,
        uncovered,
    })
}

/// Full-network variants as (joints, aligned). With 15 joints nearly every
/// move of the transformer bias carries some sample point across a cell edge,
/// so a two-joint network with a kink-free start covers it.
pub const MODEL_VARIANTS: [(usize, bool); 2] = [(15, false), (2, true)];

/// Every operation check plus the full tiny network, for each of `seeds`.
pub fn gradient_suite(seeds: std::ops::Range<u64>, h: f64) -> Result<Vec<GradientCheck>> {
    let mut out = Vec::new();
    for seed in seeds {
        for op in OPS {
            out.push(op_check(op, seed, h)?);
        }
        for (joints, aligned) in MODEL_VARIANTS {
            out.push(model_check(BackboneStyle::Tiny, joints, aligned, seed, h)?);
        }
    }
    Ok(out)
}
