use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::data::HeatmapVolume;
use crate::error::{Result, VinetError};

use super::motion::Point;

/// Unit-square coordinates to pixel coordinates: 0 is the first pixel
/// center and 1 the last, along each axis.
pub fn to_pixel(p: Point, height: usize, width: usize) -> Point {
    [p[0] * (width as f64 - 1.0), p[1] * (height as f64 - 1.0)]
}

/// Frames of one joint whose heatmaps are blanked.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Occlusion {
    pub joint: usize,
    pub frames: Range<usize>,
}

/// Adds one isotropic Gaussian with peak 1 at pixel position `center`.
/// Pixels farther than 4σ along either axis are left untouched.
fn splat(plane: &mut [f32], height: usize, width: usize, center: Point, sigma: f64) {
    let radius = (4.0 * sigma).ceil();
    let denom = 2.0 * sigma * sigma;
    let lo = |c: f64| (c - radius).ceil().max(0.0) as usize;
    let hi = |c: f64, n: usize| ((c + radius).floor() + 1.0).clamp(0.0, n as f64) as usize;
    let (x0, x1) = (lo(center[0]), hi(center[0], width));
    let (y0, y1) = (lo(center[1]), hi(center[1], height));
    if x0 >= x1 || y0 >= y1 {
        return;
    }
    let gx: Vec<f64> = (x0..x1).map(|x| (-(x as f64 - center[0]).powi(2) / denom).exp()).collect();
    for y in y0..y1 {
        let gy = (-(y as f64 - center[1]).powi(2) / denom).exp();
        let row = &mut plane[y * width + x0..y * width + x1];
        for (v, g) in row.iter_mut().zip(&gx) {
            *v = (f64::from(*v) + gy * g) as f32;
        }
    }
}

/// Renders frames `range` of `trajectories[j][t]` (unit-square coordinates)
/// into a `J×len×H×W` volume, skipping occluded joint-frames.
pub fn render_frames(
    trajectories: &[Vec<Point>],
    range: Range<usize>,
    height: usize,
    width: usize,
    sigma: f64,
    occlusions: &[Occlusion],
) -> Result<HeatmapVolume> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(VinetError::contract("render_heatmaps", format!("sigma must be positive, got {sigma}")));
    }
    let frames = trajectories.first().map_or(0, Vec::len);
    if trajectories.iter().any(|t| t.len() != frames) {
        return Err(VinetError::contract("render_heatmaps", "joint trajectories differ in length"));
    }
    if range.is_empty() || range.end > frames {
        return Err(VinetError::contract("render_heatmaps", format!("frames {range:?} outside 0..{frames}")));
    }
    let mut vol = HeatmapVolume::zeros([trajectories.len(), range.len(), height, width])?;
    for (j, traj) in trajectories.iter().enumerate() {
        for (i, t) in range.clone().enumerate() {
            if occlusions.iter().any(|o| o.joint == j && o.frames.contains(&t)) {
                continue;
            }
            splat(vol.frame_mut(j, i), height, width, to_pixel(traj[t], height, width), sigma);
        }
    }
    Ok(vol)
}

/// Renders every frame: one Gaussian of standard deviation `sigma` pixels per
/// joint and frame, peak value 1, cut at the raster border.
pub fn render_heatmaps(trajectories: &[Vec<Point>], height: usize, width: usize, sigma: f64) -> Result<HeatmapVolume> {
    let frames = trajectories.first().map_or(0, Vec::len);
    render_frames(trajectories, 0..frames, height, width, sigma, &[])
}
