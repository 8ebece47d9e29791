//! Parametric 15-joint stick-figure motions with a graded abnormality.
//!
//! A motion of score `q` out of `S` is `nominal + (q/S)·(degraded − nominal)`,
//! where `degraded` is the same subject and phase performing with every
//! abnormality at full strength. The deviation from nominal is therefore
//! exactly proportional to `q`.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VinetError};
use crate::seed::{child_rng, rng};

pub const JOINTS: usize = 15;

/// Joint names in storage order.
pub const JOINT_NAMES: [&str; JOINTS] = [
    "nose",
    "neck",
    "r_shoulder",
    "r_elbow",
    "r_wrist",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "mid_hip",
    "r_hip",
    "r_knee",
    "r_ankle",
    "l_hip",
    "l_knee",
    "l_ankle",
];

const NOSE: usize = 0;
const NECK: usize = 1;
const R_SHOULDER: usize = 2;
const R_ELBOW: usize = 3;
const R_WRIST: usize = 4;
const L_SHOULDER: usize = 5;
const L_ELBOW: usize = 6;
const L_WRIST: usize = 7;
const MID_HIP: usize = 8;
const R_HIP: usize = 9;
const R_KNEE: usize = 10;
const R_ANKLE: usize = 11;
const L_HIP: usize = 12;
const L_KNEE: usize = 13;
const L_ANKLE: usize = 14;

pub type Point = [f64; 2];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MotionFamily {
    #[default]
    Walk,
    SitStand,
}

impl MotionFamily {
    pub fn tag(self) -> &'static str {
        match self {
            MotionFamily::Walk => "walk",
            MotionFamily::SitStand => "sit-stand",
        }
    }
}

impl std::str::FromStr for MotionFamily {
    type Err = VinetError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "walk" => Ok(MotionFamily::Walk),
            "sit-stand" | "sit_stand" | "sitstand" => Ok(MotionFamily::SitStand),
            other => Err(VinetError::Config(format!("unknown motion family {other:?}"))),
        }
    }
}

/// Per-subject body and timing parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectStyle {
    pub limb_scale: f64,
    pub width_scale: f64,
    /// Cycles per frame.
    pub cadence: f64,
    pub phase: f64,
    pub amplitude: f64,
    pub posture: f64,
    pub offset: Point,
    pub noise_seed: u64,
}

impl SubjectStyle {
    pub fn from_seed(seed: u64) -> Self {
        let mut r = rng(seed);
        SubjectStyle {
            limb_scale: r.gen_range(0.92..1.08),
            width_scale: r.gen_range(0.85..1.15),
            cadence: 1.0 / r.gen_range(28.0..36.0),
            phase: r.gen_range(0.0..TAU),
            amplitude: r.gen_range(0.92..1.08),
            posture: r.gen_range(-0.03..0.03),
            offset: [r.gen_range(-0.03..0.03), r.gen_range(-0.02..0.02)],
            noise_seed: r.gen(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CanonicalMotion {
    pub family: MotionFamily,
    pub score: usize,
    pub max_score: usize,
    pub frames: usize,
    pub style: SubjectStyle,
    /// `trajectories[j][t]`, coordinates in the unit square, y pointing down.
    pub trajectories: Vec<Vec<Point>>,
}

impl CanonicalMotion {
    pub fn point(&self, joint: usize, frame: usize) -> Point {
        self.trajectories[joint][frame]
    }

    /// The same subject and timing performed with score 0.
    pub fn nominal(&self) -> CanonicalMotion {
        generate_with_style(self.family, 0, self.max_score, self.style, self.frames).expect("score 0 is valid")
    }

    /// Mean L2 distance to the nominal pattern over joints and frames.
    pub fn deviation(&self) -> f64 {
        mean_distance(self, &self.nominal())
    }
}

/// Mean per-joint, per-frame L2 distance between two motions of equal length.
pub fn mean_distance(a: &CanonicalMotion, b: &CanonicalMotion) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (ta, tb) in a.trajectories.iter().zip(&b.trajectories) {
        for (p, q) in ta.iter().zip(tb) {
            total += (p[0] - q[0]).hypot(p[1] - q[1]);
            count += 1;
        }
    }
    total / count.max(1) as f64
}

/// Joint angles and placement of one frame.
#[derive(Clone, Copy, Debug)]
struct PoseParams {
    hip: Point,
    lean: f64,
    thigh: [f64; 2],
    knee_flex: [f64; 2],
    arm: [f64; 2],
    elbow_flex: [f64; 2],
    head_shift: f64,
}

#[derive(Clone, Copy, Debug)]
struct Body {
    torso: f64,
    head: f64,
    shoulder: f64,
    hip_width: f64,
    thigh: f64,
    shin: f64,
    upper_arm: f64,
    forearm: f64,
}

impl Body {
    fn new(style: &SubjectStyle) -> Self {
        let (s, w) = (style.limb_scale, style.width_scale);
        Body {
            torso: 0.17 * s,
            head: 0.07 * s,
            shoulder: 0.06 * w,
            hip_width: 0.04 * w,
            thigh: 0.125 * s,
            shin: 0.125 * s,
            upper_arm: 0.095 * s,
            forearm: 0.085 * s,
        }
    }
}

fn add(p: Point, dir: f64, len: f64) -> Point {
    // angle measured from straight down, positive toward +x
    [p[0] + len * dir.sin(), p[1] + len * dir.cos()]
}

fn pose(body: &Body, p: &PoseParams) -> [Point; JOINTS] {
    let mut out = [[0.0; 2]; JOINTS];
    let up = [p.lean.sin(), -p.lean.cos()];
    let across = [p.lean.cos(), p.lean.sin()];
    let hip = p.hip;
    let neck = [hip[0] + body.torso * up[0], hip[1] + body.torso * up[1]];
    out[MID_HIP] = hip;
    out[NECK] = neck;
    out[NOSE] = [neck[0] + body.head * up[0] + 0.015 + p.head_shift, neck[1] + body.head * up[1]];
    out[R_SHOULDER] = [neck[0] - body.shoulder * across[0], neck[1] - body.shoulder * across[1]];
    out[L_SHOULDER] = [neck[0] + body.shoulder * across[0], neck[1] + body.shoulder * across[1]];
    out[R_HIP] = [hip[0] - body.hip_width, hip[1]];
    out[L_HIP] = [hip[0] + body.hip_width, hip[1]];
    for (side, (sh, el, wr)) in [(R_SHOULDER, R_ELBOW, R_WRIST), (L_SHOULDER, L_ELBOW, L_WRIST)].into_iter().enumerate()
    {
        out[el] = add(out[sh], p.arm[side], body.upper_arm);
        out[wr] = add(out[el], p.arm[side] + p.elbow_flex[side], body.forearm);
    }
    for (side, (hp, kn, an)) in [(R_HIP, R_KNEE, R_ANKLE), (L_HIP, L_KNEE, L_ANKLE)].into_iter().enumerate() {
        out[kn] = add(out[hp], p.thigh[side], body.thigh);
        out[an] = add(out[kn], p.thigh[side] - p.knee_flex[side], body.shin);
    }
    out
}

/// Abnormality strength: 0 is nominal, 1 is fully degraded.
fn walk_params(style: &SubjectStyle, t: f64, severity: f64) -> PoseParams {
    let phi = TAU * style.cadence * t + style.phase;
    let amp = 0.42 * style.amplitude;
    // limp: affected leg swings much less, the other a bit less
    let amp_r = amp * (1.0 - 0.65 * severity);
    let amp_l = amp * (1.0 - 0.2 * severity);
    let swing = phi.sin();
    let flex = |phase: f64, stiff: f64| 0.55 * (1.0 - stiff) * (phase + PI / 2.0).sin().max(0.0);
    let arm_amp = 0.3 * style.amplitude * (1.0 - 0.7 * severity);
    PoseParams {
        hip: [
            0.5 + style.offset[0] + 0.03 * severity * (phi / 2.0).sin(),
            0.47 + style.offset[1] + 0.01 * (2.0 * phi).cos() + 0.02 * severity,
        ],
        lean: 0.04 + style.posture + 0.35 * severity,
        thigh: [amp_r * swing, -amp_l * swing],
        knee_flex: [flex(phi, 0.7 * severity), flex(phi + PI, 0.2 * severity)],
        arm: [-arm_amp * swing, arm_amp * swing + 0.25 * severity],
        elbow_flex: [0.25 + 0.4 * severity, 0.25],
        head_shift: 0.025 * severity,
    }
}

fn sit_stand_params(style: &SubjectStyle, t: f64, severity: f64) -> PoseParams {
    let phi = TAU * style.cadence * 0.5 * t + style.phase;
    // 0 standing, 1 seated
    let depth = (1.0 - phi.cos()) / 2.0 * style.amplitude.min(1.0) * (1.0 - 0.4 * severity);
    let lag = (1.0 - (phi - 0.8 * severity).cos()) / 2.0 * (1.0 - 0.4 * severity);
    let thigh_r = depth * 1.35;
    let thigh_l = lag * 1.35;
    let transition = (phi.sin()).abs();
    PoseParams {
        hip: [0.5 + style.offset[0] - 0.1 * depth, 0.44 + style.offset[1] + 0.1 * depth],
        lean: 0.05 + style.posture + 0.45 * depth + 0.2 * transition + 0.4 * severity,
        thigh: [thigh_r, thigh_l],
        knee_flex: [1.35 * depth * 1.1, 1.35 * lag * 1.1],
        arm: [0.15 + 0.7 * severity * transition, 0.15 + 0.2 * depth],
        elbow_flex: [0.3 + 0.5 * severity, 0.3],
        head_shift: 0.02 * severity,
    }
}

/// Smooth per-joint jitter: a few sinusoids with seeded frequencies and phases.
fn tremor(seed: u64, frames: usize) -> Vec<Vec<Point>> {
    let mut r = child_rng(seed, &[7]);
    (0..JOINTS)
        .map(|_| {
            let comps: Vec<(f64, f64, f64, f64)> = (0..3)
                .map(|_| (r.gen_range(0.15..0.45), r.gen_range(0.0..TAU), r.gen_range(0.0..TAU), r.gen_range(0.5..1.0)))
                .collect();
            (0..frames)
                .map(|t| {
                    let t = t as f64;
                    let mut p = [0.0; 2];
                    for &(f, px, py, a) in &comps {
                        p[0] += a * (f * t + px).sin();
                        p[1] += a * (f * t + py).sin();
                    }
                    [p[0] * 0.006, p[1] * 0.006]
                })
                .collect()
        })
        .collect()
}

fn render_family(family: MotionFamily, style: &SubjectStyle, frames: usize, severity: f64) -> Vec<Vec<Point>> {
    let body = Body::new(style);
    let mut traj = vec![Vec::with_capacity(frames); JOINTS];
    for t in 0..frames {
        let params = match family {
            MotionFamily::Walk => walk_params(style, t as f64, severity),
            MotionFamily::SitStand => sit_stand_params(style, t as f64, severity),
        };
        for (j, p) in pose(&body, &params).into_iter().enumerate() {
            traj[j].push(p);
        }
    }
    if severity > 0.0 {
        for (tj, nj) in traj.iter_mut().zip(tremor(style.noise_seed, frames)) {
            for (p, n) in tj.iter_mut().zip(nj) {
                p[0] += severity * n[0];
                p[1] += severity * n[1];
            }
        }
    }
    traj
}

/// Like [`generate_canonical_motion`] with explicit subject parameters.
pub fn generate_with_style(
    family: MotionFamily,
    score: usize,
    max_score: usize,
    style: SubjectStyle,
    frames: usize,
) -> Result<CanonicalMotion> {
    if max_score == 0 {
        return Err(VinetError::contract("generate_canonical_motion", "max score must be at least 1"));
    }
    if score > max_score {
        return Err(VinetError::contract(
            "generate_canonical_motion",
            format!("score {score} exceeds max {max_score}"),
        ));
    }
    if frames == 0 {
        return Err(VinetError::contract("generate_canonical_motion", "frame count must be positive"));
    }
    let nominal = render_family(family, &style, frames, 0.0);
    let trajectories = if score == 0 {
        nominal
    } else {
        let degraded = render_family(family, &style, frames, 1.0);
        let w = score as f64 / max_score as f64;
        nominal
            .iter()
            .zip(&degraded)
            .map(|(n, d)| n.iter().zip(d).map(|(a, b)| [a[0] + w * (b[0] - a[0]), a[1] + w * (b[1] - a[1])]).collect())
            .collect()
    };
    Ok(CanonicalMotion { family, score, max_score, frames, style, trajectories })
}

/// Motion of `family` at quality `score` (0 = normal) for the subject
/// described by `style_seed`.
pub fn generate_canonical_motion(
    family: MotionFamily,
    score: usize,
    max_score: usize,
    style_seed: u64,
    frames: usize,
) -> Result<CanonicalMotion> {
    generate_with_style(family, score, max_score, SubjectStyle::from_seed(style_seed), frames)
}
