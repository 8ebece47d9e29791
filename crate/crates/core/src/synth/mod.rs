//! Synthetic multi-view movement corpus.
//!
//! Each (subject, score, repetition) gets one canonical motion. Every view of
//! it is the same motion pushed through a different 2D affine camera and
//! rendered as per-joint Gaussian heatmaps. [`SyntheticCorpus`] renders on
//! demand; [`generate_dataset`] writes the same samples to disk.

mod motion;
mod render;
#[cfg(test)]
mod tests;
mod view;

use std::fs;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{save_sequence, ActionConfig, HeatmapVolume, Manifest, SampleMeta, SampleSource, MANIFEST_FILE};
use crate::error::{Result, VinetError};
use crate::seed::{child_rng, child_seed};

pub use motion::{
    generate_canonical_motion, generate_with_style, mean_distance, CanonicalMotion, MotionFamily, Point, SubjectStyle,
    JOINTS, JOINT_NAMES,
};
pub use render::{render_frames, render_heatmaps, to_pixel, Occlusion};
pub use view::{apply_view_transform, default_views, ViewTransform, MIN_DETERMINANT};

pub const GENERATOR_FILE: &str = "generator.json";

/// Random blanking of joint heatmaps over frame ranges.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcclusionSpec {
    /// Chance that a given joint of a given video is occluded once.
    pub probability: f64,
    pub max_frames: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    pub subjects: usize,
    pub views: usize,
    pub repetitions: usize,
    pub max_score: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub height: usize,
    pub width: usize,
    pub sigma: f64,
    pub seed: u64,
    pub family: MotionFamily,
    pub clip_len: usize,
    pub occlusion: Option<OcclusionSpec>,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            subjects: 20,
            views: 6,
            repetitions: 1,
            max_score: 4,
            min_frames: 64,
            max_frames: 128,
            height: 64,
            width: 64,
            sigma: 2.0,
            seed: 0,
            family: MotionFamily::Walk,
            clip_len: 16,
            occlusion: None,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(VinetError::Config(m));
        if self.subjects == 0 || self.views == 0 || self.repetitions == 0 {
            return err("subject, view and repetition counts must be positive".into());
        }
        if self.views > default_views().len() {
            return err(format!("at most {} views are defined, asked for {}", default_views().len(), self.views));
        }
        if self.max_score == 0 {
            return err("max score must be at least 1".into());
        }
        if self.clip_len == 0 || self.min_frames < self.clip_len || self.max_frames < self.min_frames {
            return err(format!(
                "frame range {}..={} must satisfy clip length {} <= min <= max",
                self.min_frames, self.max_frames, self.clip_len
            ));
        }
        if self.height < 2 || self.width < 2 {
            return err(format!("raster {}×{} too small", self.height, self.width));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return err(format!("sigma must be positive, got {}", self.sigma));
        }
        if let Some(o) = &self.occlusion {
            if !(0.0..=1.0).contains(&o.probability) || o.max_frames == 0 {
                return err("occlusion needs probability in [0, 1] and a positive frame count".into());
            }
        }
        Ok(())
    }

    pub fn action(&self) -> ActionConfig {
        ActionConfig { name: self.family.tag().into(), max_score: self.max_score, clip_len: self.clip_len }
    }

    pub fn sample_count(&self) -> usize {
        self.subjects * (self.max_score + 1) * self.repetitions * self.views
    }
}

/// One canonical motion and where it came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionRecord {
    pub subject_id: u32,
    pub score: usize,
    pub repetition: u32,
    pub motion: CanonicalMotion,
}

/// Everything needed to reconstruct the trajectories behind a corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorMetadata {
    pub spec: DatasetSpec,
    pub views: Vec<ViewTransform>,
    pub motions: Vec<MotionRecord>,
}

impl GeneratorMetadata {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| VinetError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Clone, Debug)]
struct Entry {
    motion: usize,
    view: usize,
    occlusions: Vec<Occlusion>,
}

/// The corpus described by a [`DatasetSpec`], rendered lazily.
#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    spec: DatasetSpec,
    views: Vec<ViewTransform>,
    motions: Vec<MotionRecord>,
    metas: Vec<SampleMeta>,
    entries: Vec<Entry>,
}

/// File name of one sample.
pub fn sample_file_name(subject: u32, score: usize, repetition: u32, view: u32) -> String {
    format!("s{subject:02}_q{score}_r{repetition}_v{view}.vihm")
}

impl SyntheticCorpus {
    pub fn new(spec: DatasetSpec) -> Result<Self> {
        spec.validate()?;
        let views: Vec<ViewTransform> = default_views().into_iter().take(spec.views).collect();
        let mut motions = Vec::new();
        let mut metas = Vec::with_capacity(spec.sample_count());
        let mut entries = Vec::with_capacity(spec.sample_count());
        for subject in 1..=spec.subjects as u32 {
            let base = SubjectStyle::from_seed(child_seed(spec.seed, &[1, u64::from(subject)]));
            for score in 0..=spec.max_score {
                for rep in 1..=spec.repetitions as u32 {
                    // timing depends on subject and repetition only, so scores differ by severity alone
                    let mut r = child_rng(spec.seed, &[2, u64::from(subject), u64::from(rep)]);
                    let style =
                        SubjectStyle { phase: r.gen_range(0.0..std::f64::consts::TAU), noise_seed: r.gen(), ..base };
                    let frames = r.gen_range(spec.min_frames..=spec.max_frames);
                    let motion = generate_with_style(spec.family, score, spec.max_score, style, frames)?;
                    motions.push(MotionRecord { subject_id: subject, score, repetition: rep, motion });
                    for (vi, view) in views.iter().enumerate() {
                        let occlusions = spec
                            .occlusion
                            .map(|o| {
                                let path =
                                    [3, u64::from(subject), score as u64, u64::from(rep), u64::from(view.view_id)];
                                draw_occlusions(&o, frames, &mut child_rng(spec.seed, &path))
                            })
                            .unwrap_or_default();
                        metas.push(SampleMeta {
                            path: sample_file_name(subject, score, rep, view.view_id),
                            subject_id: subject,
                            view_id: view.view_id,
                            score,
                            action_tag: spec.family.tag().into(),
                        });
                        entries.push(Entry { motion: motions.len() - 1, view: vi, occlusions });
                    }
                }
            }
        }
        Ok(SyntheticCorpus { spec, views, motions, metas, entries })
    }

    pub fn spec(&self) -> &DatasetSpec {
        &self.spec
    }

    pub fn views(&self) -> &[ViewTransform] {
        &self.views
    }

    pub fn motions(&self) -> &[MotionRecord] {
        &self.motions
    }

    /// Canonical motion behind sample `index`.
    pub fn motion_of(&self, index: usize) -> &MotionRecord {
        &self.motions[self.entries[index].motion]
    }

    /// Joint trajectories of sample `index` in its view, unit-square coordinates.
    pub fn view_trajectories(&self, index: usize) -> Vec<Vec<Point>> {
        let e = &self.entries[index];
        apply_view_transform(&self.motions[e.motion].motion, &self.views[e.view]).expect("views validated")
    }

    pub fn occlusions(&self, index: usize) -> &[Occlusion] {
        &self.entries[index].occlusions
    }

    pub fn metadata(&self) -> GeneratorMetadata {
        GeneratorMetadata { spec: self.spec.clone(), views: self.views.clone(), motions: self.motions.clone() }
    }

    pub fn manifest(&self) -> Manifest {
        Manifest { action: self.spec.action(), samples: self.metas.clone() }
    }

    pub fn render(&self, index: usize) -> Result<HeatmapVolume> {
        self.read_frames(index, 0, self.frame_count(index))
    }
}

fn draw_occlusions(spec: &OcclusionSpec, frames: usize, r: &mut impl Rng) -> Vec<Occlusion> {
    let mut out = Vec::new();
    for joint in 0..JOINTS {
        if r.gen_bool(spec.probability) {
            let len = r.gen_range(1..=spec.max_frames.min(frames));
            let start = r.gen_range(0..=frames - len);
            out.push(Occlusion { joint, frames: start..start + len });
        }
    }
    out
}

impl SampleSource for SyntheticCorpus {
    fn samples(&self) -> &[SampleMeta] {
        &self.metas
    }

    fn frame_count(&self, index: usize) -> usize {
        self.motions[self.entries[index].motion].motion.frames
    }

    fn dims(&self) -> (usize, usize, usize) {
        (JOINTS, self.spec.height, self.spec.width)
    }

    fn read_frames(&self, index: usize, start: usize, len: usize) -> Result<HeatmapVolume> {
        let traj = self.view_trajectories(index);
        let e = &self.entries[index];
        render_frames(&traj, start..start + len, self.spec.height, self.spec.width, self.spec.sigma, &e.occlusions)
    }
}

/// Writes every sample as a heatmap file plus `manifest.json` and
/// `generator.json` into `out_dir`. Output depends only on the spec.
pub fn generate_dataset(spec: &DatasetSpec, out_dir: &Path) -> Result<Manifest> {
    let corpus = SyntheticCorpus::new(spec.clone())?;
    fs::create_dir_all(out_dir).map_err(|e| VinetError::io(out_dir, e))?;
    (0..corpus.len()).into_par_iter().try_for_each(|i| {
        let volume = corpus.render(i)?;
        save_sequence(&out_dir.join(&corpus.metas[i].path), &volume)
    })?;
    let manifest = corpus.manifest();
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    let meta_path = out_dir.join(GENERATOR_FILE);
    let text = serde_json::to_string(&corpus.metadata())?;
    fs::write(&meta_path, text).map_err(|e| VinetError::io(&meta_path, e))?;
    Ok(manifest)
}
