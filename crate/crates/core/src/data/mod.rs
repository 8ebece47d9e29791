//! Per-joint heatmap videos: the in-memory volume, dataset manifests, clip
//! splitting and intensity normalization, plus sources that serve frame
//! ranges without holding a whole corpus in memory.

pub mod format;
#[cfg(test)]
mod tests;

use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, VinetError};
use crate::tensor::Tensor;

pub use format::{load_sequence, read_frames, read_header, save_sequence, VolumeHeader};

/// Number of joint heatmaps used per frame.
pub const DEFAULT_JOINTS: usize = 15;
pub const DEFAULT_CLIP_LEN: usize = 16;
pub const MAX_INTENSITY: f64 = 255.0;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionConfig {
    pub name: String,
    pub max_score: usize,
    #[serde(default = "default_clip_len")]
    pub clip_len: usize,
}

fn default_clip_len() -> usize {
    DEFAULT_CLIP_LEN
}

impl ActionConfig {
    pub fn new(name: impl Into<String>, max_score: usize) -> Self {
        ActionConfig { name: name.into(), max_score, clip_len: DEFAULT_CLIP_LEN }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_score < 1 {
            return Err(VinetError::Config(format!("action {:?}: max score must be at least 1", self.name)));
        }
        if self.clip_len == 0 {
            return Err(VinetError::Config(format!("action {:?}: clip length must be positive", self.name)));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.max_score + 1
    }
}

impl Default for ActionConfig {
    fn default() -> Self {
        ActionConfig::new("walk", 4)
    }
}

/// Dense `J×F×H×W` single-precision heatmaps.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapVolume {
    dims: [usize; 4],
    data: Vec<f32>,
}

impl HeatmapVolume {
    pub fn new(dims: [usize; 4], data: Vec<f32>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(VinetError::contract("heatmap volume", format!("zero dimension in {dims:?}")));
        }
        if dims.iter().product::<usize>() != data.len() {
            return Err(VinetError::contract(
                "heatmap volume",
                format!("dims {dims:?} need {} values, got {}", dims.iter().product::<usize>(), data.len()),
            ));
        }
        Ok(HeatmapVolume { dims, data })
    }

    pub fn zeros(dims: [usize; 4]) -> Result<Self> {
        Self::new(dims, vec![0.0; dims.iter().product()])
    }

    /// `[joints, frames, height, width]`
    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn joints(&self) -> usize {
        self.dims[0]
    }

    pub fn frames(&self) -> usize {
        self.dims[1]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    fn plane(&self) -> usize {
        self.dims[2] * self.dims[3]
    }

    /// One joint's frame as an `H×W` slice.
    pub fn frame(&self, joint: usize, frame: usize) -> &[f32] {
        let p = self.plane();
        &self.data[(joint * self.dims[1] + frame) * p..][..p]
    }

    pub fn frame_mut(&mut self, joint: usize, frame: usize) -> &mut [f32] {
        let p = self.plane();
        let f = self.dims[1];
        &mut self.data[(joint * f + frame) * p..][..p]
    }

    /// Copy of frames `range` for every joint.
    pub fn frame_range(&self, range: Range<usize>) -> Result<Self> {
        if range.is_empty() || range.end > self.frames() {
            return Err(VinetError::contract("frame range", format!("{range:?} outside 0..{}", self.frames())));
        }
        let p = self.plane();
        let mut data = Vec::with_capacity(self.joints() * range.len() * p);
        for j in 0..self.joints() {
            data.extend_from_slice(
                &self.data[(j * self.frames() + range.start) * p..(j * self.frames() + range.end) * p],
            );
        }
        Self::new([self.dims[0], range.len(), self.dims[2], self.dims[3]], data)
    }

    /// Joins volumes along the frame axis.
    pub fn concat_frames(parts: &[HeatmapVolume]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| VinetError::contract("concat_frames", "no parts"))?;
        let [j, _, h, w] = first.dims;
        if parts.iter().any(|p| p.dims[0] != j || p.dims[2] != h || p.dims[3] != w) {
            return Err(VinetError::contract("concat_frames", "joint or spatial dims differ"));
        }
        let frames: usize = parts.iter().map(HeatmapVolume::frames).sum();
        let p = h * w;
        let mut data = Vec::with_capacity(j * frames * p);
        for joint in 0..j {
            for part in parts {
                data.extend_from_slice(&part.data[joint * part.frames() * p..(joint + 1) * part.frames() * p]);
            }
        }
        Self::new([j, frames, h, w], data)
    }

    /// Double-precision tensor `[J, F, H, W]`.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(self.dims.to_vec(), self.data.iter().map(|&v| f64::from(v)).collect())
            .expect("dims checked at construction")
    }
}

/// One manifest row: where a video lives and what it shows.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleMeta {
    pub path: String,
    pub subject_id: u32,
    pub view_id: u32,
    pub score: usize,
    pub action_tag: String,
}

impl SampleMeta {
    /// File stem of the path, used as the sample id in reports.
    pub fn id(&self) -> String {
        Path::new(&self.path).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| self.path.clone())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MovementSample {
    pub meta: SampleMeta,
    pub heatmaps: HeatmapVolume,
}

impl MovementSample {
    pub fn frames(&self) -> usize {
        self.heatmaps.frames()
    }

    pub fn validate(&self, action: &ActionConfig) -> Result<()> {
        if self.meta.score > action.max_score {
            return Err(VinetError::contract(
                "movement sample",
                format!("score {} exceeds max {}", self.meta.score, action.max_score),
            ));
        }
        if self.frames() < action.clip_len {
            return Err(VinetError::SequenceTooShort { frames: self.frames(), clip_len: action.clip_len });
        }
        if self.heatmaps.data.iter().any(|v| !(*v >= 0.0)) {
            return Err(VinetError::contract("movement sample", "heatmap values must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Dataset index stored next to the heatmap files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub action: ActionConfig,
    pub samples: Vec<SampleMeta>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| VinetError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| VinetError::io(path, e))
    }
}

/// Frame ranges of the non-overlapping clips of a `frames`-long video;
/// trailing frames that do not fill a clip are dropped.
pub fn clip_ranges(frames: usize, clip_len: usize) -> Result<Vec<Range<usize>>> {
    if clip_len == 0 {
        return Err(VinetError::contract("split_clips", "clip length must be positive"));
    }
    if frames < clip_len {
        return Err(VinetError::SequenceTooShort { frames, clip_len });
    }
    Ok((0..frames / clip_len).map(|m| m * clip_len..(m + 1) * clip_len).collect())
}

pub fn split_clips(sample: &MovementSample, clip_len: usize) -> Result<Vec<HeatmapVolume>> {
    clip_ranges(sample.frames(), clip_len)?.into_iter().map(|r| sample.heatmaps.frame_range(r)).collect()
}

/// Granularity of the intensity rescale.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// One scale for the whole clip.
    #[default]
    Clip,
    /// One scale per joint.
    Joint,
}

fn rescale(values: &mut [f64]) {
    let max = values.iter().copied().fold(0.0, f64::max);
    if max == 0.0 || max == MAX_INTENSITY {
        return;
    }
    values.iter_mut().for_each(|v| *v = *v / max * MAX_INTENSITY);
}

/// Rescales a `[J, T, H, W]` clip so its maximum is 255 and zero stays zero.
/// All-zero blocks pass through. Applying it twice changes nothing.
pub fn normalize_clip(clip: Tensor, mode: Normalization) -> Result<Tensor> {
    if clip.ndim() != 4 {
        return Err(VinetError::contract("normalize_clip", format!("expected [J, T, H, W], got {:?}", clip.shape())));
    }
    if let Some(v) = clip.data().iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(VinetError::contract(
            "normalize_clip",
            format!("values must be finite and non-negative, found {v}"),
        ));
    }
    let joints = clip.shape()[0];
    let mut clip = clip;
    match mode {
        Normalization::Clip => rescale(clip.data_mut()),
        Normalization::Joint => {
            let per = clip.numel() / joints;
            clip.data_mut().chunks_mut(per).for_each(rescale);
        }
    }
    Ok(clip)
}

/// A network input clip with its provenance.
#[derive(Clone, Debug)]
pub struct HeatmapClip {
    /// `[J, T, H, W]`, normalized.
    pub data: Tensor,
    pub sample: usize,
    /// 1-based position within its video.
    pub index: usize,
}

/// Anything that can serve frame ranges of indexed videos.
pub trait SampleSource: Sync {
    fn samples(&self) -> &[SampleMeta];

    fn frame_count(&self, index: usize) -> usize;

    /// `(joints, height, width)` shared by every sample.
    fn dims(&self) -> (usize, usize, usize);

    fn read_frames(&self, index: usize, start: usize, len: usize) -> Result<HeatmapVolume>;

    fn len(&self) -> usize {
        self.samples().len()
    }

    fn is_empty(&self) -> bool {
        self.samples().is_empty()
    }
}

/// A contiguous frame range of one source video. Original videos cover all
/// frames; temporal crops cover a sub-range.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VideoRef {
    pub sample: usize,
    pub start: usize,
    pub frames: usize,
}

impl VideoRef {
    pub fn whole(source: &dyn SampleSource, sample: usize) -> Self {
        VideoRef { sample, start: 0, frames: source.frame_count(sample) }
    }

    pub fn clip_count(&self, clip_len: usize) -> usize {
        self.frames / clip_len
    }

    /// Clip `m` (0-based), normalized, as `[J, T, H, W]`.
    pub fn load_clip(
        &self,
        source: &dyn SampleSource,
        m: usize,
        clip_len: usize,
        mode: Normalization,
    ) -> Result<HeatmapClip> {
        let ranges = clip_ranges(self.frames, clip_len)?;
        let range =
            ranges.get(m).ok_or_else(|| VinetError::contract("load_clip", format!("clip {m} of {}", ranges.len())))?;
        let raw = source.read_frames(self.sample, self.start + range.start, clip_len)?;
        Ok(HeatmapClip { data: normalize_clip(raw.to_tensor(), mode)?, sample: self.sample, index: m + 1 })
    }
}

/// Samples held fully in memory.
#[derive(Clone, Debug, Default)]
pub struct InMemorySource {
    metas: Vec<SampleMeta>,
    samples: Vec<MovementSample>,
}

impl InMemorySource {
    pub fn new(samples: Vec<MovementSample>) -> Result<Self> {
        if let Some(first) = samples.first() {
            let [j, _, h, w] = first.heatmaps.dims();
            if samples.iter().any(|s| {
                let d = s.heatmaps.dims();
                d[0] != j || d[2] != h || d[3] != w
            }) {
                return Err(VinetError::Config("samples disagree on joint count or resolution".into()));
            }
        }
        Ok(InMemorySource { metas: samples.iter().map(|s| s.meta.clone()).collect(), samples })
    }

    pub fn sample(&self, index: usize) -> &MovementSample {
        &self.samples[index]
    }
}

impl SampleSource for InMemorySource {
    fn samples(&self) -> &[SampleMeta] {
        &self.metas
    }

    fn frame_count(&self, index: usize) -> usize {
        self.samples[index].frames()
    }

    fn dims(&self) -> (usize, usize, usize) {
        self.samples.first().map_or((0, 0, 0), |s| {
            let [j, _, h, w] = s.heatmaps.dims();
            (j, h, w)
        })
    }

    fn read_frames(&self, index: usize, start: usize, len: usize) -> Result<HeatmapVolume> {
        self.samples[index].heatmaps.frame_range(start..start + len)
    }
}

/// A dataset directory: a manifest plus one heatmap file per video. Frames
/// are read from disk on demand.
#[derive(Clone, Debug)]
pub struct DiskDataset {
    root: PathBuf,
    manifest: Manifest,
    headers: Vec<VolumeHeader>,
}

impl DiskDataset {
    /// Opens `dir/manifest.json` and validates every file header.
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest = Manifest::load(&dir.join(MANIFEST_FILE))?;
        manifest.action.validate()?;
        if manifest.samples.is_empty() {
            return Err(VinetError::Config(format!("{}: manifest lists no samples", dir.display())));
        }
        let headers = manifest.samples.iter().map(|s| read_header(&dir.join(&s.path))).collect::<Result<Vec<_>>>()?;
        let h0 = headers[0];
        for (meta, h) in manifest.samples.iter().zip(&headers) {
            if (h.joints, h.height, h.width) != (h0.joints, h0.height, h0.width) {
                return Err(VinetError::Config(format!(
                    "{}: dims {}×{}×{} differ from {}×{}×{}",
                    meta.path, h.joints, h.height, h.width, h0.joints, h0.height, h0.width
                )));
            }
            if meta.score > manifest.action.max_score {
                return Err(VinetError::Config(format!(
                    "{}: score {} exceeds max {}",
                    meta.path, meta.score, manifest.action.max_score
                )));
            }
        }
        Ok(DiskDataset { root: dir.to_path_buf(), manifest, headers })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn load_sample(&self, index: usize) -> Result<MovementSample> {
        let meta = self.manifest.samples[index].clone();
        let heatmaps = load_sequence(&self.root.join(&meta.path))?;
        Ok(MovementSample { meta, heatmaps })
    }
}

impl SampleSource for DiskDataset {
    fn samples(&self) -> &[SampleMeta] {
        &self.manifest.samples
    }

    fn frame_count(&self, index: usize) -> usize {
        self.headers[index].frames
    }

    fn dims(&self) -> (usize, usize, usize) {
        let h = self.headers[0];
        (h.joints, h.height, h.width)
    }

    fn read_frames(&self, index: usize, start: usize, len: usize) -> Result<HeatmapVolume> {
        read_frames(&self.root.join(&self.manifest.samples[index].path), start, len)
    }
}
