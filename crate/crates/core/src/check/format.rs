//! Heatmap file round trips and rejection of malformed headers.

use std::path::Path;

use rand::Rng;

use crate::data::format::{HEADER_LEN, MAGIC, VERSION};
use crate::data::{load_sequence, save_sequence, ActionConfig, HeatmapVolume, Manifest, MovementSample, SampleMeta};
use crate::error::{Result, VinetError};
use crate::seed::child_rng;

const FORMAT_SEED: u64 = 0x7669_686d;

/// Any bit pattern, with the special values over-represented.
fn random_f32(r: &mut impl Rng) -> f32 {
    match r.gen_range(0..10) {
        0 => [0.0, -0.0, f32::MIN_POSITIVE, f32::MAX, f32::INFINITY, f32::NAN, 255.0, 1e-42][r.gen_range(0..8)],
        1 => f32::from_bits(r.gen()),
        _ => r.gen_range(0.0..255.0),
    }
}

pub fn random_sample(index: usize, r: &mut impl Rng) -> MovementSample {
    let dims = [r.gen_range(1..5), r.gen_range(1..24), r.gen_range(1..10), r.gen_range(1..10)];
    let data = (0..dims.iter().product()).map(|_| random_f32(r)).collect();
    MovementSample {
        meta: SampleMeta {
            path: format!("rt_{index:03}.vihm"),
            subject_id: r.gen_range(1..50),
            view_id: r.gen_range(1..7),
            score: r.gen_range(0..5),
            action_tag: ["walk", "sit-stand", "x"][r.gen_range(0..3)].to_string(),
        },
        heatmaps: HeatmapVolume::new(dims, data).expect("dims match data"),
    }
}

/// Writes `count` random samples and a manifest under `dir`, reads them
/// back and returns the ids of samples that did not survive bit for bit.
pub fn round_trip(dir: &Path, count: usize) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir).map_err(|e| VinetError::Io { path: dir.to_path_buf(), source: e })?;
    let r = &mut child_rng(FORMAT_SEED, &[1]);
    let samples: Vec<MovementSample> = (0..count).map(|i| random_sample(i, r)).collect();
    for s in &samples {
        save_sequence(&dir.join(&s.meta.path), &s.heatmaps)?;
    }
    let manifest =
        Manifest { action: ActionConfig::default(), samples: samples.iter().map(|s| s.meta.clone()).collect() };
    let manifest_path = dir.join("round_trip.json");
    manifest.save(&manifest_path)?;
    let loaded = Manifest::load(&manifest_path)?;

    let mut broken = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let back = load_sequence(&dir.join(&s.meta.path))?;
        let bits = |v: &HeatmapVolume| v.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        if back.dims() != s.heatmaps.dims()
            || bits(&back) != bits(&s.heatmaps)
            || loaded.samples.get(i) != Some(&s.meta)
        {
            broken.push(s.meta.id());
        }
    }
    Ok(broken)
}

/// A malformed file, the byte offset its error must name, and the offset
/// actually reported (`None` when the file was accepted or failed otherwise).
#[derive(Clone, Debug, PartialEq)]
pub struct MalformedCase {
    pub name: String,
    pub expected: u64,
    pub reported: Option<u64>,
}

impl MalformedCase {
    pub fn passed(&self) -> bool {
        self.reported == Some(self.expected)
    }
}

fn valid_bytes(dims: [u32; 4]) -> Vec<u8> {
    let mut bytes = MAGIC.to_vec();
    bytes.extend(VERSION.to_le_bytes());
    for d in dims {
        bytes.extend(d.to_le_bytes());
    }
    let n: u32 = dims.iter().product();
    for i in 0..n {
        bytes.extend((i as f32).to_le_bytes());
    }
    bytes
}

pub fn malformed_headers(dir: &Path) -> Result<Vec<MalformedCase>> {
    std::fs::create_dir_all(dir).map_err(|e| VinetError::Io { path: dir.to_path_buf(), source: e })?;
    let good = valid_bytes([2, 3, 2, 2]);
    let mut cases: Vec<(String, Vec<u8>, u64)> = Vec::new();

    let mut b = good.clone();
    b[..4].copy_from_slice(b"VIHX");
    cases.push(("bad magic".into(), b, 0));
    let mut b = good.clone();
    b[4..8].copy_from_slice(&2u32.to_le_bytes());
    cases.push(("unsupported version".into(), b, 4));
    for (i, name) in ["joints", "frames", "height", "width"].iter().enumerate() {
        let mut b = good.clone();
        b[8 + 4 * i..12 + 4 * i].copy_from_slice(&0u32.to_le_bytes());
        cases.push((format!("zero {name}"), b, 8 + 4 * i as u64));
    }
    for len in [0, 3, 4, 7, 12, HEADER_LEN as usize - 1] {
        cases.push((format!("header cut at {len}"), good[..len].to_vec(), len as u64));
    }
    cases.push(("payload short by one byte".into(), good[..good.len() - 1].to_vec(), good.len() as u64 - 1));
    cases.push(("header only".into(), good[..HEADER_LEN as usize].to_vec(), HEADER_LEN));
    let mut b = good.clone();
    b.extend([0, 0, 0, 0, 7]);
    cases.push(("trailing bytes".into(), b, good.len() as u64));

    let mut out = Vec::new();
    for (k, (name, bytes, expected)) in cases.into_iter().enumerate() {
        let path = dir.join(format!("malformed_{k:02}.vihm"));
        std::fs::write(&path, &bytes).map_err(|e| VinetError::Io { path: path.clone(), source: e })?;
        let reported = match load_sequence(&path) {
            Err(VinetError::Format { offset, .. }) => Some(offset),
            _ => None,
        };
        out.push(MalformedCase { name, expected, reported });
    }
    Ok(out)
}
