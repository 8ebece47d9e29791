//! Temporal cropping to even out per-score counts on the training side.

use std::collections::BTreeMap;
use std::ops::Range;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::{MovementSample, SampleSource, VideoRef};
use crate::error::Result;
use crate::seed::{child_rng, rng};

/// A random contiguous range of length in `clip_len..frames`. `None` when the
/// video has no frames to spare.
pub fn crop_range(frames: usize, clip_len: usize, rng: &mut ChaCha8Rng) -> Option<Range<usize>> {
    if frames <= clip_len {
        return None;
    }
    let len = rng.gen_range(clip_len..frames);
    let start = rng.gen_range(0..=frames - len);
    Some(start..start + len)
}

/// `count` temporal crops of `sample`, each keeping its metadata.
pub fn augment_temporal_crop(
    sample: &MovementSample,
    count: usize,
    clip_len: usize,
    seed: u64,
) -> Result<Vec<MovementSample>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    if sample.frames() <= clip_len {
        log::warn!("{}: {} frames leave nothing to crop at clip length {clip_len}", sample.meta.path, sample.frames());
        return Ok(Vec::new());
    }
    let mut r = rng(seed);
    (0..count)
        .map(|_| {
            let range = crop_range(sample.frames(), clip_len, &mut r).expect("frames > clip_len");
            Ok(MovementSample { meta: sample.meta.clone(), heatmaps: sample.heatmaps.frame_range(range)? })
        })
        .collect()
}

/// Extra samples needed per score so every score reaches the majority count.
pub fn balance_plan(counts: &BTreeMap<usize, usize>) -> BTreeMap<usize, usize> {
    let target = counts.values().copied().max().unwrap_or(0);
    counts.iter().filter(|(_, &c)| c < target).map(|(&s, &c)| (s, target - c)).collect()
}

/// Crops that balance the scores of `train`, drawn round-robin over each
/// minority score's videos.
pub fn balancing_crops(source: &dyn SampleSource, train: &[usize], clip_len: usize, seed: u64) -> Vec<VideoRef> {
    let mut by_score: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &i in train {
        by_score.entry(source.samples()[i].score).or_default().push(i);
    }
    let counts = by_score.iter().map(|(&s, v)| (s, v.len())).collect();
    let mut out = Vec::new();
    for (score, needed) in balance_plan(&counts) {
        let pool: Vec<usize> = by_score[&score].iter().copied().filter(|&i| source.frame_count(i) > clip_len).collect();
        if pool.is_empty() {
            log::warn!("score {score}: no video longer than {clip_len} frames, cannot add {needed} crops");
            continue;
        }
        let mut r = child_rng(seed, &[score as u64]);
        for k in 0..needed {
            let sample = pool[k % pool.len()];
            let range = crop_range(source.frame_count(sample), clip_len, &mut r).expect("pool filtered");
            out.push(VideoRef { sample, start: range.start, frames: range.len() });
        }
    }
    out
}
