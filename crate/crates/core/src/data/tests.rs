use std::fs;
use std::io::Write;

use proptest::prelude::*;

use super::format::HEADER_LEN;
use super::*;

fn ramp_volume(dims: [usize; 4]) -> HeatmapVolume {
    let n: usize = dims.iter().product();
    HeatmapVolume::new(dims, (0..n).map(|i| i as f32 * 0.25).collect()).unwrap()
}

fn sample_with_frames(frames: usize) -> MovementSample {
    MovementSample {
        meta: SampleMeta { path: "a.vihm".into(), subject_id: 1, view_id: 2, score: 3, action_tag: "walk".into() },
        heatmaps: ramp_volume([2, frames, 3, 4]),
    }
}

fn header_bytes(words: [u32; 5]) -> Vec<u8> {
    let mut b = b"VIHM".to_vec();
    for w in words {
        b.extend_from_slice(&w.to_le_bytes());
    }
    b
}

#[test]
fn hundred_frames_give_six_clips() {
    let ranges = clip_ranges(100, 16).unwrap();
    assert_eq!(ranges.len(), 6);
    assert_eq!(ranges.last().unwrap().end, 96);
    let clips = split_clips(&sample_with_frames(100), 16).unwrap();
    assert_eq!(clips.len(), 6);
    assert!(clips.iter().all(|c| c.dims() == [2, 16, 3, 4]));
}

#[test]
fn exact_length_is_one_clip() {
    let s = sample_with_frames(16);
    let clips = split_clips(&s, 16).unwrap();
    assert_eq!(clips.len(), 1);
    assert_eq!(clips[0], s.heatmaps);
}

#[test]
fn too_short_sequence_is_rejected() {
    let err = split_clips(&sample_with_frames(15), 16).unwrap_err();
    assert!(matches!(err, VinetError::SequenceTooShort { frames: 15, clip_len: 16 }));
}

#[test]
fn sample_validation() {
    let action = ActionConfig::default();
    sample_with_frames(20).validate(&action).unwrap();
    let mut s = sample_with_frames(20);
    s.meta.score = 5;
    assert!(s.validate(&action).is_err());
    let mut s = sample_with_frames(20);
    s.heatmaps.data_mut()[3] = -1.0;
    assert!(s.validate(&action).is_err());
    assert!(sample_with_frames(10).validate(&action).is_err());
}

#[test]
fn linear_rescale_to_full_range() {
    let clip = Tensor::new(vec![1, 1, 1, 3], vec![0.0, 0.5, 1.0]).unwrap();
    let out = normalize_clip(clip, Normalization::Clip).unwrap();
    assert_eq!(out.data(), &[0.0, 127.5, 255.0]);
}

#[test]
fn zero_and_full_range_clips_are_fixed_points() {
    let zeros = Tensor::zeros(&[2, 2, 2, 2]);
    assert_eq!(normalize_clip(zeros.clone(), Normalization::Clip).unwrap(), zeros);
    let full = Tensor::new(vec![1, 1, 2, 2], vec![0.0, 10.0, 255.0, 3.5]).unwrap();
    assert_eq!(normalize_clip(full.clone(), Normalization::Clip).unwrap(), full);
}

#[test]
fn negative_values_are_rejected() {
    let clip = Tensor::new(vec![1, 1, 1, 2], vec![1.0, -0.1]).unwrap();
    assert!(normalize_clip(clip, Normalization::Clip).is_err());
}

#[test]
fn per_joint_mode_scales_each_joint() {
    let clip = Tensor::new(vec![2, 1, 1, 2], vec![1.0, 2.0, 0.0, 4.0]).unwrap();
    let out = normalize_clip(clip.clone(), Normalization::Joint).unwrap();
    assert_eq!(out.data(), &[127.5, 255.0, 0.0, 255.0]);
    let out = normalize_clip(clip, Normalization::Clip).unwrap();
    assert_eq!(out.data(), &[63.75, 127.5, 0.0, 255.0]);
}

#[test]
fn save_load_and_seek_read() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.vihm");
    let vol = ramp_volume([3, 10, 4, 5]);
    save_sequence(&path, &vol).unwrap();
    assert_eq!(fs::metadata(&path).unwrap().len(), HEADER_LEN + 3 * 10 * 4 * 5 * 4);
    assert_eq!(load_sequence(&path).unwrap(), vol);
    assert_eq!(read_frames(&path, 4, 3).unwrap(), vol.frame_range(4..7).unwrap());
    assert!(read_frames(&path, 8, 3).is_err());
}

#[test]
fn wrong_magic_is_a_format_error_at_offset_zero() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.vihm");
    let mut bytes = header_bytes([1, 1, 1, 1, 1]);
    bytes[..4].copy_from_slice(b"VIHX");
    bytes.extend_from_slice(&1f32.to_le_bytes());
    fs::write(&path, bytes).unwrap();
    let err = load_sequence(&path).unwrap_err();
    assert!(matches!(err, VinetError::Format { offset: 0, .. }), "{err}");
}

#[test]
fn header_errors_are_positioned() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("h.vihm");
    fs::write(&path, header_bytes([2, 1, 1, 1, 1])).unwrap();
    assert!(matches!(read_header(&path).unwrap_err(), VinetError::Format { offset: 4, .. }));
    fs::write(&path, header_bytes([1, 1, 0, 1, 1])).unwrap();
    assert!(matches!(read_header(&path).unwrap_err(), VinetError::Format { offset: 12, .. }));
    fs::write(&path, &header_bytes([1, 1, 1, 1, 1])[..10]).unwrap();
    assert!(matches!(read_header(&path).unwrap_err(), VinetError::Format { offset: 10, .. }));
}

#[test]
fn payload_length_follows_header_arithmetic() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.vihm");
    let values: u64 = 15 * 62 * 64 * 64;
    assert_eq!(values, 3_809_280);

    let mut f = fs::File::create(&path).unwrap();
    f.write_all(&header_bytes([1, 15, 62, 64, 64])).unwrap();
    f.write_all(&vec![0u8; (values * 4 - 4) as usize]).unwrap();
    drop(f);
    let err = read_header(&path).unwrap_err();
    assert!(matches!(err, VinetError::Format { offset, .. } if offset == HEADER_LEN + values * 4 - 4), "{err}");

    fs::OpenOptions::new().append(true).open(&path).unwrap().write_all(&[0u8; 4]).unwrap();
    let h = read_header(&path).unwrap();
    assert_eq!((h.joints, h.frames, h.height, h.width), (15, 62, 64, 64));

    fs::OpenOptions::new().append(true).open(&path).unwrap().write_all(&[0u8; 1]).unwrap();
    let err = read_header(&path).unwrap_err();
    assert!(matches!(err, VinetError::Format { offset, .. } if offset == HEADER_LEN + values * 4));
}

#[test]
fn disk_dataset_serves_frames() {
    let dir = tempfile::tempdir().unwrap();
    let mut samples = Vec::new();
    for i in 0..3u32 {
        let mut s = sample_with_frames(20 + i as usize);
        s.meta.path = format!("s{i}.vihm");
        s.meta.score = i as usize;
        save_sequence(&dir.path().join(&s.meta.path), &s.heatmaps).unwrap();
        samples.push(s);
    }
    let manifest =
        Manifest { action: ActionConfig::default(), samples: samples.iter().map(|s| s.meta.clone()).collect() };
    manifest.save(&dir.path().join(MANIFEST_FILE)).unwrap();

    let ds = DiskDataset::open(dir.path()).unwrap();
    let mem = InMemorySource::new(samples).unwrap();
    assert_eq!(ds.len(), 3);
    assert_eq!(ds.dims(), (2, 3, 4));
    assert_eq!(ds.frame_count(2), 22);
    assert_eq!(ds.read_frames(1, 3, 16).unwrap(), mem.read_frames(1, 3, 16).unwrap());
    assert_eq!(ds.load_sample(0).unwrap(), *mem.sample(0));

    let v = VideoRef { sample: 2, start: 3, frames: 19 };
    assert_eq!(v.clip_count(16), 1);
    let clip = v.load_clip(&ds, 0, 16, Normalization::Clip).unwrap();
    assert_eq!(clip.index, 1);
    let expected = normalize_clip(mem.read_frames(2, 3, 16).unwrap().to_tensor(), Normalization::Clip).unwrap();
    assert_eq!(clip.data, expected);
    assert!(v.load_clip(&ds, 1, 16, Normalization::Clip).is_err());
}

#[test]
fn manifest_rejects_unknown_keys() {
    let text = r#"{"action":{"name":"walk","max_score":4},"samples":[],"extra":1}"#;
    assert!(serde_json::from_str::<Manifest>(text).is_err());
    let text = r#"{"action":{"name":"walk","max_score":4},"samples":[]}"#;
    let m: Manifest = serde_json::from_str(text).unwrap();
    assert_eq!(m.action.clip_len, 16);
}

#[test]
fn sample_id_is_file_stem() {
    assert_eq!(sample_with_frames(16).meta.id(), "a");
}

fn volume_strategy() -> impl Strategy<Value = HeatmapVolume> {
    (1usize..4, 1usize..6, 1usize..5, 1usize..5).prop_flat_map(|(j, f, h, w)| {
        prop::collection::vec(any::<u32>(), j * f * h * w).prop_map(move |bits| {
            HeatmapVolume::new([j, f, h, w], bits.into_iter().map(f32::from_bits).collect()).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn round_trip_preserves_every_bit(vol in volume_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.vihm");
        save_sequence(&path, &vol).unwrap();
        let back = load_sequence(&path).unwrap();
        prop_assert_eq!(back.dims(), vol.dims());
        let a: Vec<u32> = vol.data().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = back.data().iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn split_then_concat_reproduces_prefix(frames in 1usize..60, clip_len in 1usize..20) {
        prop_assume!(frames >= clip_len);
        let s = sample_with_frames(frames);
        let clips = split_clips(&s, clip_len).unwrap();
        let m = frames / clip_len;
        prop_assert_eq!(clips.len(), m);
        let joined = HeatmapVolume::concat_frames(&clips).unwrap();
        prop_assert_eq!(joined, s.heatmaps.frame_range(0..m * clip_len).unwrap());
    }

    #[test]
    fn normalization_is_idempotent(values in prop::collection::vec(0.0f64..1e3, 8), per_joint in any::<bool>()) {
        let mode = if per_joint { Normalization::Joint } else { Normalization::Clip };
        let clip = Tensor::new(vec![2, 1, 2, 2], values).unwrap();
        let once = normalize_clip(clip, mode).unwrap();
        prop_assert!(once.data().iter().all(|v| (0.0..=255.0).contains(v)));
        let twice = normalize_clip(once.clone(), mode).unwrap();
        prop_assert_eq!(once, twice);
    }
}
