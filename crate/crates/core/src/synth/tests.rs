use std::f64::consts::PI;

use proptest::prelude::*;

use super::*;
use crate::data::{DiskDataset, SampleSource};

fn small_spec() -> DatasetSpec {
    DatasetSpec {
        subjects: 10,
        views: 3,
        repetitions: 1,
        min_frames: 16,
        max_frames: 20,
        height: 16,
        width: 16,
        sigma: 1.0,
        seed: 11,
        ..DatasetSpec::default()
    }
}

#[test]
fn score_zero_is_the_nominal_pattern() {
    for family in [MotionFamily::Walk, MotionFamily::SitStand] {
        let m = generate_canonical_motion(family, 0, 4, 3, 40).unwrap();
        assert_eq!(m.deviation(), 0.0);
        assert_eq!(m.trajectories.len(), JOINTS);
        assert!(m.trajectories.iter().all(|t| t.len() == 40));
    }
}

#[test]
fn worst_score_deviates_most() {
    for family in [MotionFamily::Walk, MotionFamily::SitStand] {
        let one = generate_canonical_motion(family, 1, 4, 9, 64).unwrap();
        let worst = generate_canonical_motion(family, 4, 4, 9, 64).unwrap();
        assert!(worst.deviation() > one.deviation());
        assert!(one.deviation() > 0.0);
    }
}

#[test]
fn mean_deviation_grows_with_score() {
    for family in [MotionFamily::Walk, MotionFamily::SitStand] {
        let mean: Vec<f64> = (0..=4)
            .map(|q| {
                (0..100u64)
                    .map(|seed| {
                        let m = generate_canonical_motion(family, q, 4, seed, 48).unwrap();
                        let nominal = generate_canonical_motion(family, 0, 4, seed, 48).unwrap();
                        mean_distance(&m, &nominal)
                    })
                    .sum::<f64>()
                    / 100.0
            })
            .collect();
        assert!(mean.windows(2).all(|w| w[1] > w[0]), "{family:?}: {mean:?}");
    }
}

#[test]
fn score_above_max_is_rejected() {
    assert!(generate_canonical_motion(MotionFamily::Walk, 5, 4, 0, 20).is_err());
    assert!(generate_canonical_motion(MotionFamily::Walk, 0, 0, 0, 20).is_err());
}

#[test]
fn motion_stays_in_unit_square() {
    for seed in 0..20 {
        for family in [MotionFamily::Walk, MotionFamily::SitStand] {
            let m = generate_canonical_motion(family, 4, 4, seed, 128).unwrap();
            for p in m.trajectories.iter().flatten() {
                assert!((0.05..0.95).contains(&p[0]) && (0.05..0.95).contains(&p[1]), "{family:?} {p:?}");
            }
        }
    }
}

#[test]
fn identity_view_leaves_trajectories_unchanged() {
    let m = generate_canonical_motion(MotionFamily::Walk, 2, 4, 1, 20).unwrap();
    assert_eq!(apply_view_transform(&m, &ViewTransform::identity(1)).unwrap(), m.trajectories);
}

#[test]
fn half_scale_halves_pairwise_distances() {
    let m = generate_canonical_motion(MotionFamily::Walk, 2, 4, 1, 20).unwrap();
    let v = ViewTransform::new(1, [[0.5, 0.0], [0.0, 0.5]], [0.1, -0.2]).unwrap();
    let out = apply_view_transform(&m, &v).unwrap();
    let dist = |a: Point, b: Point| (a[0] - b[0]).hypot(a[1] - b[1]);
    for t in 0..20 {
        for a in 0..JOINTS {
            for b in 0..JOINTS {
                let d0 = dist(m.trajectories[a][t], m.trajectories[b][t]);
                let d1 = dist(out[a][t], out[b][t]);
                assert!((d1 - 0.5 * d0).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn degenerate_views_are_rejected() {
    assert!(ViewTransform::new(1, [[1.0, 2.0], [0.5, 1.0]], [0.0, 0.0]).is_err());
    assert!(ViewTransform::new(1, [[-1.0, 0.0], [0.0, 1.0]], [0.0, 0.0]).is_err());
    assert!(ViewTransform::new(1, [[0.3, 0.0], [0.0, 0.3]], [0.0, 0.0]).is_err());
    let bad = ViewTransform { view_id: 1, matrix: [[0.0; 2]; 2], translation: [0.0; 2] };
    let m = generate_canonical_motion(MotionFamily::Walk, 0, 4, 1, 20).unwrap();
    assert!(apply_view_transform(&m, &bad).is_err());
}

#[test]
fn default_views_layout() {
    let views = default_views();
    assert_eq!(views.len(), 6);
    assert_eq!(views[1].matrix, [[1.0, 0.0], [0.0, 1.0]]);
    assert_eq!(views[1].translation, [0.0, 0.0]);
    for (i, v) in views.iter().enumerate() {
        assert_eq!(v.view_id, i as u32 + 1);
        assert!(v.determinant() > MIN_DETERMINANT);
        let c = v.apply([0.5, 0.5]);
        assert!((c[0] - 0.5).abs() < 1e-12 && (c[1] - 0.5).abs() < 1e-12);
    }
}

#[test]
fn centered_joint_peaks_at_center_pixel() {
    let vol = render_heatmaps(&[vec![[0.5, 0.5]]], 33, 33, 2.0).unwrap();
    let frame = vol.frame(0, 0);
    let (idx, max) = frame.iter().enumerate().fold((0, f32::MIN), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    assert_eq!(idx, 16 * 33 + 16);
    assert_eq!(max, 1.0);
}

#[test]
fn interior_mass_matches_gaussian_integral() {
    for sigma in [2.0, 2.5, 3.0] {
        // joint at an off-grid position at least 4σ from every border
        let vol = render_heatmaps(&[vec![[0.47, 0.53]]], 64, 64, sigma).unwrap();
        let mass: f64 = vol.data().iter().map(|&v| f64::from(v)).sum();
        let expected = 2.0 * PI * sigma * sigma;
        assert!((mass / expected - 1.0).abs() < 0.02, "σ={sigma}: {mass} vs {expected}");
    }
}

#[test]
fn joint_outside_raster_leaves_only_a_tail() {
    let vol = render_heatmaps(&[vec![[1.03, 0.5]]], 32, 32, 2.0).unwrap();
    let max = vol.data().iter().copied().fold(0.0f32, f32::max);
    assert!(max > 0.0 && max < 1.0);
    let far = render_heatmaps(&[vec![[3.0, 3.0]]], 32, 32, 2.0).unwrap();
    assert!(far.data().iter().all(|&v| v == 0.0));
    assert!(render_heatmaps(&[vec![[0.5, 0.5]]], 8, 8, 0.0).is_err());
}

#[test]
fn argmax_stays_near_projected_joint() {
    let corpus = SyntheticCorpus::new(DatasetSpec { subjects: 2, views: 6, ..small_spec() }).unwrap();
    let (h, w, sigma) = (16usize, 16usize, 1.0);
    for i in 0..corpus.len() {
        let traj = corpus.view_trajectories(i);
        let vol = corpus.render(i).unwrap();
        for (j, tj) in traj.iter().enumerate() {
            for (t, p) in tj.iter().enumerate() {
                let [px, py] = to_pixel(*p, h, w);
                let margin = 3.0 * sigma;
                if px < margin || py < margin || px > w as f64 - 1.0 - margin || py > h as f64 - 1.0 - margin {
                    continue;
                }
                let frame = vol.frame(j, t);
                let best = (0..frame.len()).fold(0, |b, k| if frame[k] > frame[b] { k } else { b });
                let (bx, by) = ((best % w) as f64, (best / w) as f64);
                assert!((bx - px).abs() <= 1.0 && (by - py).abs() <= 1.0);
            }
        }
    }
}

#[test]
fn small_spec_writes_150_files() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec();
    let manifest = generate_dataset(&spec, dir.path()).unwrap();
    assert_eq!(manifest.samples.len(), 150);
    let files = fs::read_dir(dir.path())
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "vihm"))
        .count();
    assert_eq!(files, 150);
    for q in 0..=4 {
        assert_eq!(manifest.samples.iter().filter(|s| s.score == q).count(), 30);
    }

    let ds = DiskDataset::open(dir.path()).unwrap();
    let lazy = SyntheticCorpus::new(spec).unwrap();
    assert_eq!(ds.samples(), lazy.samples());
    for i in [0, 37, 149] {
        assert_eq!(ds.load_sample(i).unwrap().heatmaps, lazy.render(i).unwrap());
    }
}

#[test]
fn generation_is_deterministic() {
    let spec = DatasetSpec { subjects: 2, views: 2, ..small_spec() };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate_dataset(&spec, a.path()).unwrap();
    generate_dataset(&spec, b.path()).unwrap();
    let mut names: Vec<_> = fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 2 * 5 * 2 + 2);
    for n in names {
        assert_eq!(fs::read(a.path().join(&n)).unwrap(), fs::read(b.path().join(&n)).unwrap(), "{n:?}");
    }
    let other = SyntheticCorpus::new(DatasetSpec { seed: 12, ..spec }).unwrap();
    assert_ne!(other.render(0).unwrap(), SyntheticCorpus::new(small_spec()).unwrap().render(0).unwrap());
}

#[test]
fn views_are_affine_images_of_each_other() {
    let dir = tempfile::tempdir().unwrap();
    let spec = DatasetSpec { subjects: 3, views: 6, ..small_spec() };
    generate_dataset(&spec, dir.path()).unwrap();
    let meta = GeneratorMetadata::load(&dir.path().join(GENERATOR_FILE)).unwrap();
    assert_eq!(meta.spec, spec);
    for rec in &meta.motions {
        for a in &meta.views {
            let pa = apply_view_transform(&rec.motion, a).unwrap();
            for b in &meta.views {
                let pb = apply_view_transform(&rec.motion, b).unwrap();
                for (ta, tb) in pa.iter().zip(&pb) {
                    for (p, q) in ta.iter().zip(tb) {
                        let mapped = b.apply(a.apply_inverse(*p));
                        assert!((mapped[0] - q[0]).abs() < 1e-12 && (mapped[1] - q[1]).abs() < 1e-12);
                    }
                }
            }
        }
    }
}

#[test]
fn deviation_is_monotone_within_each_subject() {
    let corpus = SyntheticCorpus::new(DatasetSpec { subjects: 6, views: 1, repetitions: 2, ..small_spec() }).unwrap();
    for subject in 1..=6 {
        for rep in 1..=2 {
            let devs: Vec<f64> = corpus
                .motions()
                .iter()
                .filter(|m| m.subject_id == subject && m.repetition == rep)
                .map(|m| m.motion.deviation())
                .collect();
            assert_eq!(devs.len(), 5);
            assert!(devs.windows(2).all(|w| w[1] >= w[0]), "{devs:?}");
        }
    }
}

#[test]
fn occlusion_blanks_frames() {
    let spec = DatasetSpec {
        subjects: 1,
        views: 1,
        occlusion: Some(OcclusionSpec { probability: 1.0, max_frames: 5 }),
        ..small_spec()
    };
    let corpus = SyntheticCorpus::new(spec).unwrap();
    let occ = corpus.occlusions(0).to_vec();
    assert_eq!(occ.len(), JOINTS);
    let vol = corpus.render(0).unwrap();
    for o in occ {
        for t in o.frames.clone() {
            assert!(vol.frame(o.joint, t).iter().all(|&v| v == 0.0));
        }
    }
    assert!(SyntheticCorpus::new(small_spec()).unwrap().occlusions(0).is_empty());
}

#[test]
fn spec_validation() {
    assert!(DatasetSpec { views: 7, ..small_spec() }.validate().is_err());
    assert!(DatasetSpec { subjects: 0, ..small_spec() }.validate().is_err());
    assert!(DatasetSpec { min_frames: 8, ..small_spec() }.validate().is_err());
    assert!(DatasetSpec { sigma: -1.0, ..small_spec() }.validate().is_err());
    assert!(serde_json::from_str::<DatasetSpec>(r#"{"subjects": 3, "colour": 1}"#).is_err());
    let spec: DatasetSpec = serde_json::from_str(r#"{"subjects": 3}"#).unwrap();
    assert_eq!(spec, DatasetSpec { subjects: 3, ..DatasetSpec::default() });
    assert_eq!(DatasetSpec::default().sample_count(), 600);
}

proptest! {
    #[test]
    fn inverse_transform_recovers_points(
        a in -2.0f64..2.0, b in -2.0f64..2.0, c in -2.0f64..2.0, d in -2.0f64..2.0,
        tx in -1.0f64..1.0, ty in -1.0f64..1.0, seed in 0u64..1000,
    ) {
        let view = ViewTransform { view_id: 1, matrix: [[a, b], [c, d]], translation: [tx, ty] };
        prop_assume!(view.determinant() > MIN_DETERMINANT);
        let m = generate_canonical_motion(MotionFamily::Walk, (seed % 5) as usize, 4, seed, 24).unwrap();
        let out = apply_view_transform(&m, &view).unwrap();
        for (orig, mapped) in m.trajectories.iter().zip(&out) {
            for (p, q) in orig.iter().zip(mapped) {
                let back = view.apply_inverse(*q);
                prop_assert!((back[0] - p[0]).abs() < 1e-10 && (back[1] - p[1]).abs() < 1e-10);
            }
        }
    }
}
