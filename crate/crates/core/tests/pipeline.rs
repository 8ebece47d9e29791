use vinet::data::{DiskDataset, Normalization, SampleSource, VideoRef};
use vinet::synth::{generate_dataset, DatasetSpec, SyntheticCorpus};
use vinet::train::{make_splits, predict_videos, run_split, stack, train, ScoringRule, SplitKind, TrainConfig};
use vinet::ViNet;

fn small() -> DatasetSpec {
    DatasetSpec {
        subjects: 3,
        views: 3,
        min_frames: 16,
        max_frames: 40,
        height: 16,
        width: 16,
        seed: 7,
        ..DatasetSpec::default()
    }
}

fn quick(seed: u64) -> TrainConfig {
    TrainConfig { epochs: 2, seed, ..TrainConfig::default() }
}

#[test]
fn generated_files_match_the_renderer() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small();
    let manifest = generate_dataset(&spec, dir.path()).unwrap();
    let corpus = SyntheticCorpus::new(spec).unwrap();
    let disk = DiskDataset::open(dir.path()).unwrap();
    assert_eq!(manifest.samples.len(), corpus.len());
    assert_eq!(disk.samples(), corpus.samples());
    for i in 0..corpus.len() {
        let f = corpus.frame_count(i);
        let a = corpus.read_frames(i, 0, f).unwrap();
        let b = disk.read_frames(i, 0, f).unwrap();
        assert_eq!(a.dims(), b.dims());
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()), "sample {i}");
    }
}

#[test]
fn training_repeats_exactly_and_checkpoints_keep_predictions() {
    let corpus = SyntheticCorpus::new(small()).unwrap();
    let indices: Vec<usize> = (0..corpus.len()).collect();
    let a = train(&corpus, &indices, &quick(3)).unwrap();
    let b = train(&corpus, &indices, &quick(3)).unwrap();
    assert_eq!(a.epoch_losses.len(), 2);
    assert!(a.epoch_losses.iter().all(|l| l.is_finite()));
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.epoch_losses), bits(&b.epoch_losses));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.vick");
    a.model.save(&path, 2).unwrap();
    let (mut loaded, epoch) = ViNet::load(&path).unwrap();
    assert_eq!(epoch, 2);
    let mut original = a.model.clone();
    let clip = VideoRef::whole(&corpus, 0).load_clip(&corpus, 0, 16, Normalization::Clip).unwrap();
    let x = stack(vec![clip.data]).unwrap();
    assert_eq!(original.predict(x.clone()).unwrap(), loaded.predict(x).unwrap());

    let videos: Vec<VideoRef> = indices.iter().map(|&i| VideoRef::whole(&corpus, i)).collect();
    let p = predict_videos(&original, &corpus, &videos, ScoringRule::MeanLogits, Normalization::Clip).unwrap();
    let q = predict_videos(&loaded, &corpus, &videos, ScoringRule::MeanLogits, Normalization::Clip).unwrap();
    assert_eq!(p.iter().map(|r| r.0).collect::<Vec<_>>(), q.iter().map(|r| r.0).collect::<Vec<_>>());
}

#[test]
fn cross_view_run_reports_every_held_out_view() {
    let corpus = SyntheticCorpus::new(small()).unwrap();
    let plans = make_splits(corpus.samples(), &SplitKind::CrossView { train_views: vec![2] }).unwrap();
    assert_eq!(plans.len(), 1);
    assert_eq!(plans[0].test_views, vec![1, 3]);
    let out = run_split(&corpus, &plans[0], &TrainConfig { epochs: 1, ..TrainConfig::default() }).unwrap();
    assert_eq!(out.report.rows.len(), plans[0].test.len());
    for v in [1, 3] {
        assert!(out.report.for_view(v).unwrap().rho.is_finite());
    }
    assert!(out.report.for_view(2).is_err());
}
