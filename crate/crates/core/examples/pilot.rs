//! Trains and tests one split plan on a synthetic corpus.
//!
//! `SIZE=32 EPOCHS=20 SPLIT=2 STN=0 cargo run --release --example pilot`
//! trains on view 2 without the transformer. `SPLIT=cs` (the default) runs
//! fold 0 of five-fold cross-subject.

use std::time::Instant;

use vinet::data::SampleSource;
use vinet::synth::{DatasetSpec, SyntheticCorpus};
use vinet::train::{make_splits, run_split, SplitKind, TrainConfig};

fn arg(name: &str, default: &str) -> String {
    std::env::var(name).unwrap_or_else(|_| default.to_string())
}

fn main() {
    let size: usize = arg("SIZE", "32").parse().unwrap();
    let spec = DatasetSpec {
        subjects: arg("SUBJECTS", "20").parse().unwrap(),
        views: 6,
        min_frames: arg("MINF", "64").parse().unwrap(),
        max_frames: arg("MAXF", "128").parse().unwrap(),
        height: size,
        width: size,
        sigma: arg("SIGMA", "2").parse().unwrap(),
        seed: arg("DSEED", "0").parse().unwrap(),
        ..DatasetSpec::default()
    };
    let corpus = SyntheticCorpus::new(spec).unwrap();
    let config = TrainConfig {
        epochs: arg("EPOCHS", "20").parse().unwrap(),
        seed: arg("SEED", "0").parse().unwrap(),
        stn_enabled: arg("STN", "1") == "1",
        lr: arg("LR", "0.001").parse().unwrap(),
        ..TrainConfig::default()
    };
    let kind = match arg("SPLIT", "cs").as_str() {
        "cs" => SplitKind::CrossSubject { folds: 5 },
        v => SplitKind::CrossView { train_views: v.split(',').map(|x| x.parse().unwrap()).collect() },
    };
    let plans = make_splits(corpus.samples(), &kind).unwrap();
    let t = Instant::now();
    let out = run_split(&corpus, &plans[0], &config).unwrap();
    let losses: Vec<String> = out.epoch_losses.iter().map(|l| format!("{l:.3}")).collect();
    println!("losses {}", losses.join(" "));
    for v in &plans[0].test_views {
        println!("view {v}: rho {:.3}", out.report.for_view(*v).map(|r| r.rho).unwrap_or(f64::NAN));
    }
    println!(
        "rho {:.4} train {} test {} in {:.0}s",
        out.report.rho,
        plans[0].train.len(),
        plans[0].test.len(),
        t.elapsed().as_secs_f64()
    );
}
