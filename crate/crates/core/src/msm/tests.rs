use rand::Rng;

use super::*;
use crate::seed::rng;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng(seed);
    Tensor::from_fn(shape, |_| r.gen_range(-1.0..1.0))
}

fn build(config: ScorerConfig, seed: u64) -> (ParamStore, Scorer) {
    let mut store = ParamStore::new();
    let scorer = Scorer::new(&mut store, config, &mut rng(seed)).unwrap();
    (store, scorer)
}

#[test]
fn head_emits_s_plus_one_logits() {
    for style in [BackboneStyle::Tiny, BackboneStyle::VggLike, BackboneStyle::ResnextLike] {
        let (mut store, scorer) = build(ScorerConfig::for_style(style, 15, 4), 1);
        let mut g = Graph::no_grad();
        let x = g.input(random(&[1, 15, 32, 32], 2));
        let y = scorer.forward(&mut g, &mut store, x, BatchNormMode::Train).unwrap();
        assert_eq!(g.shape(y), &[1, 5], "{style:?}");
    }
}

#[test]
fn tiny_on_full_size_input() {
    let (mut store, scorer) = build(ScorerConfig::tiny(15, 4), 1);
    let mut g = Graph::no_grad();
    let x = g.input(random(&[1, 15, 64, 64], 2));
    let y = scorer.forward(&mut g, &mut store, x, BatchNormMode::Eval).unwrap();
    assert_eq!(g.shape(y), &[1, 5]);
}

#[test]
fn same_seed_same_parameters() {
    let (a, _) = build(ScorerConfig::tiny(15, 4), 7);
    let (b, _) = build(ScorerConfig::tiny(15, 4), 7);
    let (c, _) = build(ScorerConfig::tiny(15, 4), 8);
    let values = |s: &ParamStore| s.iter().map(|p| p.value.clone()).collect::<Vec<_>>();
    assert_eq!(values(&a), values(&b));
    assert_ne!(values(&a), values(&c));
}

#[test]
fn first_layer_takes_joint_channels() {
    let (store, scorer) = build(ScorerConfig::vgg_like(15, 4), 1);
    assert_eq!(store.get(scorer.first_layer_weight()).value.shape(), &[64, 15, 3, 3]);
    let (store, scorer) = build(ScorerConfig::resnext_like(15, 12), 1);
    assert_eq!(store.get(scorer.first_layer_weight()).value.shape(), &[64, 15, 7, 7]);
}

#[test]
fn tiny_layer_shapes() {
    let (_, scorer) = build(ScorerConfig::tiny(15, 4), 1);
    let shapes = scorer.layer_shapes(64, 64).unwrap();
    // 3×3 same convs keep size, each 2×2 pool halves it: 64 -> 32 -> 16 -> 8
    let expect: Vec<(&str, Vec<usize>)> = vec![
        ("msm.stem.conv", vec![16, 64, 64]),
        ("pool0", vec![16, 32, 32]),
        ("msm.stage0.conv0", vec![32, 32, 32]),
        ("pool1", vec![32, 16, 16]),
        ("msm.stage1.conv0", vec![32, 16, 16]),
        ("pool2", vec![32, 8, 8]),
        ("gap", vec![32]),
        ("head", vec![5]),
    ];
    let got: Vec<(&str, Vec<usize>)> = shapes.iter().map(|s| (s.layer.as_str(), s.shape.clone())).collect();
    assert_eq!(got, expect);
}

#[test]
fn resnext_layer_shapes() {
    let (_, scorer) = build(ScorerConfig::resnext_like(15, 4), 1);
    let shapes = scorer.layer_shapes(64, 64).unwrap();
    // (64 + 6 - 7) / 2 + 1 = 32; (32 - 3) / 2 + 1 = 15; stride-2 stage: (15 + 2 - 3) / 2 + 1 = 8
    assert_eq!(shapes[0].shape, vec![64, 32, 32]);
    assert_eq!(shapes[1].shape, vec![64, 15, 15]);
    assert_eq!(shapes[2].shape, vec![64, 15, 15]);
    assert_eq!(shapes[3].shape, vec![128, 8, 8]);
}

#[test]
fn grouped_resnext_runs() {
    let mut config = ScorerConfig::resnext_like(15, 4);
    config.groups = 4;
    let (mut store, scorer) = build(config, 3);
    assert_eq!(store.get(store.id("msm.stage0.conv0.weight").unwrap()).value.shape(), &[64, 16, 3, 3]);
    let mut g = Graph::no_grad();
    let x = g.input(random(&[2, 15, 24, 24], 2));
    let y = scorer.forward(&mut g, &mut store, x, BatchNormMode::Train).unwrap();
    assert_eq!(g.shape(y), &[2, 5]);
}

#[test]
fn invalid_configs_rejected() {
    let mut c = ScorerConfig::tiny(15, 4);
    c.num_classes = 1;
    assert!(c.validate().is_err());
    let mut c = ScorerConfig::tiny(15, 4);
    c.groups = 2;
    assert!(c.validate().is_err());
    let mut c = ScorerConfig::tiny(15, 4);
    c.stages[0].depth = 0;
    assert!(c.validate().is_err());
    assert!("vgg".parse::<BackboneStyle>().is_ok());
    assert!("alexnet".parse::<BackboneStyle>().is_err());
}

#[test]
fn zero_weights_give_uniform_logits() {
    let (mut store, scorer) = build(ScorerConfig::tiny(15, 4), 1);
    for p in store.iter_mut() {
        p.value = Tensor::zeros(p.value.shape());
    }
    let mut g = Graph::new();
    let x = g.input(random(&[1, 15, 32, 32], 2));
    let y = scorer.forward(&mut g, &mut store, x, BatchNormMode::Train).unwrap();
    let logits = g.value(y).data().to_vec();
    assert!(logits.iter().all(|&v| v == logits[0]));
    let loss = g.softmax_cross_entropy(y, &[3]).unwrap();
    assert!((g.value(loss).item() - 5f64.ln()).abs() < 1e-12);
}

#[test]
fn channel_mismatch_rejected() {
    let (mut store, scorer) = build(ScorerConfig::tiny(15, 4), 1);
    let mut g = Graph::no_grad();
    let x = g.input(random(&[1, 14, 32, 32], 2));
    assert!(scorer.forward(&mut g, &mut store, x, BatchNormMode::Train).is_err());
}

#[test]
fn permuting_channels_changes_logits() {
    let (mut store, scorer) = build(ScorerConfig::tiny(15, 4), 4);
    let x = random(&[1, 15, 16, 16], 5);
    let plane = 16 * 16;
    let mut permuted = x.data().to_vec();
    for c in 0..15 {
        let src = (c + 1) % 15;
        permuted[c * plane..(c + 1) * plane].copy_from_slice(&x.data()[src * plane..(src + 1) * plane]);
    }
    let run = |store: &mut ParamStore, t: Tensor| {
        let mut g = Graph::no_grad();
        let v = g.input(t);
        let y = scorer.forward(&mut g, store, v, BatchNormMode::Eval).unwrap();
        g.value(y).data().to_vec()
    };
    let a = run(&mut store, x.clone());
    let b = run(&mut store, Tensor::new(x.shape().to_vec(), permuted).unwrap());
    assert!(a.iter().zip(&b).any(|(p, q)| (p - q).abs() > 1e-9));
}
