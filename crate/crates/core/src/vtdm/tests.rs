use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::oracle::{conv2d_direct, matvec, maxpool_direct};
use crate::seed::rng;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng(seed);
    Tensor::from_fn(shape, |_| r.gen_range(-1.0..1.0))
}

#[test]
fn descriptor_of_zero_heatmaps_is_zero() {
    let d = trajectory_descriptor(&Tensor::zeros(&[16, 8, 8]), &random(&[1, 16, 3, 3], 1), Some(&Tensor::zeros(&[1])))
        .unwrap();
    assert!(d.data().iter().all(|&v| v == 0.0));
}

#[test]
fn descriptor_keeps_spatial_size() {
    let d = trajectory_descriptor(&Tensor::zeros(&[16, 64, 64]), &Tensor::ones(&[1, 16, 3, 3]), None).unwrap();
    assert_eq!(d.shape(), &[64, 64]);
}

#[test]
fn descriptor_rejects_channel_mismatch() {
    assert!(trajectory_descriptor(&Tensor::zeros(&[8, 10, 10]), &Tensor::ones(&[1, 16, 3, 3]), None).is_err());
}

#[test]
fn stationary_impulse_gives_scaled_box() {
    let (t, h, w, p) = (16, 12, 12, (5usize, 7usize));
    let heat = Tensor::from_fn(&[t, h, w], |i| if i % (h * w) == p.0 * w + p.1 { 1.0 } else { 0.0 });
    let phi = Tensor::ones(&[1, t, 3, 3]);
    let d = trajectory_descriptor(&heat, &phi, None).unwrap();
    let reference = conv2d_direct(&heat, &phi, None, 1, 1);
    for r in 0..h {
        for c in 0..w {
            let inside = r.abs_diff(p.0) <= 1 && c.abs_diff(p.1) <= 1;
            let v = d.data()[r * w + c];
            assert_eq!(v, if inside { t as f64 } else { 0.0 });
            assert_eq!(v, reference.data()[r * w + c]);
        }
    }
}

#[test]
fn localisation_fc_input_length() {
    // (64 - 4) / 2 = 30, (30 - 4) / 2 = 13
    assert_eq!(Localisation::fc_input_len(64, 64), Some(10 * 13 * 13));
    assert_eq!(Localisation::fc_input_len(16, 16), Some(10));
    assert_eq!(Localisation::fc_input_len(8, 8), None);
}

#[test]
fn localisation_starts_at_identity() {
    let mut store = ParamStore::new();
    let loc = Localisation::new(&mut store, "loc", 32, 32, &mut rng(3)).unwrap();
    for seed in 0..3 {
        let mut g = Graph::no_grad();
        let x = g.input(random(&[2, 1, 32, 32], seed).map(|v| v * 50.0));
        let th = loc.forward(&mut g, &store, x).unwrap();
        assert_eq!(g.value(th).data(), &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0]);
    }
}

#[test]
fn localisation_matches_layer_by_layer_reference() {
    let mut store = ParamStore::new();
    let loc = Localisation::new(&mut store, "loc", 20, 20, &mut rng(9)).unwrap();
    // give the last layer non-trivial weights
    let fc2 = store.id("loc.fc2.weight").unwrap();
    store.get_mut(fc2).value = random(&[4, LOC_HIDDEN], 10).map(|v| v * 0.1);
    let input = random(&[1, 20, 20], 11);

    let mut g = Graph::no_grad();
    let x = g.input(input.clone().reshape(&[1, 1, 20, 20]).unwrap());
    let th = loc.forward(&mut g, &store, x).unwrap();

    let val = |name: &str| store.get(store.id(&format!("loc.{name}")).unwrap()).value.clone();
    let relu = |t: Tensor| t.map(|v| v.max(0.0));
    let x = conv2d_direct(&input, &val("conv1.weight"), Some(val("conv1.bias").data()), 1, 0);
    let x = relu(maxpool_direct(&x, 2, 2));
    let x = conv2d_direct(&x, &val("conv2.weight"), Some(val("conv2.bias").data()), 1, 0);
    let x = relu(maxpool_direct(&x, 2, 2));
    let h: Vec<f64> =
        matvec(&val("fc1.weight"), x.data(), val("fc1.bias").data()).into_iter().map(|v| v.max(0.0)).collect();
    let expect = matvec(&val("fc2.weight"), &h, val("fc2.bias").data());
    for (a, b) in g.value(th).data().iter().zip(&expect) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn localisation_rejects_wrong_size() {
    let mut store = ParamStore::new();
    let loc = Localisation::new(&mut store, "loc", 32, 32, &mut rng(3)).unwrap();
    let mut g = Graph::no_grad();
    let x = g.input(Tensor::zeros(&[1, 1, 30, 32]));
    assert!(loc.forward(&mut g, &store, x).is_err());
}

#[test]
fn identity_grid_is_base_grid() {
    let grid = affine_grid(&AffineParams::IDENTITY, 5, 7).unwrap();
    assert_eq!(grid, SamplingGrid::base(5, 7));
    assert_eq!(grid.points[0], (-1.0, -1.0));
    assert_eq!(grid.points[34], (1.0, 1.0));
}

#[test]
fn scalar_matrix_halves_coordinates() {
    let grid = affine_grid(&AffineParams([0.5, 0.0, 0.0, 0.5]), 4, 6).unwrap();
    for (p, q) in grid.points.iter().zip(&SamplingGrid::base(4, 6).points) {
        assert_eq!(*p, (q.0 * 0.5, q.1 * 0.5));
    }
}

#[test]
fn rotation_matches_matrix_product() {
    let grid = affine_grid(&AffineParams([0.0, -1.0, 1.0, 0.0]), 3, 3).unwrap();
    for (p, q) in grid.points.iter().zip(&SamplingGrid::base(3, 3).points) {
        // [[0, -1], [1, 0]] · (x, y) = (-y, x)
        assert_eq!(*p, (-q.1, q.0));
    }
}

#[test]
fn non_finite_theta_rejected() {
    assert!(affine_grid(&AffineParams([f64::NAN, 0.0, 0.0, 1.0]), 2, 2).is_err());
}

#[test]
fn sampler_examples() {
    let img = Tensor::new(vec![2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
    let centre = SamplingGrid { height: 1, width: 1, points: vec![(0.0, 0.0)] };
    assert_eq!(bilinear_sample(&img, &centre).unwrap().data(), &[1.5]);
    let outside = SamplingGrid { height: 1, width: 1, points: vec![(-2.0, -2.0)] };
    assert_eq!(bilinear_sample(&img, &outside).unwrap().data(), &[0.0]);

    let big = random(&[9, 11], 4);
    let same = bilinear_sample(&big, &SamplingGrid::base(9, 11)).unwrap();
    for (a, b) in same.data().iter().zip(big.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn graph_sampler_matches_plain_sampler() {
    let img = random(&[6, 5], 12);
    let theta = AffineParams([0.8, 0.3, -0.2, 1.1]);
    let plain = bilinear_sample(&img, &affine_grid(&theta, 4, 7).unwrap()).unwrap();
    let mut g = Graph::no_grad();
    let th = g.input(Tensor::new(vec![1, 4], theta.0.to_vec()).unwrap());
    let grid = g.affine_grid(th, 4, 7).unwrap();
    let im = g.input(img.reshape(&[1, 1, 6, 5]).unwrap());
    let out = g.bilinear_sample(im, grid).unwrap();
    assert_eq!(g.value(out).data(), plain.data());
}

fn small_config(stn: bool, descriptor_norm: bool) -> VtdmConfig {
    VtdmConfig { joints: 3, clip_len: 4, height: 16, width: 16, stn, descriptor_norm }
}

#[test]
fn forward_shape_default_config() {
    let mut store = ParamStore::new();
    let vtdm = Vtdm::new(&mut store, VtdmConfig::default(), &mut rng(0)).unwrap();
    let mut g = Graph::no_grad();
    let x = g.input(random(&[15, 16, 64, 64], 1).map(f64::abs));
    let out = vtdm.forward(&mut g, &mut store, x, BatchNormMode::Train).unwrap();
    assert_eq!(g.shape(out.stacked), &[1, 15, 64, 64]);
}

#[test]
fn identity_transformer_equals_plain_descriptors() {
    let mut store = ParamStore::new();
    let vtdm = Vtdm::new(&mut store, small_config(true, false), &mut rng(5)).unwrap();
    let clip = random(&[2 * 3, 4, 16, 16], 6).map(f64::abs);
    let mut g = Graph::no_grad();
    let x = g.input(clip.clone());
    let out = vtdm.forward(&mut g, &mut store, x, BatchNormMode::Train).unwrap();
    let (phi, bias) = vtdm.phi_ids();
    let phi = &store.get(phi).value;
    let bias = &store.get(bias).value;
    let stacked = g.value(out.stacked).data();
    let plane = 16 * 16;
    for j in 0..6 {
        let joint = Tensor::new(vec![4, 16, 16], clip.data()[j * 4 * plane..(j + 1) * 4 * plane].to_vec()).unwrap();
        let d = trajectory_descriptor(&joint, phi, Some(bias)).unwrap();
        for (a, b) in stacked[j * plane..(j + 1) * plane].iter().zip(d.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn disabled_transformer_freezes_localisation() {
    let mut store = ParamStore::new();
    let vtdm = Vtdm::new(&mut store, small_config(false, true), &mut rng(5)).unwrap();
    for id in vtdm.localisation.param_ids() {
        assert!(!store.get(id).trainable);
    }
    let mut g = Graph::new();
    let x = g.input(random(&[3, 4, 16, 16], 2));
    let out = vtdm.forward(&mut g, &mut store, x, BatchNormMode::Train).unwrap();
    assert!(out.theta.is_none());
    assert_eq!(g.shape(out.stacked), &[1, 3, 16, 16]);
}

#[test]
fn forward_rejects_bad_clip_shape() {
    let mut store = ParamStore::new();
    let vtdm = Vtdm::new(&mut store, small_config(true, true), &mut rng(5)).unwrap();
    let mut g = Graph::no_grad();
    let x = g.input(Tensor::zeros(&[4, 4, 16, 16]));
    assert!(vtdm.forward(&mut g, &mut store, x, BatchNormMode::Eval).is_err());
}

fn arb_theta() -> impl Strategy<Value = AffineParams> {
    prop::array::uniform4(-2.0f64..2.0).prop_map(AffineParams)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sampler_is_linear_in_image(theta in arb_theta(), a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0u64..1000) {
        let (x, y) = (random(&[7, 6], seed), random(&[7, 6], seed + 1));
        let grid = affine_grid(&theta, 5, 8).unwrap();
        let mix = Tensor::new(vec![7, 6], x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect()).unwrap();
        let lhs = bilinear_sample(&mix, &grid).unwrap();
        let (sx, sy) = (bilinear_sample(&x, &grid).unwrap(), bilinear_sample(&y, &grid).unwrap());
        for ((l, p), q) in lhs.data().iter().zip(sx.data()).zip(sy.data()) {
            prop_assert!((l - (a * p + b * q)).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_composition(t1 in arb_theta(), t2 in arb_theta()) {
        let composed = affine_grid(&t1.compose(&t2), 6, 5).unwrap();
        let stepwise = affine_grid(&t2, 6, 5).unwrap();
        for (c, s) in composed.points.iter().zip(&stepwise.points) {
            let (x, y) = t1.apply(s.0, s.1);
            prop_assert!((c.0 - x).abs() < 1e-12 && (c.1 - y).abs() < 1e-12);
        }
    }

    #[test]
    fn vtdm_output_shape_is_fixed(theta in arb_theta()) {
        let mut store = ParamStore::new();
        let vtdm = Vtdm::new(&mut store, small_config(true, true), &mut rng(1)).unwrap();
        let b = store.id("vtdm.loc.fc2.bias").unwrap();
        store.get_mut(b).value = Tensor::from_vec(theta.0.to_vec());
        let mut g = Graph::no_grad();
        let x = g.input(random(&[3, 4, 16, 16], 3));
        let out = vtdm.forward(&mut g, &mut store, x, BatchNormMode::Train).unwrap();
        prop_assert_eq!(g.shape(out.stacked), &[1, 3, 16, 16]);
        prop_assert!(g.value(out.stacked).all_finite());
    }
}
