use super::*;
use crate::error::VinetError;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

#[test]
fn tensor_rejects_mismatched_data() {
    assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
    assert!(Tensor::new(vec![0, 3], vec![]).is_err());
}

#[test]
fn conv_scalar_product() {
    let mut g = Graph::new();
    let x = g.input(t(&[1, 1, 1], &[5.0]));
    let w = g.input(t(&[1, 1, 1, 1], &[2.0]));
    let y = g.conv2d(x, w, None, 1, 0).unwrap();
    assert_eq!(g.value(y).shape(), &[1, 1, 1]);
    assert_eq!(g.value(y).data(), &[10.0]);
}

#[test]
fn conv_same_padding_keeps_size() {
    let mut g = Graph::no_grad();
    let x = g.input(Tensor::ones(&[16, 64, 64]));
    let w = g.input(Tensor::ones(&[1, 16, 3, 3]));
    let y = g.conv2d(x, w, None, 1, 1).unwrap();
    assert_eq!(g.value(y).shape(), &[1, 64, 64]);
}

#[test]
fn conv_shape_errors_name_dimensions() {
    let mut g = Graph::new();
    let x = g.input(Tensor::ones(&[2, 5, 5]));
    let w = g.input(Tensor::ones(&[1, 3, 3, 3]));
    let err = g.conv2d(x, w, None, 1, 0).unwrap_err();
    assert!(matches!(err, VinetError::Contract { op: "conv2d", .. }));
    assert!(err.to_string().contains("3 input channels"), "{err}");

    let big = g.input(Tensor::ones(&[1, 2, 7, 7]));
    assert!(g.conv2d(x, big, None, 1, 0).is_err());
}

#[test]
fn maxpool_examples() {
    let mut g = Graph::new();
    let x = g.input(t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let y = g.maxpool2d(x, 2, 2).unwrap();
    assert_eq!(g.value(y).data(), &[4.0]);

    let c = g.input(Tensor::full(&[2, 4, 4], 3.5));
    let y = g.maxpool2d(c, 2, 2).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 3.5));

    let small = g.input(Tensor::ones(&[1, 2, 2]));
    assert!(g.maxpool2d(small, 3, 1).is_err());
}

#[test]
fn maxpool_ties_route_to_first_index() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::full(&[1, 2, 2], 1.0));
    let y = g.maxpool2d(x, 2, 2).unwrap();
    let loss = g.sum(y);
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.wrt(x).unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn relu_values_and_indicator_gradient() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::from_vec(vec![-1.0, 0.0, 2.0]));
    let y = g.relu(x);
    assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
    let loss = g.sum(y);
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.wrt(x).unwrap().data(), &[0.0, 0.0, 1.0]);

    let neg = g.input(Tensor::full(&[3, 2], -0.5));
    let y = g.relu(neg);
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn batchnorm_standardizes_two_values() {
    let mut g = Graph::new();
    let x = g.input(t(&[2, 1, 1, 1], &[1.0, 3.0]));
    let gamma = g.input(Tensor::ones(&[1]));
    let beta = g.input(Tensor::zeros(&[1]));
    let mut stats = RunningStats::new(1);
    let y = g.batchnorm2d(x, gamma, beta, &mut stats, BatchNormMode::Train).unwrap();
    let expect = 1.0 / (1.0 + BN_EPSILON).sqrt();
    let out = g.value(y).data();
    assert!((out[0] + expect).abs() < 1e-12 && (out[1] - expect).abs() < 1e-12);
    // mean 2, unbiased variance 2
    assert!((stats.mean[0] - 0.2).abs() < 1e-12);
    assert!((stats.var[0] - (0.9 + 0.2)).abs() < 1e-12);
}

#[test]
fn batchnorm_zero_gamma_gives_beta() {
    let mut g = Graph::new();
    let x = g.input(Tensor::from_fn(&[2, 2, 3, 3], |i| (i as f64).sin()));
    let gamma = g.input(Tensor::zeros(&[2]));
    let beta = g.input(Tensor::from_vec(vec![0.25, -1.5]));
    let mut stats = RunningStats::new(2);
    for mode in [BatchNormMode::Train, BatchNormMode::Eval] {
        let y = g.batchnorm2d(x, gamma, beta, &mut stats, mode).unwrap();
        for (i, v) in g.value(y).data().iter().enumerate() {
            let ch = (i / 9) % 2;
            assert_eq!(*v, [0.25, -1.5][ch]);
        }
    }
}

#[test]
fn batchnorm_eval_uses_running_stats() {
    let mut g = Graph::new();
    let x = g.input(t(&[1, 1, 1, 2], &[3.0, 5.0]));
    let gamma = g.input(Tensor::ones(&[1]));
    let beta = g.input(Tensor::zeros(&[1]));
    let mut stats = RunningStats { mean: vec![1.0], var: vec![4.0] };
    let y = g.batchnorm2d(x, gamma, beta, &mut stats, BatchNormMode::Eval).unwrap();
    let s = (4.0 + BN_EPSILON).sqrt();
    assert_eq!(g.value(y).data(), &[2.0 / s, 4.0 / s]);
    assert_eq!(stats.mean, vec![1.0]);
}

#[test]
fn linear_identity_and_bias() {
    let mut g = Graph::new();
    let x = g.input(Tensor::from_vec(vec![1.5, -2.0, 0.5]));
    let eye = g.input(Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 }));
    let zero = g.input(Tensor::zeros(&[3]));
    let y = g.linear(x, eye, zero).unwrap();
    assert_eq!(g.value(y).data(), &[1.5, -2.0, 0.5]);

    let w0 = g.input(Tensor::zeros(&[2, 3]));
    let b = g.input(Tensor::from_vec(vec![7.0, -3.0]));
    let y = g.linear(x, w0, b).unwrap();
    assert_eq!(g.value(y).data(), &[7.0, -3.0]);

    let bad = g.input(Tensor::zeros(&[2, 4]));
    assert!(g.linear(x, bad, b).is_err());
}

#[test]
fn cross_entropy_reference_points() {
    let mut g = Graph::new();
    let uniform = g.input(Tensor::full(&[5], 0.3));
    for label in 0..5 {
        let l = g.softmax_cross_entropy(uniform, &[label]).unwrap();
        assert!((g.value(l).item() - 5f64.ln()).abs() < 1e-12);
    }
    let sat = g.input(Tensor::from_vec(vec![1000.0, 0.0]));
    let l = g.softmax_cross_entropy(sat, &[0]).unwrap();
    assert!(g.value(l).item().abs() < 1e-12);

    let x = g.input(Tensor::from_vec(vec![1.0, 2.0, 3.0]));
    let l = g.softmax_cross_entropy(x, &[1]).unwrap();
    let e = std::f64::consts::E;
    let expect = -((e * e) / (e + e * e + e * e * e)).ln();
    assert!((g.value(l).item() - expect).abs() < 1e-12);

    assert!(g.softmax_cross_entropy(x, &[3]).is_err());
}

#[test]
fn backward_sum_and_square() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::from_fn(&[2, 3], |i| i as f64));
    let s = g.sum(x);
    let grads = g.backward(s).unwrap();
    assert!(grads.wrt(x).unwrap().data().iter().all(|&v| v == 1.0));

    let mut g = Graph::new();
    let x = g.leaf(Tensor::from_vec(vec![1.0, 2.0]));
    let sq = g.mul(x, x).unwrap();
    let s = g.sum(sq);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.wrt(x).unwrap().data(), &[2.0, 4.0]);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::zeros(&[3]));
    assert!(g.backward(x).is_err());
}

#[test]
fn backward_accumulates_into_params() {
    let mut store = ParamStore::new();
    let id = store.add("w", Tensor::from_vec(vec![1.0, 2.0])).unwrap();
    for _ in 0..2 {
        let mut g = Graph::new();
        let w = g.param(&store, id);
        let loss = g.sum(w);
        g.backward_into(loss, &mut store).unwrap();
    }
    assert_eq!(store.get(id).grad.as_ref().unwrap().data(), &[2.0, 2.0]);
}

#[test]
fn duplicate_param_names_rejected() {
    let mut store = ParamStore::new();
    store.add("a", Tensor::zeros(&[1])).unwrap();
    assert!(store.add("a", Tensor::zeros(&[1])).is_err());
}

#[test]
fn sgd_examples() {
    let mut store = ParamStore::new();
    let id = store.add("w", Tensor::scalar(1.0)).unwrap();
    assert!(sgd_step(&mut store, 0.1).is_err(), "missing grad must be rejected");

    store.accumulate_grad(id, &Tensor::scalar(0.5));
    sgd_step(&mut store, 0.1).unwrap();
    assert!((store.get(id).value.item() - 0.95).abs() < 1e-15);
    assert!(store.get(id).grad.is_none());

    store.accumulate_grad(id, &Tensor::scalar(0.0));
    sgd_step(&mut store, 0.1).unwrap();
    assert!((store.get(id).value.item() - 0.95).abs() < 1e-15);
}

#[test]
fn sgd_two_steps_equal_one_summed_step() {
    let grads = [Tensor::from_vec(vec![0.3, -0.2]), Tensor::from_vec(vec![0.1, 0.7])];
    let mut a = ParamStore::new();
    let ia = a.add("w", Tensor::from_vec(vec![1.0, 2.0])).unwrap();
    let mut b = a.clone();
    for g in &grads {
        a.accumulate_grad(ia, g);
        sgd_step(&mut a, 0.05).unwrap();
    }
    for g in &grads {
        b.accumulate_grad(ia, g);
    }
    sgd_step(&mut b, 0.05).unwrap();
    for (x, y) in a.get(ia).value.data().iter().zip(b.get(ia).value.data()) {
        assert!((x - y).abs() < 1e-15);
    }
}

#[test]
fn frozen_params_get_no_grad_and_skip_sgd() {
    let mut store = ParamStore::new();
    let id = store.add("loc.w", Tensor::scalar(3.0)).unwrap();
    store.set_trainable("loc.", false);
    let mut g = Graph::new();
    let w = g.param(&store, id);
    assert!(!g.requires_grad(w));
    sgd_step(&mut store, 1.0).unwrap();
    assert_eq!(store.get(id).value.item(), 3.0);
}
