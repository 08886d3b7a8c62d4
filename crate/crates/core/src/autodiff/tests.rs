use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::*;
use crate::rng::indexed_rng;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, data).unwrap()
}

fn random(shape: &[usize], seed: u64, salt: u64) -> Tensor<f64> {
    let mut rng = indexed_rng(seed, "autodiff-test", salt);
    let n: usize = shape.iter().product();
    t(shape, &(0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>())
}

#[test]
fn conv_identity_kernel() {
    let mut g = Graph::new();
    let x = g.input(t(&[1, 1, 3], &[1.0, 2.0, 3.0]));
    let w = g.input(t(&[1, 1, 1], &[1.0]));
    let b = g.input(t(&[1], &[0.0]));
    let y = g.conv1d(x, w, Some(b), 1, 0).unwrap();
    assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0]);
}

#[test]
fn conv_hand_cross_correlation() {
    let mut g = Graph::new();
    let x = g.input(t(&[1, 1, 3], &[1.0, 2.0, 3.0]));
    let w = g.input(t(&[1, 1, 3], &[1.0, 0.0, -1.0]));
    let y = g.conv1d(x, w, None, 1, 0).unwrap();
    assert_eq!(g.value(y).shape(), &[1, 1, 1]);
    assert_eq!(g.value(y).data(), &[-2.0]);
}

#[test]
fn conv_output_length_and_shape_errors() {
    let mut g = Graph::new();
    let x = g.input(Tensor::<f64>::zeros(&[2, 3, 10]));
    let w = g.input(Tensor::zeros(&[4, 3, 3]));
    let y = g.conv1d(x, w, None, 2, 1).unwrap();
    assert_eq!(g.value(y).shape(), &[2, 4, 5]);
    let bad = g.input(Tensor::zeros(&[4, 2, 3]));
    let err = g.conv1d(x, bad, None, 1, 0).unwrap_err();
    assert!(matches!(err, crate::Error::Shape { .. }));
}

fn conv_fd(seed: u64, stride: usize, pad: usize) -> f64 {
    let mut rng = indexed_rng(seed, "conv-shape", 0);
    let (b, cin, cout) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4));
    let k = rng.random_range(1..5);
    let len = rng.random_range(k..k + 9);
    let mut store = ParamStore::new();
    let xi = store.add("x", random(&[b, cin, len], seed, 1));
    let wi = store.add("w", random(&[cout, cin, k], seed, 2));
    let bi = store.add("b", random(&[cout], seed, 3));
    let build = |s: &mut ParamStore<f64>| {
        let mut g = Graph::new();
        let (x, w, bb) = (g.param(s, xi), g.param(s, wi), g.param(s, bi));
        let y = g.conv1d(x, w, Some(bb), stride, pad).unwrap();
        let sq = g.sum_squares(y);
        let lin = g.sum(y);
        let l = g.combine(&[(sq, 0.5), (lin, 1.0)]);
        (g, l)
    };
    [xi, wi, bi]
        .into_iter()
        .map(|p| finite_difference_check(&mut store, p, None, 1e-5, build))
        .fold(0.0, f64::max)
}

#[test]
fn conv_gradients_match_finite_differences() {
    for seed in 0..10 {
        for &(stride, pad) in &[(1, 0), (1, 2), (2, 1), (3, 0)] {
            let err = conv_fd(seed, stride, pad);
            assert!(err < 1e-4, "seed {seed} stride {stride} pad {pad}: {err}");
        }
    }
}

#[test]
fn sum_of_input_gradient_matches_fd() {
    let mut store = ParamStore::new();
    let xi = store.add("x", random(&[1, 2, 7], 5, 1));
    let w = random(&[3, 2, 3], 5, 2);
    let err = finite_difference_check(&mut store, xi, None, 1e-5, |s| {
        let mut g = Graph::new();
        let x = g.param(s, xi);
        let wn = g.input(w.clone());
        let y = g.conv1d(x, wn, None, 1, 1).unwrap();
        let l = g.sum(y);
        (g, l)
    });
    assert!(err < 1e-4, "{err}");
}

#[test]
fn batch_norm_cases() {
    let mut g = Graph::new();
    let x = g.input(t(&[2, 1, 1], &[0.0, 2.0]));
    let gamma = g.input(t(&[1], &[1.0]));
    let beta = g.input(t(&[1], &[0.0]));
    let y = g.batch_norm1d(x, gamma, beta, 1e-12, BnMode::Train, None).unwrap();
    let d = g.value(y).data();
    assert!((d[0] + 1.0).abs() < 1e-9 && (d[1] - 1.0).abs() < 1e-9);

    let c = g.input(Tensor::filled(&[3, 2, 4], 5.0));
    let gamma2 = g.input(t(&[2], &[1.0, 1.0]));
    let beta2 = g.input(t(&[2], &[0.0, 0.0]));
    let y = g.batch_norm1d(c, gamma2, beta2, 1e-5, BnMode::Train, None).unwrap();
    assert!(g.value(y).data().iter().all(|v| v.abs() < 1e-9));

    let one = g.input(Tensor::filled(&[1, 1, 1], 5.0));
    assert!(g.batch_norm1d(one, gamma, beta, 1e-5, BnMode::Train, None).is_err());
    assert!(g.batch_norm1d(one, gamma, beta, 1e-5, BnMode::Eval, None).is_err());
}

#[test]
fn batch_norm_gradients_match_fd() {
    for seed in 0..10 {
        for mode in [BnMode::Train, BnMode::Eval] {
            let mut rng = indexed_rng(seed, "bn-shape", 0);
            let (b, c, l) = (rng.random_range(1..4), rng.random_range(1..4), rng.random_range(2..6));
            let mut store = ParamStore::new();
            let xi = store.add("x", random(&[b, c, l], seed, 1));
            let gi = store.add("g", random(&[c], seed, 2));
            let bi = store.add("b", random(&[c], seed, 3));
            let rm = random(&[c], seed, 4).into_data();
            let rv: Vec<f64> = random(&[c], seed, 5).data().iter().map(|v| v.abs() + 0.5).collect();
            let target = random(&[b * c * l], seed, 6).into_data();
            let build = |s: &mut ParamStore<f64>| {
                let mut g = Graph::new();
                let (x, ga, be) = (g.param(s, xi), g.param(s, gi), g.param(s, bi));
                let y = g.batch_norm1d(x, ga, be, 1e-5, mode, Some((&rm, &rv))).unwrap();
                let yy = to_rows(&mut g, y);
                let l = g.mse_loss(yy, &target).unwrap();
                (g, l)
            };
            for p in [xi, gi, bi] {
                let err = finite_difference_check(&mut store, p, None, 1e-5, build);
                assert!(err < 1e-4, "seed {seed} {mode:?}: {err}");
            }
        }
    }
}

/// Flattens `[B, C, L]` to `[B, C·L]` (position-major) using strided
/// selector convolutions, so 3-D outputs can feed `[B, N]` losses.
fn to_rows(g: &mut Graph<f64>, y: NodeId) -> NodeId {
    let shape = g.value(y).shape().to_vec();
    if shape.len() == 2 {
        return y;
    }
    let (c, l) = (shape[1], shape[2]);
    let mut parts = Vec::with_capacity(l);
    for off in 0..l {
        let mut w = vec![0.0; c * c * l];
        for ch in 0..c {
            w[(ch * c + ch) * l + off] = 1.0;
        }
        let wn = g.input(t(&[c, c, l], &w));
        let sel = g.conv1d(y, wn, None, l, 0).unwrap(); // [B, C, 1]
        parts.push(g.global_avg_pool(sel).unwrap()); // [B, C]
    }
    g.concat(&parts).unwrap()
}

#[test]
fn relu_cases_and_gradient() {
    let mut g = Graph::new();
    let x = g.input(t(&[1, 3], &[-1.0, 0.0, 2.0]));
    let y = g.relu(x);
    assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);

    let mut store = ParamStore::new();
    let xi = store.add("x", t(&[1, 3], &[-1.0, -2.0, -0.5]));
    let mut g = Graph::new();
    let x = g.param(&store, xi);
    let y = g.relu(x);
    let l = g.sum(y);
    assert!(g.value(y).data().iter().all(|v| *v == 0.0));
    g.backward(l, &mut store);
    assert!(store.get(xi).grad.iter().all(|v| *v == 0.0));

    // Zero input gets zero gradient.
    let mut store = ParamStore::new();
    let xi = store.add("x", t(&[1, 2], &[0.0, 1.0]));
    let mut g = Graph::new();
    let x = g.param(&store, xi);
    let y = g.relu(x);
    let l = g.sum(y);
    g.backward(l, &mut store);
    assert_eq!(store.get(xi).grad, vec![0.0, 1.0]);

    for seed in 0..10 {
        let mut store = ParamStore::new();
        let mut v = random(&[3, 5], seed, 1);
        v.data_mut().iter_mut().for_each(|a| {
            if a.abs() < 0.05 {
                *a = 0.1
            }
        });
        let target = random(&[15], seed, 2).into_data();
        let xi = store.add("x", v);
        let err = finite_difference_check(&mut store, xi, None, 1e-5, |s| {
            let mut g = Graph::new();
            let x = g.param(s, xi);
            let y = g.relu(x);
            let l = g.mse_loss(y, &target).unwrap();
            (g, l)
        });
        assert!(err < 1e-6, "{err}");
    }
}

#[test]
fn max_pool_cases_and_gradient() {
    let mut g = Graph::new();
    let x = g.input(t(&[1, 1, 4], &[1.0, 3.0, 2.0, 5.0]));
    let y = g.max_pool1d(x, 2, 2).unwrap();
    assert_eq!(g.value(y).data(), &[3.0, 5.0]);
    assert!(g.max_pool1d(x, 5, 1).is_err());

    let mut store = ParamStore::new();
    let xi = store.add("x", Tensor::filled(&[1, 1, 6], 2.0));
    let mut g = Graph::new();
    let x = g.param(&store, xi);
    let y = g.max_pool1d(x, 3, 3).unwrap();
    assert_eq!(g.value(y).data(), &[2.0, 2.0]);
    let l = g.sum(y);
    g.backward(l, &mut store);
    assert_eq!(store.get(xi).grad, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);

    for seed in 0..10 {
        let mut store = ParamStore::new();
        let xi = store.add("x", random(&[2, 3, 9], seed, 1));
        let r = random(&[2, 3 * 4], seed, 2).into_data();
        let err = finite_difference_check(&mut store, xi, None, 1e-5, |s| {
            let mut g = Graph::new();
            let x = g.param(s, xi);
            let y = g.max_pool1d(x, 2, 2).unwrap();
            let rows = to_rows(&mut g, y);
            let l = g.mse_loss(rows, &r).unwrap();
            (g, l)
        });
        assert!(err < 1e-6, "{err}");
    }
}

#[test]
fn affine_cases_and_gradient() {
    let mut g = Graph::new();
    let x = g.input(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let eye = g.input(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let zero = g.input(t(&[2], &[0.0, 0.0]));
    let y = g.affine(x, eye, Some(zero)).unwrap();
    assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);

    let z = g.input(Tensor::zeros(&[2, 3]));
    let w = g.input(Tensor::filled(&[2, 3], 0.7));
    let b = g.input(t(&[2], &[5.0, -1.0]));
    let y = g.affine(z, w, Some(b)).unwrap();
    assert_eq!(g.value(y).data(), &[5.0, -1.0, 5.0, -1.0]);
    assert!(g.affine(x, w, None).is_err());

    for seed in 0..10 {
        let mut rng = indexed_rng(seed, "affine-shape", 0);
        let (b, n, m) = (rng.random_range(1..4), rng.random_range(1..6), rng.random_range(1..5));
        let mut store = ParamStore::new();
        let xi = store.add("x", random(&[b, n], seed, 1));
        let wi = store.add("w", random(&[m, n], seed, 2));
        let bi = store.add("b", random(&[m], seed, 3));
        let target = random(&[b * m], seed, 4).into_data();
        for p in [xi, wi, bi] {
            let err = finite_difference_check(&mut store, p, None, 1e-5, |s| {
                let mut g = Graph::new();
                let (x, w, bb) = (g.param(s, xi), g.param(s, wi), g.param(s, bi));
                let y = g.affine(x, w, Some(bb)).unwrap();
                let l = g.mse_loss(y, &target).unwrap();
                (g, l)
            });
            assert!(err < 1e-5, "{err}");
        }
    }
}

#[test]
fn activation_values() {
    let mut g = Graph::<f64>::new();
    let z = g.input(t(&[1, 2], &[0.0, 0.0]));
    let s = g.sigmoid(z);
    let th = g.tanh(z);
    let sm = g.softmax(z).unwrap();
    assert_eq!(g.value(s).data(), &[0.5, 0.5]);
    assert_eq!(g.value(th).data(), &[0.0, 0.0]);
    assert_eq!(g.value(sm).data(), &[0.5, 0.5]);

    let x = random(&[3, 4], 1, 1);
    let shifted = t(&[3, 4], &x.data().iter().map(|v| v + 123.25).collect::<Vec<_>>());
    let (a, b) = (g.input(x), g.input(shifted));
    let (sa, sb) = (g.softmax(a).unwrap(), g.softmax(b).unwrap());
    for (p, q) in g.value(sa).data().iter().zip(g.value(sb).data()) {
        assert!((p - q).abs() < 1e-12);
    }
    for row in g.value(sa).data().chunks(4) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(row.iter().all(|v| *v >= 0.0));
    }

    let big = g.input(t(&[1, 3], &[1e4, -1e4, 0.0]));
    let sm = g.softmax(big).unwrap();
    assert!(g.value(sm).data().iter().all(|v| v.is_finite()));
}

#[test]
fn activation_gradients_match_fd() {
    for seed in 0..10 {
        let target = random(&[12], seed, 7).into_data();
        for kind in 0..3 {
            let mut store = ParamStore::new();
            let xi = store.add("x", random(&[3, 4], seed, kind));
            let err = finite_difference_check(&mut store, xi, None, 1e-5, |s| {
                let mut g = Graph::new();
                let x = g.param(s, xi);
                let y = match kind {
                    0 => g.sigmoid(x),
                    1 => g.tanh(x),
                    _ => g.softmax(x).unwrap(),
                };
                let l = g.mse_loss(y, &target).unwrap();
                (g, l)
            });
            assert!(err < 1e-5, "kind {kind} seed {seed}: {err}");
        }
    }
}

#[test]
fn grl_forward_and_backward() {
    let mut store = ParamStore::new();
    let xi = store.add("x", t(&[1, 2], &[3.1, -2.0]));
    let mut g = Graph::new();
    let x = g.param(&store, xi);
    let y = g.grl(x, 1.0);
    assert_eq!(g.value(y).data(), &[3.1, -2.0]);
    // Objective whose gradient w.r.t. y is [1, −2].
    let w = g.input(t(&[1, 2], &[1.0, -2.0]));
    let s = g.affine(y, w, None).unwrap();
    let l = g.sum(s);
    g.backward(l, &mut store);
    assert_eq!(store.get(xi).grad, vec![-1.0, 2.0]);

    store.zero_grad();
    let mut g = Graph::new();
    let x = g.param(&store, xi);
    let y = g.grl(x, 0.0);
    let w = g.input(t(&[1, 2], &[1.0, -2.0]));
    let s = g.affine(y, w, None).unwrap();
    let l = g.sum(s);
    g.backward(l, &mut store);
    assert!(store.get(xi).grad.iter().all(|v| *v == 0.0));
}

#[test]
fn grl_path_is_negated_identity_path() {
    for seed in 0..10 {
        for &lambda in &[1.0, 0.5, 2.0, 0.0] {
            let mut store = ParamStore::new();
            let xi = store.add("feat", random(&[4, 6], seed, 1));
            let wi = store.add("disc.w", random(&[5, 6], seed, 2));
            let classes = [0, 3, 4, 1];
            let grad = |store: &mut ParamStore<f64>, reverse: bool| {
                store.zero_grad();
                let mut g = Graph::new();
                let x = g.param(store, xi);
                let w = g.param(store, wi);
                let h = if reverse { g.grl(x, lambda) } else { x };
                let logits = g.affine(h, w, None).unwrap();
                let l = g.ce_loss(logits, &classes).unwrap();
                g.backward(l, store);
                store.get(xi).grad.clone()
            };
            let plain = grad(&mut store, false);
            let reversed = grad(&mut store, true);
            for (r, p) in reversed.iter().zip(&plain) {
                assert_eq!(*r, -lambda * p);
            }
        }
    }
}

#[test]
fn mse_cases() {
    let mut g = Graph::new();
    let p = g.input(t(&[1, 2], &[122.0, 78.0]));
    let l = g.mse_loss(p, &[120.0, 80.0]).unwrap();
    assert_eq!(g.scalar(l), 4.0);
    let l0 = g.mse_loss(p, &[122.0, 78.0]).unwrap();
    assert_eq!(g.scalar(l0), 0.0);
    for seed in 0..10 {
        let mut store = ParamStore::new();
        let pi = store.add("p", random(&[4, 2], seed, 1));
        let y = random(&[8], seed, 2).into_data();
        let err = finite_difference_check(&mut store, pi, None, 1e-5, |s| {
            let mut g = Graph::new();
            let p = g.param(s, pi);
            let l = g.mse_loss(p, &y).unwrap();
            (g, l)
        });
        assert!(err < 1e-6, "{err}");
    }
}

#[test]
fn bce_cases_and_gradient() {
    let mut g = Graph::new();
    let one = g.input(t(&[1, 1], &[1.0]));
    let l = g.bce_loss(one, &[1.0]).unwrap();
    assert!(g.scalar(l) < 1e-6);
    let half = g.input(t(&[1, 1], &[0.5]));
    let l1 = g.bce_loss(half, &[1.0]).unwrap();
    let l0 = g.bce_loss(half, &[0.0]).unwrap();
    assert!((g.scalar(l1) - core::f64::consts::LN_2).abs() < 1e-12);
    assert_eq!(g.scalar(l1), g.scalar(l0));
    let zero = g.input(t(&[1, 1], &[0.0]));
    let l = g.bce_loss(zero, &[1.0]).unwrap();
    assert!(g.scalar(l).is_finite());

    for seed in 0..10 {
        let mut store = ParamStore::new();
        let zi = store.add("z", random(&[5, 1], seed, 1));
        let labels = [1.0, 0.0, 0.0, 1.0, 1.0];
        let err = finite_difference_check(&mut store, zi, None, 1e-5, |s| {
            let mut g = Graph::new();
            let z = g.param(s, zi);
            let p = g.sigmoid(z);
            let l = g.bce_loss(p, &labels).unwrap();
            (g, l)
        });
        assert!(err < 1e-5, "{err}");
    }
}

#[test]
fn ce_cases_and_gradient() {
    let mut g = Graph::<f64>::new();
    let u = g.input(Tensor::zeros(&[2, 7]));
    let l = g.ce_loss(u, &[0, 6]).unwrap();
    assert!((g.scalar(l) - 7f64.ln()).abs() < 1e-12);
    let sharp = g.input(t(&[1, 3], &[0.0, 50.0, 0.0]));
    let l = g.ce_loss(sharp, &[1]).unwrap();
    assert!(g.scalar(l) < 1e-6);
    assert!(g.ce_loss(sharp, &[3]).is_err());
    let huge = g.input(t(&[1, 3], &[1e4, -1e4, 0.0]));
    let l = g.ce_loss(huge, &[1]).unwrap();
    assert!(g.scalar(l).is_finite());
    assert!((g.scalar(l) - 2e4).abs() < 1e-6);

    for seed in 0..10 {
        let mut store = ParamStore::new();
        let li = store.add("logits", random(&[3, 5], seed, 1));
        let err = finite_difference_check(&mut store, li, None, 1e-5, |s| {
            let mut g = Graph::new();
            let x = g.param(s, li);
            let l = g.ce_loss(x, &[4, 0, 2]).unwrap();
            (g, l)
        });
        assert!(err < 1e-5, "{err}");
    }
}

#[test]
fn weighted_sum_and_concat_gradients() {
    for seed in 0..10 {
        let mut store = ParamStore::new();
        let si = store.add("scores", random(&[2, 3], seed, 1));
        let fi: Vec<ParamId> = (0..3).map(|i| store.add("f", random(&[2, 4], seed, 10 + i))).collect();
        let target = random(&[2 * 4 + 2 * 8], seed, 3).into_data();
        let build = |s: &mut ParamStore<f64>| {
            let mut g = Graph::new();
            let sc = g.param(s, si);
            let w = g.softmax(sc).unwrap();
            let feats: Vec<NodeId> = fi.iter().map(|&p| g.param(s, p)).collect();
            let fused = g.weighted_sum(w, &feats).unwrap();
            let cat = g.concat(&[fused, feats[0], feats[2]]).unwrap();
            let l = g.mse_loss(cat, &target[..2 * 12]).unwrap();
            (g, l)
        };
        for p in core::iter::once(si).chain(fi.iter().copied()) {
            let err = finite_difference_check(&mut store, p, None, 1e-5, build);
            assert!(err < 1e-5, "{err}");
        }
    }
}

#[test]
fn sum_of_squares_is_exact() {
    let mut store = ParamStore::new();
    let xi = store.add("x", random(&[7], 3, 1));
    let err = finite_difference_check(&mut store, xi, None, 1e-5, |s| {
        let mut g = Graph::new();
        let x = g.param(s, xi);
        let l = g.sum_squares(x);
        (g, l)
    });
    assert!(err < 1e-8, "{err}");
}

#[test]
fn backward_twice_doubles_gradients() {
    let mut store = ParamStore::new();
    let xi = store.add("x", random(&[2, 3, 8], 4, 1));
    let wi = store.add("w", random(&[2, 3, 3], 4, 2));
    let mut g = Graph::new();
    let x = g.param(&store, xi);
    let w = g.param(&store, wi);
    let y = g.conv1d(x, w, None, 1, 1).unwrap();
    let r = g.relu(y);
    let l = g.sum_squares(r);
    g.backward(l, &mut store);
    let once: Vec<Vec<f64>> = store.iter().map(|p| p.grad.clone()).collect();
    let visits = g.backward_visits();
    g.backward(l, &mut store);
    assert_eq!(g.backward_visits(), visits);
    assert_eq!(visits, 5);
    for (p, o) in store.iter().zip(&once) {
        for (a, b) in p.grad.iter().zip(o) {
            assert_eq!(*a, 2.0 * b);
        }
    }
}

#[test]
fn binding_a_param_twice_shares_the_node() {
    let mut store = ParamStore::<f64>::new();
    let xi = store.add("x", t(&[1, 2], &[1.0, 2.0]));
    let mut g = Graph::new();
    assert_eq!(g.param(&store, xi), g.param(&store, xi));
}
