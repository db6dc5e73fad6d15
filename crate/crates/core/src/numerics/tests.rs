use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn store_with(tensors: &[(&str, Tensor)]) -> (ParamStore, Vec<ParamId>) {
    let mut store = ParamStore::new();
    let ids = tensors
        .iter()
        .map(|(name, t)| store.register(*name, Owner::Shared, t.clone()).unwrap())
        .collect();
    (store, ids)
}

#[test]
fn matmul_examples() {
    let mut g = Graph::new();
    let eye = g.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
    let col = g.constant(Tensor::from_rows(&[vec![3.0], vec![4.0]]).unwrap());
    let out = g.matmul(eye, col).unwrap();
    assert_eq!(g.value(out).data(), &[3.0, 4.0]);

    let row = g.constant(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
    let out = g.matmul(row, col).unwrap();
    assert_eq!(g.value(out).data(), &[11.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    let msg = g.matmul(a, b).unwrap_err().to_string();
    assert!(msg.contains("[2, 3] vs [2, 3]"), "{msg}");
}

#[test]
fn matmul_gradient_matches_ones_times_b_transpose_and_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = random(&[3, 4], &mut rng);
    let b = random(&[4, 2], &mut rng);
    let (store, ids) = store_with(&[("a", a), ("b", b.clone())]);
    let f = |g: &mut Graph<'_>| {
        let (a, b) = (g.param(ids[0]), g.param(ids[1]));
        let c = g.matmul(a, b)?;
        Ok(g.sum(c))
    };
    let (_, grads) = analytic_gradients(&f, &store).unwrap();
    let expected = Tensor::ones(&[3, 2]).matmul(&b.transpose().unwrap()).unwrap();
    assert!(grads.get(ids[0]).max_abs_diff(&expected) < 1e-15);
    let report = finite_difference_check(f, &store, 1e-5).unwrap();
    assert!(report.max_rel_err < 1e-6, "{report:?}");
}

#[test]
fn softmax_examples() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::row(&[0.0, 0.0, 0.0]).unwrap());
    let y = g.softmax(x, 1).unwrap();
    for &v in g.value(y).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }

    let x = g.constant(Tensor::row(&[1f64.ln(), 2f64.ln(), 3f64.ln()]).unwrap());
    let y = g.softmax(x, 1).unwrap();
    for (v, e) in g.value(y).data().iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
        assert!((v - e).abs() < 1e-15);
    }
}

#[test]
fn softmax_large_logits_do_not_overflow() {
    // Oracle in log space: p1 = e^-1000 / (1 + e^-1000), whose base-10
    // exponent (-434.3) is far below the smallest subnormal f64.
    let log10_p1 = (-1000.0 - (-1000f64).exp().ln_1p()) / std::f64::consts::LN_10;
    assert!((log10_p1 + 434.294).abs() < 1e-3);
    assert!(log10_p1 < f64::MIN_POSITIVE.log10() - 16.0);

    let mut g = Graph::new();
    let x = g.constant(Tensor::row(&[1000.0, 0.0]).unwrap());
    let y = g.softmax(x, 1).unwrap();
    let out = g.value(y).data();
    assert!(out.iter().all(|v| v.is_finite()));
    assert_eq!(out[0], 1.0);
    assert_eq!(out[1], 0.0);
}

#[test]
fn softmax_along_columns() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_rows(&[vec![0.0, 1.0], vec![0.0, 1.0]]).unwrap());
    let y = g.softmax(x, 0).unwrap();
    assert!(g.value(y).data().iter().all(|v| (v - 0.5).abs() < 1e-15));
    assert!(g.softmax(x, 2).is_err());
}

#[test]
fn attention_single_key_is_identity_on_values() {
    let mut g = Graph::new();
    let r = g.constant(Tensor::row(&[0.3, -1.2, 2.0]).unwrap());
    let out = scaled_dot_attention(&mut g, r, r, r, None).unwrap();
    assert_eq!(g.value(out).data(), g.value(r).data());
}

#[test]
fn attention_identical_keys_average_values() {
    let mut g = Graph::new();
    let q = g.constant(Tensor::row(&[1.0, 2.0]).unwrap());
    let k = g.constant(Tensor::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap());
    let v = g.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![3.0, 4.0]]).unwrap());
    let out = scaled_dot_attention(&mut g, q, k, v, None).unwrap();
    assert_eq!(g.value(out).data(), &[2.0, 2.0]);
}

#[test]
fn attention_matches_three_step_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (q, k, v) = (random(&[2, 4], &mut rng), random(&[3, 4], &mut rng), random(&[3, 4], &mut rng));
    // Oracle: scores, softmax per row, weighted values.
    let mut expected = vec![0.0; 8];
    for i in 0..2 {
        let scores: Vec<f64> = (0..3)
            .map(|j| (0..4).map(|d| q.get(i, d) * k.get(j, d)).sum::<f64>() / 2.0)
            .collect();
        let z: f64 = scores.iter().map(|s| s.exp()).sum();
        for j in 0..3 {
            let w = scores[j].exp() / z;
            for d in 0..4 {
                expected[i * 4 + d] += w * v.get(j, d);
            }
        }
    }
    let mut g = Graph::new();
    let (qv, kv, vv) = (g.constant(q), g.constant(k), g.constant(v));
    let out = scaled_dot_attention(&mut g, qv, kv, vv, Some(&[true, true, true])).unwrap();
    for (a, b) in g.value(out).data().iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn attention_masks_keys_and_rejects_all_masked() {
    let mut g = Graph::new();
    let q = g.constant(Tensor::row(&[1.0, 0.0]).unwrap());
    let k = g.constant(Tensor::from_rows(&[vec![5.0, 0.0], vec![0.0, 1.0]]).unwrap());
    let v = g.constant(Tensor::from_rows(&[vec![9.0, 9.0], vec![1.0, 2.0]]).unwrap());
    let out = scaled_dot_attention(&mut g, q, k, v, Some(&[false, true])).unwrap();
    assert_eq!(g.value(out).data(), &[1.0, 2.0]);
    assert!(matches!(
        scaled_dot_attention(&mut g, q, k, v, Some(&[false, false])),
        Err(Error::AllKeysMasked)
    ));
}

#[test]
fn mlp_examples() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::row(&[0.7, -3.0]).unwrap());
    let w = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[1, 3]));
    let out = mlp_apply(&mut g, x, &[(w, b, Activation::Relu)]).unwrap();
    assert_eq!(g.value(out).data(), &[0.0, 0.0, 0.0]);

    let x = g.constant(Tensor::row(&[-1.0, 2.0]).unwrap());
    let eye = g.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
    let b = g.constant(Tensor::zeros(&[1, 2]));
    let out = mlp_apply(&mut g, x, &[(eye, b, Activation::Relu)]).unwrap();
    assert_eq!(g.value(out).data(), &[0.0, 2.0]);

    let bad = g.constant(Tensor::zeros(&[3, 1]));
    assert!(mlp_apply(&mut g, x, &[(bad, b, Activation::Relu)]).is_err());
}

#[test]
fn two_layer_mlp_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (store, ids) = store_with(&[
        ("w1", random(&[3, 4], &mut rng)),
        ("b1", random(&[1, 4], &mut rng)),
        ("w2", random(&[4, 1], &mut rng)),
        ("b2", random(&[1, 1], &mut rng)),
    ]);
    let x = random(&[2, 3], &mut rng);
    let f = |g: &mut Graph<'_>| {
        let xv = g.constant(x.clone());
        let layers = [
            (g.param(ids[0]), g.param(ids[1]), Activation::Tanh),
            (g.param(ids[2]), g.param(ids[3]), Activation::Identity),
        ];
        let out = mlp_apply(g, xv, &layers)?;
        Ok(g.sum(out))
    };
    let report = finite_difference_check(f, &store, 1e-5).unwrap();
    assert!(report.max_rel_err < 1e-6, "{report:?}");
}

#[test]
fn backward_of_sum_is_ones() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::zeros(&[2, 3]), true);
    let loss = g.sum(x);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap(), Tensor::ones(&[2, 3]));
}

#[test]
fn stop_gradient_contract() {
    let mut g = Graph::new();
    let xt = Tensor::from_rows(&[vec![1.0, -2.0], vec![0.5, 4.0]]).unwrap();
    let x = g.leaf(xt.clone(), true);
    let y = g.leaf(Tensor::from_rows(&[vec![3.0, 1.0], vec![2.0, 2.0]]).unwrap(), true);
    let sx = g.stop_gradient(x);
    assert_eq!(g.stop_gradient_edges(), vec![(sx, x)]);
    let prod = g.mul(sx, y).unwrap();
    let loss = g.sum(prod);
    g.backward(loss).unwrap();
    let gx = g.grad(x).unwrap();
    assert!(gx.data().iter().all(|&v| v == 0.0));
    assert_eq!(g.grad(y).unwrap(), xt);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::zeros(&[2, 2]), true);
    assert!(matches!(g.backward(x), Err(Error::Shape(_))));
}

#[test]
fn gradcheck_half_squared_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (store, ids) = store_with(&[("theta", random(&[4, 3], &mut rng))]);
    let f = |g: &mut Graph<'_>| {
        let t = g.param(ids[0]);
        let s = g.sum_squares(t);
        Ok(g.scale(s, 0.5))
    };
    let (_, grads) = analytic_gradients(&f, &store).unwrap();
    assert_eq!(grads.get(ids[0]), store.get(ids[0]));
    let report = finite_difference_check(f, &store, 1e-5).unwrap();
    assert!(report.max_rel_err < 1e-9, "{report:?}");
}

#[test]
fn gradcheck_softmax_cross_entropy_matches_closed_form() {
    let logits = Tensor::row(&[0.2, -1.3, 0.9]).unwrap();
    let (store, ids) = store_with(&[("logits", logits.clone())]);
    let target = 2;
    let f = |g: &mut Graph<'_>| {
        let l = g.param(ids[0]);
        let p = g.softmax(l, 1)?;
        let pt = g.slice_cols(p, target, target + 1)?;
        let lp = g.ln(pt);
        let s = g.sum(lp);
        Ok(g.scale(s, -1.0))
    };
    let (_, grads) = analytic_gradients(&f, &store).unwrap();
    let z: f64 = logits.data().iter().map(|v| v.exp()).sum();
    for (k, &gv) in grads.get(ids[0]).data().iter().enumerate() {
        let p = logits.data()[k].exp() / z;
        let y = if k == target { 1.0 } else { 0.0 };
        assert!((gv - (p - y)).abs() < 1e-14);
    }
    let report = finite_difference_check(f, &store, 1e-5).unwrap();
    assert!(report.max_rel_err < 1e-6, "{report:?}");
}

#[test]
fn gradcheck_reports_non_finite() {
    let (store, ids) = store_with(&[("x", Tensor::row(&[-1.0]).unwrap())]);
    let f = |g: &mut Graph<'_>| {
        let x = g.param(ids[0]);
        let l = g.ln(x);
        Ok(g.sum(l))
    };
    assert!(matches!(
        finite_difference_check(f, &store, 1e-5),
        Err(Error::NonFinite(_))
    ));
}

#[test]
fn gather_scatters_into_parameter_rows() {
    let (store, ids) = store_with(&[("table", Tensor::zeros(&[4, 2]))]);
    let mut grads = Gradients::zeros_like(&store);
    let mut g = Graph::with_params(&store);
    let t = g.param(ids[0]);
    let rows = g.gather(t, &[1, 3, 1]).unwrap();
    let loss = g.sum(rows);
    g.backward_into(loss, &mut grads).unwrap();
    assert_eq!(grads.get(ids[0]).data(), &[0.0, 0.0, 2.0, 2.0, 0.0, 0.0, 1.0, 1.0]);
    assert!(g.gather(t, &[4]).is_err());
}

#[test]
fn every_composite_op_passes_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (store, ids) = store_with(&[
        ("a", random(&[3, 4], &mut rng)),
        ("b", random(&[1, 4], &mut rng)),
        ("w", random(&[3, 1], &mut rng)),
        ("c", random(&[4, 4], &mut rng)),
    ]);
    let f = |g: &mut Graph<'_>| {
        let (a, b, w, c) = (g.param(ids[0]), g.param(ids[1]), g.param(ids[2]), g.param(ids[3]));
        let x = g.add_row(a, b)?;
        let x = g.mul_row(x, b)?;
        let x = g.scale_rows(x, w)?;
        let x = g.layer_norm_rows(x, 1e-5)?;
        let s = g.sigmoid(x);
        let t = g.tanh(x);
        let t = g.add(t, s)?;
        let bb = g.broadcast_rows(b, 3)?;
        let cat = g.concat_cols(&[t, bb])?;
        let left = g.slice_cols(cat, 1, 5)?;
        let mm = g.matmul(left, c)?;
        let sm = g.softmax(mm, 0)?;
        let top = g.slice_rows(sm, 0, 2)?;
        let stacked = g.concat_rows(&[top, a])?;
        let allowed = [true, false, true, true].repeat(5);
        let ms = g.masked_softmax_rows(stacked, &allowed)?;
        let tr = g.transpose(ms)?;
        let sq = g.sum_squares(tr);
        let sub = g.sub(mm, mm)?;
        let z = g.sum(sub);
        let e = g.add(sq, z)?;
        let cl = g.clamp(e, 1e-12, 1e12);
        let lg = g.ln(cl);
        let direct = g.sum_squares(mm);
        g.add(lg, direct)
    };
    let report = finite_difference_check(f, &store, 1e-5).unwrap();
    assert!(report.max_rel_err < 1e-5, "{report:?}");
}

proptest! {
    #[test]
    fn softmax_slices_sum_to_one(values in prop::collection::vec(-50.0f64..50.0, 2..24), axis in 0usize..2) {
        let rows = if values.len() % 2 == 0 { 2 } else { 1 };
        let cols = values.len() / rows;
        let n = rows * cols;
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![rows, cols], values[..n].to_vec()).unwrap());
        let y = g.softmax(x, axis).unwrap();
        let t = g.value(y);
        if axis == 1 {
            for r in 0..rows {
                prop_assert!((t.row_slice(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        } else {
            for c in 0..cols {
                let s: f64 = (0..rows).map(|r| t.get(r, c)).sum();
                prop_assert!((s - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn matmul_is_associative(seed in 0u64..1000, m in 1usize..5, k in 1usize..5, n in 1usize..5, p in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&[m, k], &mut rng);
        let b = random(&[k, n], &mut rng);
        let c = random(&[n, p], &mut rng);
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        prop_assert!(left.max_abs_diff(&right) < 1e-9);
    }

    #[test]
    fn stop_gradient_only_paths_give_exact_zero(seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (store, ids) = store_with(&[("x", random(&[2, 3], &mut rng)), ("y", random(&[3, 2], &mut rng))]);
        let mut grads = Gradients::zeros_like(&store);
        let mut g = Graph::with_params(&store);
        let (x, y) = (g.param(ids[0]), g.param(ids[1]));
        let sx = g.stop_gradient(x);
        let h = g.matmul(sx, y).unwrap();
        let h = g.tanh(h);
        let loss = g.sum(h);
        g.backward_into(loss, &mut grads).unwrap();
        prop_assert!(grads.get(ids[0]).data().iter().all(|&v| v == 0.0));
        prop_assert!(grads.max_abs(ids[1]) > 0.0);
    }

    #[test]
    fn composed_expressions_pass_gradcheck(seed in 0u64..200) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (store, ids) = store_with(&[("q", random(&[2, 3], &mut rng)), ("k", random(&[4, 3], &mut rng))]);
        let f = |g: &mut Graph<'_>| {
            let (q, k) = (g.param(ids[0]), g.param(ids[1]));
            let att = attention(g, q, k, k, AttentionMask::Causal(&[true, true, false, true]))?;
            let s = g.sigmoid(att);
            Ok(g.sum_squares(s))
        };
        let report = finite_difference_check(f, &store, 1e-5).unwrap();
        prop_assert!(report.max_rel_err < 1e-5, "{:?}", report.worst());
    }
}
