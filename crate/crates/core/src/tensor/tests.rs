use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, v).unwrap()
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = numel(shape);
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn positive(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = numel(shape);
    Tensor::new(shape, (0..n).map(|_| rng.random_range(0.2..2.0)).collect()).unwrap()
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len(), "length mismatch");
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol, "element {i}: {x} vs {y}");
    }
}

/// Grad-checks `op` applied to freshly drawn inputs over five seeds. The
/// output is contracted with fixed random weights so every element matters.
fn check_op(
    shapes: &[&[usize]],
    draw: fn(&mut ChaCha8Rng, &[usize]) -> Tensor<f64>,
    op: impl Fn(&mut Tape<f64>, &[Var]) -> Var,
) {
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let ids: Vec<ParamId> = shapes
            .iter()
            .enumerate()
            .map(|(i, s)| store.add(format!("in{i}"), draw(&mut rng, s)).unwrap())
            .collect();
        let probe_seed = rng.random::<u64>();
        let loss = |p: &ParamStore<f64>, tape: &mut Tape<f64>| -> crate::Result<Var> {
            let vars: Vec<Var> = ids.iter().map(|&id| tape.param(p, id)).collect();
            let y = op(tape, &vars);
            let mut prng = ChaCha8Rng::seed_from_u64(probe_seed);
            let w = random(&mut prng, tape.shape(y));
            let wv = tape.constant(w);
            let prod = tape.mul(y, wv)?;
            Ok(tape.sum(prod))
        };
        let err = grad_check(loss, &store, 1e-5).unwrap();
        assert!(err < 1e-4, "seed {seed}: relative error {err}");
    }
}

fn forward(shapes_vals: Vec<Tensor<f64>>, op: impl Fn(&mut Tape<f64>, &[Var]) -> Var) -> Tensor<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = shapes_vals.into_iter().map(|x| tape.constant(x)).collect();
    let y = op(&mut tape, &vars);
    tape.value(y).clone()
}

#[test]
fn matmul_examples() {
    let eye = t(&[2, 2], &[1., 0., 0., 1.]);
    let m = t(&[2, 2], &[3., 4., 5., 6.]);
    let y = forward(vec![eye, m.clone()], |tp, v| tp.matmul(v[0], v[1]).unwrap());
    assert_eq!(y.values(), m.values());

    let y = forward(vec![t(&[2, 2], &[1., 2., 3., 4.]), t(&[2, 1], &[1., 1.])], |tp, v| {
        tp.matmul(v[0], v[1]).unwrap()
    });
    assert_eq!(y.shape(), [2, 1]);
    assert_eq!(y.values(), [3., 7.]);

    let y = forward(vec![m, Tensor::zeros(&[2, 3])], |tp, v| tp.matmul(v[0], v[1]).unwrap());
    assert!(y.values().iter().all(|&x| x == 0.0));
}

#[test]
fn matmul_rejects_mismatch() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    let err = tape.matmul(a, b).unwrap_err();
    assert!(err.to_string().contains("inner extents"), "{err}");
}

#[test]
fn matmul_transposes_agree_with_explicit_transpose() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = random(&mut rng, &[4, 3]);
    let b = random(&mut rng, &[5, 3]);
    let direct = forward(vec![a.clone(), b.clone()], |tp, v| tp.matmul_t(v[0], false, v[1], true).unwrap());
    let explicit = forward(vec![a, b], |tp, v| {
        let bt = tp.transpose(v[1]).unwrap();
        tp.matmul(v[0], bt).unwrap()
    });
    assert_close(direct.values(), explicit.values(), 1e-12);
}

#[test]
fn matmul_gradients() {
    check_op(&[&[3, 4], &[4, 2]], random, |tp, v| tp.matmul(v[0], v[1]).unwrap());
    check_op(&[&[4, 3], &[2, 4]], random, |tp, v| tp.matmul_t(v[0], true, v[1], true).unwrap());
    check_op(&[&[3, 4]], random, |tp, v| tp.matmul_t(v[0], false, v[0], true).unwrap());
    check_op(&[&[3, 4]], random, |tp, v| tp.transpose(v[0]).unwrap());
}

#[test]
fn conv2d_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&mut rng, &[1, 4, 5]);
    let y = forward(vec![x.clone(), t(&[1, 1, 1, 1], &[1.])], |tp, v| tp.conv2d(v[0], v[1], 1, 0).unwrap());
    assert_eq!(y.values(), x.values());

    let y = forward(vec![Tensor::full(&[1, 3, 3], 1.0), Tensor::full(&[1, 1, 3, 3], 1.0)], |tp, v| {
        tp.conv2d(v[0], v[1], 1, 1).unwrap()
    });
    assert_eq!(y.shape(), [1, 3, 3]);
    assert_eq!(y.at(&[0, 1, 1]), 9.0);
    assert_eq!(y.at(&[0, 0, 0]), 4.0);
    assert_eq!(y.at(&[0, 0, 1]), 6.0);
}

#[test]
fn conv2d_strided_halves_even_extents() {
    let y = forward(vec![Tensor::zeros(&[1, 128, 128]), Tensor::zeros(&[2, 1, 3, 3])], |tp, v| {
        tp.conv2d(v[0], v[1], 2, 1).unwrap()
    });
    assert_eq!(y.shape(), [2, 64, 64]);
}

#[test]
fn conv2d_matches_direct_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random(&mut rng, &[2, 6, 6]);
    let w = random(&mut rng, &[3, 2, 3, 3]);
    let y = forward(vec![x.clone(), w.clone()], |tp, v| tp.conv2d(v[0], v[1], 2, 1).unwrap());
    assert_eq!(y.shape(), [3, 3, 3], "floor((6 + 2 - 3) / 2) + 1");
    for co in 0..3 {
        for oi in 0..3 {
            for oj in 0..3 {
                let mut acc = 0.0;
                for ci in 0..2 {
                    for ki in 0..3 {
                        for kj in 0..3 {
                            let (ii, jj) = ((oi * 2 + ki) as isize - 1, (oj * 2 + kj) as isize - 1);
                            if (0..6).contains(&ii) && (0..6).contains(&jj) {
                                acc += x.at(&[ci, ii as usize, jj as usize]) * w.at(&[co, ci, ki, kj]);
                            }
                        }
                    }
                }
                assert!((y.at(&[co, oi, oj]) - acc).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn conv2d_rejects_bad_geometry() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros(&[1, 4, 4]));
    let w = tape.constant(Tensor::zeros(&[1, 1, 5, 5]));
    assert!(tape.conv2d(x, w, 1, 0).is_err());
    let w2 = tape.constant(Tensor::zeros(&[1, 1, 2, 2]));
    assert!(tape.conv2d(x, w2, 1, 0).is_err());
}

#[test]
fn conv2d_gradients() {
    check_op(&[&[2, 5, 5], &[3, 2, 3, 3]], random, |tp, v| tp.conv2d(v[0], v[1], 1, 1).unwrap());
    check_op(&[&[2, 6, 6], &[2, 2, 3, 3]], random, |tp, v| tp.conv2d(v[0], v[1], 2, 1).unwrap());
    check_op(&[&[3, 4, 4], &[2, 3, 1, 1]], random, |tp, v| tp.conv2d(v[0], v[1], 1, 0).unwrap());
}

#[test]
fn upsample_and_pool_examples() {
    let y = forward(vec![t(&[1, 2, 2], &[1., 2., 3., 4.])], |tp, v| tp.upsample2x(v[0]).unwrap());
    assert_eq!(
        y.values(),
        [1., 1., 2., 2., 1., 1., 2., 2., 3., 3., 4., 4., 3., 3., 4., 4.]
    );
    let y = forward(vec![Tensor::full(&[2, 3, 2], 0.7)], |tp, v| tp.upsample2x(v[0]).unwrap());
    assert_eq!(y.shape(), [2, 6, 4]);
    assert!(y.values().iter().all(|&x| x == 0.7));

    let y = forward(vec![t(&[1, 2, 2], &[1., 2., 3., 4.])], |tp, v| tp.avgpool2x(v[0]).unwrap());
    assert_eq!(y.values(), [2.5]);
    let y = forward(vec![t(&[1, 2, 2], &[0., 0., 0., 4.])], |tp, v| tp.avgpool2x(v[0]).unwrap());
    assert_eq!(y.values(), [1.0]);
    let y = forward(vec![Tensor::full(&[1, 4, 4], -3.0)], |tp, v| tp.avgpool2x(v[0]).unwrap());
    assert!(y.values().iter().all(|&x| x == -3.0));

    let mut tape = Tape::<f64>::new();
    let odd = tape.constant(Tensor::zeros(&[1, 3, 4]));
    assert!(tape.avgpool2x(odd).is_err());
}

#[test]
fn pool_inverts_upsample() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[3, 4, 5]);
        let y = forward(vec![x.clone()], |tp, v| {
            let u = tp.upsample2x(v[0]).unwrap();
            tp.avgpool2x(u).unwrap()
        });
        assert_close(y.values(), x.values(), 1e-12);
    }
}

#[test]
fn upsample_pool_gradients() {
    check_op(&[&[2, 3, 3]], random, |tp, v| tp.upsample2x(v[0]).unwrap());
    check_op(&[&[2, 4, 6]], random, |tp, v| tp.avgpool2x(v[0]).unwrap());
}

#[test]
fn softmax_examples() {
    let y = forward(vec![t(&[2], &[0., 0.])], |tp, v| tp.softmax(v[0], 0).unwrap());
    assert_eq!(y.values(), [0.5, 0.5]);
    let y = forward(vec![t(&[3], &[1., 2., 3.])], |tp, v| tp.softmax(v[0], 0).unwrap());
    // exp(k)/Σ exp, evaluated independently.
    let z: f64 = (1..=3).map(|k| (k as f64).exp()).sum();
    let expect: Vec<f64> = (1..=3).map(|k| (k as f64).exp() / z).collect();
    assert_close(y.values(), &expect, 1e-15);
    assert_close(y.values(), &[0.0900, 0.2447, 0.6652], 5e-5);
    let shifted = forward(vec![t(&[3], &[101., 102., 103.])], |tp, v| tp.softmax(v[0], 0).unwrap());
    assert_close(shifted.values(), y.values(), 1e-12);
}

#[test]
fn softmax_along_inner_axis_sums_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&mut rng, &[3, 4, 5]);
    for axis in 0..3 {
        let y = forward(vec![x.clone()], |tp, v| tp.softmax(v[0], axis).unwrap());
        let shape = [3, 4, 5];
        let (outer, len, inner) = axis_split(&shape, axis);
        for o in 0..outer {
            for i in 0..inner {
                let s: f64 = (0..len).map(|a| y.values()[(o * len + a) * inner + i]).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
        assert!(y.values().iter().all(|&p| p >= 0.0));
    }
}

#[test]
fn softmax_gradients() {
    check_op(&[&[3, 4]], random, |tp, v| tp.softmax(v[0], 1).unwrap());
    check_op(&[&[3, 4, 2]], random, |tp, v| tp.softmax(v[0], 1).unwrap());
}

#[test]
fn instance_norm_examples() {
    let y = forward(vec![Tensor::full(&[3, 3], 2.5)], |tp, v| tp.instance_norm(v[0], 1e-5).unwrap());
    assert!(y.values().iter().all(|&x| x.abs() <= 1e-12));
    let y = forward(vec![t(&[2], &[1., 3.])], |tp, v| tp.instance_norm(v[0], 1e-12).unwrap());
    assert_close(y.values(), &[-1.0, 1.0], 1e-9);

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let y = forward(vec![random(&mut rng, &[6, 7])], |tp, v| tp.instance_norm(v[0], 1e-9).unwrap());
    let n = y.len() as f64;
    let mean: f64 = y.values().iter().sum::<f64>() / n;
    let var: f64 = y.values().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    assert!(mean.abs() < 1e-12);
    assert!((var - 1.0).abs() < 1e-6);

    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros(&[2]));
    assert!(tape.instance_norm(x, 0.0).is_err());
}

#[test]
fn normalisation_gradients() {
    check_op(&[&[4, 4]], random, |tp, v| tp.instance_norm(v[0], 1e-5).unwrap());
    check_op(&[&[3, 5], &[5], &[5]], random, |tp, v| tp.layer_norm(v[0], v[1], v[2], 1e-5).unwrap());
    check_op(&[&[4, 3]], positive, |tp, v| tp.normalize_rows(v[0]).unwrap());
    check_op(&[&[4, 3]], positive, |tp, v| tp.normalize_cols(v[0]).unwrap());
}

#[test]
fn pointwise_examples() {
    let y = forward(vec![t(&[1], &[0.])], |tp, v| tp.sigmoid(v[0]));
    assert_eq!(y.values(), [0.5]);
    let y = forward(vec![t(&[2], &[-1., 2.])], |tp, v| tp.relu(v[0]));
    assert_eq!(y.values(), [0., 2.]);
    let y = forward(vec![Tensor::zeros(&[2, 3, 3]), Tensor::zeros(&[5, 3, 3])], |tp, v| {
        tp.concat(&[v[0], v[1]], 0).unwrap()
    });
    assert_eq!(y.shape(), [7, 3, 3]);
    let y = forward(vec![t(&[2, 2], &[1., 2., 3., 4.]), t(&[2, 1], &[9., 8.])], |tp, v| {
        tp.concat(&[v[0], v[1]], 1).unwrap()
    });
    assert_eq!(y.values(), [1., 2., 9., 3., 4., 8.]);
    let y = forward(vec![t(&[2, 3], &[1., 2., 3., 4., 5., 6.]), t(&[3], &[10., 20., 30.])], |tp, v| {
        tp.add(v[0], v[1]).unwrap()
    });
    assert_eq!(y.values(), [11., 22., 33., 14., 25., 36.]);
}

#[test]
fn embed_lookup_and_range_check() {
    let table = t(&[3, 2], &[0., 1., 10., 11., 20., 21.]);
    let y = forward(vec![table.clone()], |tp, v| tp.embed(v[0], &[2, 0, 2]).unwrap());
    assert_eq!(y.values(), [20., 21., 0., 1., 20., 21.]);
    let mut tape = Tape::<f64>::new();
    let tv = tape.constant(table);
    let err = tape.embed(tv, &[3]).unwrap_err();
    assert!(err.to_string().contains("out of range"));
}

#[test]
fn pointwise_gradients() {
    check_op(&[&[3, 4], &[4]], random, |tp, v| tp.add(v[0], v[1]).unwrap());
    check_op(&[&[3, 4], &[3, 4]], random, |tp, v| tp.sub(v[0], v[1]).unwrap());
    check_op(&[&[2, 3, 4], &[3, 4]], random, |tp, v| tp.mul(v[0], v[1]).unwrap());
    check_op(&[&[3, 4]], random, |tp, v| tp.relu(v[0]));
    check_op(&[&[3, 4]], random, |tp, v| tp.sigmoid(v[0]));
    check_op(&[&[3, 4]], random, |tp, v| tp.exp(v[0]));
    check_op(&[&[3, 4]], positive, |tp, v| tp.log(v[0]).unwrap());
    check_op(&[&[3, 4]], random, |tp, v| tp.scale(v[0], -1.7));
    check_op(&[&[2, 2, 3], &[1, 2, 3]], random, |tp, v| tp.concat(&[v[0], v[1]], 0).unwrap());
    check_op(&[&[2, 2, 3], &[2, 4, 3]], random, |tp, v| tp.concat(&[v[0], v[1]], 1).unwrap());
    check_op(&[&[5, 3]], random, |tp, v| tp.embed(v[0], &[4, 1, 4, 0]).unwrap());
    check_op(&[&[3, 2, 2], &[3]], random, |tp, v| tp.add_channel(v[0], v[1]).unwrap());
    check_op(&[&[3, 2, 2], &[3]], random, |tp, v| tp.mul_channel(v[0], v[1]).unwrap());
    check_op(&[&[6, 3]], random, |tp, v| tp.gather_rows(v[0], &[5, 0, 5, 2]).unwrap());
    check_op(&[&[4, 3]], random, |tp, v| tp.mean_rows(v[0]).unwrap());
    check_op(&[&[4, 3]], random, |tp, v| tp.reshape(v[0], &[2, 6]).unwrap());
}

#[test]
fn scalar_reductions_and_losses() {
    check_op(&[&[3, 3]], positive, |tp, v| {
        let r = tp.normalize_rows(v[0]).unwrap();
        tp.diag_nll(r).unwrap()
    });
    check_op(&[&[4, 2]], random, |tp, v| {
        tp.masked_mse(v[0], &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8], &[true, false, true, true])
            .unwrap()
    });
    check_op(&[&[4, 2]], random, |tp, v| tp.mean(v[0]));
}

#[test]
fn attention_rows_are_distributions_and_gradients_hold() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut tape = Tape::<f64>::new();
    let q = tape.constant(random(&mut rng, &[5, 8]));
    let k = tape.constant(random(&mut rng, &[3, 8]));
    let v = tape.constant(random(&mut rng, &[3, 8]));
    let out = tape.attention(q, k, v, 4).unwrap();
    assert_eq!(tape.shape(out), [5, 8]);
    let probs = tape.attention_weights(out).unwrap();
    for row in probs.chunks(3) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    assert!(tape.attention(q, k, v, 3).is_err());

    check_op(&[&[4, 8], &[3, 8], &[3, 8]], random, |tp, v| tp.attention(v[0], v[1], v[2], 2).unwrap());
    check_op(&[&[4, 6]], random, |tp, v| tp.attention(v[0], v[0], v[0], 3).unwrap());
}

#[test]
fn attention_matches_naive_single_head() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (q, k, v) = (random(&mut rng, &[2, 3]), random(&mut rng, &[4, 3]), random(&mut rng, &[4, 3]));
    let y = forward(vec![q.clone(), k.clone(), v.clone()], |tp, x| tp.attention(x[0], x[1], x[2], 1).unwrap());
    for i in 0..2 {
        let scores: Vec<f64> = (0..4)
            .map(|j| (0..3).map(|c| q.at(&[i, c]) * k.at(&[j, c])).sum::<f64>() / 3f64.sqrt())
            .collect();
        let z: f64 = scores.iter().map(|s| s.exp()).sum();
        for c in 0..3 {
            let expect: f64 = (0..4).map(|j| scores[j].exp() / z * v.at(&[j, c])).sum();
            assert!((y.at(&[i, c]) - expect).abs() < 1e-12);
        }
    }
}

#[test]
fn grad_check_trivial_cases() {
    let mut store = ParamStore::new();
    let x = store.add("x", t(&[2], &[1., 2.])).unwrap();
    let mut tape = Tape::new();
    let xv = tape.param(&store, x);
    let sq = tape.mul(xv, xv).unwrap();
    let s = tape.sum(sq);
    let grads = tape.backward(s).unwrap();
    assert_eq!(grads.wrt(xv).unwrap(), [2.0, 4.0]);
    let err = grad_check(
        |p, tp| {
            let v = tp.param(p, x);
            let sq = tp.mul(v, v)?;
            Ok(tp.sum(sq))
        },
        &store,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6, "{err}");

    let err = grad_check(|_, tp| Ok(tp.constant(Tensor::scalar(3.0))), &store, 1e-5).unwrap();
    assert_eq!(err, 0.0);

    let bad_step = grad_check(|_, tp| Ok(tp.constant(Tensor::scalar(3.0))), &store, 1e-2);
    assert!(bad_step.is_err());
    let non_finite = grad_check(
        |p, tp| {
            let v = tp.param(p, x);
            let s = tp.sum(v);
            Ok(tp.scale(s, f64::INFINITY))
        },
        &store,
        1e-5,
    );
    assert!(non_finite.is_err());
}

#[test]
fn operations_are_bitwise_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut tape = Tape::<f64>::new();
        let x = tape.input(random(&mut rng, &[2, 6, 6]));
        let w = tape.input(random(&mut rng, &[4, 2, 3, 3]));
        let c = tape.conv2d(x, w, 1, 1).unwrap();
        let r = tape.reshape(c, &[4, 36]).unwrap();
        let tr = tape.transpose(r).unwrap();
        let a = tape.attention(tr, tr, tr, 2).unwrap();
        let s = tape.sum(a);
        let g = tape.backward(s).unwrap();
        (tape.values(a).to_vec(), g.wrt(w).unwrap().to_vec())
    };
    assert_eq!(run(), run());
}

#[test]
fn f32_instantiation_runs() {
    let mut tape = Tape::<f32>::new();
    let a = tape.input(Tensor::from_f64(&[2, 2], &[1., 2., 3., 4.]).unwrap());
    let b = tape.matmul(a, a).unwrap();
    assert_eq!(tape.values(b), [7.0f32, 10.0, 15.0, 22.0]);
    let s = tape.sum(b);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.wrt(a).unwrap().len(), 4);
}

#[test]
fn tensor_shape_invariants() {
    assert!(Tensor::<f64>::new(&[2, 3], vec![0.0; 5]).is_err());
    let mut x = Tensor::<f64>::zeros(&[2, 2]);
    assert!(x.accumulate_grad(&[1.0; 3]).is_err());
    x.accumulate_grad(&[1.0; 4]).unwrap();
    x.accumulate_grad(&[0.5; 4]).unwrap();
    assert_eq!(x.grad().unwrap(), [1.5; 4]);
    let mut store = ParamStore::<f64>::new();
    store.add("a", x.clone()).unwrap();
    assert!(store.add("a", x).is_err());
}
