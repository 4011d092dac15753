use pac_autodiff::{grad_check, kl_diag_gaussian, relative_error, AutodiffError, OpKind, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn t32(shape: &[usize], data: &[f32]) -> Tensor {
    Tensor::from_slice(shape, data).unwrap()
}

fn rand64(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

#[test]
fn matmul_softmax_relu_forward() {
    let mut tape = Tape::<f32>::new();
    let a = tape.constant(t32(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let b = tape.constant(t32(&[2, 1], &[1.0, 1.0]));
    let c = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(c).shape(), &[2, 1]);
    assert_eq!(tape.value(c).data(), &[3.0, 7.0]);

    let z = tape.constant(t32(&[3], &[0.0, 0.0, 0.0]));
    let s = tape.softmax(z, 0).unwrap();
    for &p in tape.value(s).data() {
        assert!((p - 1.0 / 3.0).abs() < 1e-7);
    }

    let x = tape.constant(t32(&[3], &[-1.0, 0.0, 2.0]));
    let r = tape.relu(x).unwrap();
    assert_eq!(tape.value(r).data(), &[0.0, 0.0, 2.0]);
}

#[test]
fn apply_dispatches_by_kind() {
    let mut tape = Tape::<f32>::new();
    let a = tape.constant(t32(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let b = tape.constant(t32(&[2, 1], &[1.0, 1.0]));
    let c = tape.apply(OpKind::MatMul, &[a, b]).unwrap();
    assert_eq!(tape.value(c).data(), &[3.0, 7.0]);
    let s = tape.apply(OpKind::Sum(0), &[a]).unwrap();
    assert_eq!(tape.value(s).data(), &[4.0, 6.0]);
    let g = tape.apply(OpKind::Gather(vec![1, 0]), &[a]).unwrap();
    assert_eq!(tape.value(g).data(), &[2.0, 3.0]);
    let k = tape.apply(OpKind::ScalarMul(-2.0), &[b]).unwrap();
    assert_eq!(tape.value(k).data(), &[-2.0, -2.0]);
    assert!(tape.apply(OpKind::Add, &[a]).is_err());
}

#[test]
fn square_sum_gradient() {
    let mut tape = Tape::<f32>::new();
    let x = tape.param(t32(&[3], &[1.0, 2.0, 3.0]));
    let sq = tape.mul(x, x).unwrap();
    let l = tape.sum_all(sq).unwrap();
    let g = tape.backward(l).unwrap();
    assert_eq!(g.get(x).data(), &[2.0, 4.0, 6.0]);
}

#[test]
fn cross_entropy_gradient_on_uniform_logits() {
    let mut tape = Tape::<f32>::new();
    let logits = tape.param(t32(&[1, 2], &[0.0, 0.0]));
    let lp = tape.log_softmax(logits, 1).unwrap();
    let picked = tape.gather(lp, &[0]).unwrap();
    let l = tape.neg(picked).unwrap();
    let l = tape.sum_all(l).unwrap();
    let g = tape.backward(l).unwrap();
    let d = g.get(logits);
    assert!((d.data()[0] + 0.5).abs() < 1e-7);
    assert!((d.data()[1] - 0.5).abs() < 1e-7);
}

#[test]
fn unreached_leaves_get_zero_gradient() {
    let mut tape = Tape::<f32>::new();
    let x = tape.param(t32(&[2], &[1.0, 2.0]));
    let y = tape.param(t32(&[3], &[1.0, 2.0, 3.0]));
    let l = tape.sum_all(x).unwrap();
    let g = tape.backward(l).unwrap();
    assert!(!g.reached(y));
    assert_eq!(g.get(y).data(), &[0.0, 0.0, 0.0]);
    assert_eq!(g.get(y).shape(), &[3]);
}

#[test]
fn detach_blocks_gradient() {
    let mut tape = Tape::<f32>::new();
    let x = tape.param(t32(&[2], &[1.0, 2.0]));
    let d = tape.detach(x).unwrap();
    let p = tape.mul(x, d).unwrap();
    let l = tape.sum_all(p).unwrap();
    let g = tape.backward(l).unwrap();
    assert_eq!(g.get(x).data(), &[1.0, 2.0]);
}

#[test]
fn structured_errors() {
    let mut tape = Tape::<f32>::new();
    let a = tape.param(t32(&[2, 3], &[1.0; 6]));
    let b = tape.param(t32(&[2, 3], &[1.0; 6]));
    match tape.matmul(a, b) {
        Err(AutodiffError::ShapeMismatch { op, lhs, rhs }) => {
            assert_eq!(op, "matmul");
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![2, 3]);
        }
        other => panic!("expected shape error, got {other:?}"),
    }
    let c = tape.param(t32(&[4], &[1.0; 4]));
    assert!(matches!(tape.add(a, c), Err(AutodiffError::ShapeMismatch { .. })));

    let neg = tape.constant(t32(&[3], &[1.0, -1.0, 2.0]));
    match tape.log(neg) {
        Err(AutodiffError::Domain { index, .. }) => assert_eq!(index, 1),
        other => panic!("expected domain error, got {other:?}"),
    }
    let zero = tape.constant(t32(&[1], &[0.0]));
    assert!(tape.log(zero).is_err());

    assert!(matches!(tape.backward(a), Err(AutodiffError::NonScalarLoss(_))));

    let mut other = Tape::<f32>::new();
    let foreign = other.param(t32(&[1], &[1.0]));
    assert!(matches!(tape.relu(foreign), Err(AutodiffError::ForeignVar)));

    assert!(Tensor::<f32>::new(vec![2, 2], vec![1.0; 3]).is_err());
}

#[test]
fn masked_log_softmax_normalises_and_blocks_gradient() {
    let mut tape = Tape::<f32>::new();
    let x = tape.param(t32(&[2, 3], &[0.3, -1.0, 2.0, 0.5, 0.1, 0.2]));
    let avail = [true, false, true, false, false, true];
    let lp = tape.masked_log_softmax(x, &avail).unwrap();
    let v = tape.value(lp).data().to_vec();
    assert_eq!(v[1], f32::NEG_INFINITY);
    assert!((v[0].exp() + v[2].exp() - 1.0).abs() < 1e-6);
    assert_eq!(v[5], 0.0);

    let safe = tape.masked_fill(lp, &avail, 0.0).unwrap();
    let w = tape.constant(t32(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    let p = tape.mul(safe, w).unwrap();
    let l = tape.sum_all(p).unwrap();
    let g = tape.backward(l).unwrap().get(x);
    assert!(g.all_finite());
    assert_eq!(g.data()[1], 0.0);
    assert_eq!(g.data()[3], 0.0);
    assert_eq!(g.data()[4], 0.0);
    assert_eq!(g.data()[5], 0.0);

    let mut tape = Tape::<f32>::new();
    let x = tape.param(t32(&[1, 2], &[0.0, 0.0]));
    assert!(tape.masked_log_softmax(x, &[false, false]).is_err());
}

#[test]
fn custom_op_uses_supplied_vjp() {
    let mut tape = Tape::<f32>::new();
    let x = tape.param(t32(&[2], &[1.0, 2.0]));
    let v = tape.value(x).map(|a| 3.0 * a);
    let y = tape
        .custom(&[x], v, Box::new(|_, _, g| vec![g.map(|a| 3.0 * a)]))
        .unwrap();
    let l = tape.sum_all(y).unwrap();
    assert_eq!(tape.value(l).item(), 9.0);
    let g = tape.backward(l).unwrap();
    assert_eq!(g.get(x).data(), &[3.0, 3.0]);
}

type Builder = fn(&mut Tape<f64>, &[Var]) -> pac_autodiff::Result<Var>;

fn check_op(name: &str, shapes: &[&[usize]], f: Builder, positive: bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64 * 7919);
    let params: Vec<Tensor<f64>> = shapes
        .iter()
        .map(|s| {
            let t = rand64(&mut rng, s, 1.0);
            if positive {
                t.map(|v| v.abs() + 0.5)
            } else {
                t.map(|v| if v.abs() < 0.05 { v + 0.2 } else { v })
            }
        })
        .collect();
    let report = grad_check(f, &params, 1e-5).unwrap();
    assert!(report.max_relative_error < 1e-6, "{name}: {report:?}");
}

fn weighted_sum(tape: &mut Tape<f64>, x: Var) -> pac_autodiff::Result<Var> {
    let n = tape.value(x).len();
    let w: Vec<f64> = (0..n).map(|i| 0.3 + 0.17 * i as f64).collect();
    let w = tape.constant(Tensor::new(tape.shape(x).to_vec(), w)?);
    let p = tape.mul(x, w)?;
    tape.sum_all(p)
}

#[test]
fn every_op_matches_central_differences() {
    check_op(
        "matmul",
        &[&[3, 4], &[4, 2]],
        |t, p| {
            let y = t.matmul(p[0], p[1])?;
            weighted_sum(t, y)
        },
        false,
    );
    check_op(
        "add_broadcast",
        &[&[3, 4], &[4]],
        |t, p| {
            let y = t.add(p[0], p[1])?;
            let y = t.mul(y, y)?;
            weighted_sum(t, y)
        },
        false,
    );
    check_op(
        "sub_broadcast",
        &[&[3, 1], &[2, 3, 4]],
        |t, p| {
            let y = t.sub(p[0], p[1])?;
            let y = t.mul(y, y)?;
            weighted_sum(t, y)
        },
        false,
    );
    check_op(
        "mul_broadcast",
        &[&[2, 1, 4], &[3, 1]],
        |t, p| {
            let y = t.mul(p[0], p[1])?;
            weighted_sum(t, y)
        },
        false,
    );
    check_op(
        "scale_shift",
        &[&[5]],
        |t, p| {
            let y = t.scale(p[0], -1.7)?;
            let y = t.add_scalar(y, 0.4)?;
            let y = t.mul(y, y)?;
            weighted_sum(t, y)
        },
        false,
    );
    check_op(
        "relu",
        &[&[6]],
        |t, p| {
            let y = t.relu(p[0])?;
            weighted_sum(t, y)
        },
        false,
    );
    check_op(
        "abs",
        &[&[6]],
        |t, p| {
            let y = t.abs(p[0])?;
            weighted_sum(t, y)
        },
        false,
    );
    check_op(
        "tanh",
        &[&[6]],
        |t, p| {
            let y = t.tanh(p[0])?;
            weighted_sum(t, y)
        },
        false,
    );
    check_op(
        "sigmoid",
        &[&[6]],
        |t, p| {
            let y = t.sigmoid(p[0])?;
            weighted_sum(t, y)
        },
        false,
    );
    check_op(
        "elu",
        &[&[6]],
        |t, p| {
            let y = t.elu(p[0])?;
            weighted_sum(t, y)
        },
        false,
    );
    check_op(
        "exp",
        &[&[6]],
        |t, p| {
            let y = t.exp(p[0])?;
            weighted_sum(t, y)
        },
        false,
    );
    check_op(
        "log",
        &[&[6]],
        |t, p| {
            let y = t.log(p[0])?;
            weighted_sum(t, y)
        },
        true,
    );
    check_op(
        "sum_axis",
        &[&[2, 3, 4]],
        |t, p| {
            let y = t.sum_axis(p[0], 1)?;
            let y = t.mul(y, y)?;
            weighted_sum(t, y)
        },
        false,
    );
    check_op(
        "mean_axis",
        &[&[2, 3, 4]],
        |t, p| {
            let y = t.mean_axis(p[0], 2)?;
            let y = t.mul(y, y)?;
            weighted_sum(t, y)
        },
        false,
    );
    check_op(
        "mean_all",
        &[&[2, 3]],
        |t, p| {
            let y = t.mul(p[0], p[0])?;
            t.mean_all(y)
        },
        false,
    );
    check_op(
        "concat",
        &[&[2, 3], &[2, 2]],
        |t, p| {
            let y = t.concat(&[p[0], p[1]], 1)?;
            let y = t.mul(y, y)?;
            weighted_sum(t, y)
        },
        false,
    );
    check_op(
        "gather",
        &[&[3, 4]],
        |t, p| {
            let y = t.gather(p[0], &[3, 0, 2])?;
            let y = t.mul(y, y)?;
            weighted_sum(t, y)
        },
        false,
    );
    check_op(
        "softmax",
        &[&[3, 4]],
        |t, p| {
            let y = t.softmax(p[0], 1)?;
            weighted_sum(t, y)
        },
        false,
    );
    check_op(
        "log_softmax",
        &[&[4, 3]],
        |t, p| {
            let y = t.log_softmax(p[0], 0)?;
            weighted_sum(t, y)
        },
        false,
    );
    check_op(
        "masked_log_softmax",
        &[&[2, 3]],
        |t, p| {
            let avail = [true, false, true, true, true, false];
            let y = t.masked_log_softmax(p[0], &avail)?;
            let y = t.masked_fill(y, &avail, 0.0)?;
            weighted_sum(t, y)
        },
        false,
    );
    check_op(
        "broadcast",
        &[&[3, 1]],
        |t, p| {
            let y = t.broadcast_to(p[0], &[2, 3, 4])?;
            let y = t.mul(y, y)?;
            weighted_sum(t, y)
        },
        false,
    );
    check_op(
        "reshape_narrow",
        &[&[2, 6]],
        |t, p| {
            let y = t.reshape(p[0], &[3, 4])?;
            let y = t.narrow(y, 1, 1, 2)?;
            let y = t.mul(y, y)?;
            weighted_sum(t, y)
        },
        false,
    );
}

fn three_layer(t: &mut Tape<f64>, p: &[Var]) -> pac_autodiff::Result<Var> {
    let h = t.matmul(p[0], p[1])?;
    let h = t.add(h, p[2])?;
    let h = t.tanh(h)?;
    let h = t.matmul(h, p[3])?;
    let h = t.add(h, p[4])?;
    let h = t.elu(h)?;
    let h = t.matmul(h, p[5])?;
    let lp = t.log_softmax(h, 1)?;
    let picked = t.gather(lp, &[0, 2, 1, 1, 0])?;
    let l = t.mean_all(picked)?;
    t.neg(l)
}

#[test]
fn random_three_layer_network_matches_finite_differences() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes: [&[usize]; 6] = [&[5, 4], &[4, 8], &[8], &[8, 6], &[6], &[6, 3]];
        let params: Vec<Tensor<f64>> = shapes.iter().map(|s| rand64(&mut rng, s, 1.0)).collect();
        let report = grad_check(three_layer, &params, 1e-3).unwrap();
        assert!(report.max_relative_error < 1e-3, "seed {seed}: {report:?}");
    }
}

#[test]
fn grad_check_reference_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let params = vec![
        rand64(&mut rng, &[4, 3], 1.0),
        rand64(&mut rng, &[3, 2], 1.0),
        rand64(&mut rng, &[2], 1.0),
    ];
    let linear = |t: &mut Tape<f64>, p: &[Var]| {
        let y = t.matmul(p[0], p[1])?;
        let y = t.add(y, p[2])?;
        weighted_sum(t, y)
    };
    let r = grad_check(linear, &params, 1e-3).unwrap();
    assert!(r.max_relative_error < 1e-4, "{r:?}");
    assert_eq!(r.coordinates, 12 + 6 + 2);

    let constant = |t: &mut Tape<f64>, _: &[Var]| Ok(t.scalar(3.0));
    let r = grad_check(constant, &params, 1e-3).unwrap();
    assert_eq!(r.max_relative_error, 0.0);

    assert_eq!(relative_error(0.0, 0.0), 0.0);
    assert!((relative_error(1.0, 0.5) - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn grad_check_flags_a_wrong_backward_rule() {
    let params = vec![Tensor::<f64>::from_slice(&[3], &[0.5, -0.2, 1.1]).unwrap()];
    let broken = |t: &mut Tape<f64>, p: &[Var]| {
        let v = t.value(p[0]).map(|a| a * a);
        let y = t.custom(
            &[p[0]],
            v,
            Box::new(|ins, _, g| {
                let x = ins[0];
                let d: Vec<f64> = x.data().iter().zip(g.data()).map(|(a, b)| a * b).collect();
                vec![Tensor::new(x.shape().to_vec(), d).unwrap()]
            }),
        )?;
        t.sum_all(y)
    };
    let r = grad_check(broken, &params, 1e-4).unwrap();
    assert!(r.max_relative_error > 0.3);
}

#[test]
fn kl_reference_values() {
    let mut tape = Tape::<f64>::new();
    let mu = tape.constant(Tensor::from_slice(&[3], &[0.3, -1.0, 2.0]).unwrap());
    let lv = tape.constant(Tensor::from_slice(&[3], &[0.1, -0.5, 0.7]).unwrap());
    let kl = kl_diag_gaussian(&mut tape, mu, lv, mu, lv).unwrap();
    assert!(tape.value(kl).item().abs() < 1e-12);

    let zero = tape.constant(Tensor::from_slice(&[1], &[0.0]).unwrap());
    let one = tape.constant(Tensor::from_slice(&[1], &[1.0]).unwrap());
    let kl = kl_diag_gaussian(&mut tape, zero, zero, one, zero).unwrap();
    assert!((tape.value(kl).item() - 0.5).abs() < 1e-12);
}

#[test]
fn kl_broadcasts_a_prior_over_rows() {
    let mut tape = Tape::<f64>::new();
    let mu = tape.constant(Tensor::from_slice(&[2, 2], &[0.0, 1.0, 2.0, 0.0]).unwrap());
    let lv = tape.constant(Tensor::zeros(&[2, 2]));
    let pm = tape.constant(Tensor::zeros(&[2]));
    let plv = tape.constant(Tensor::zeros(&[2]));
    let kl = kl_diag_gaussian(&mut tape, mu, lv, pm, plv).unwrap();
    // ½ Σ μ² = ½ (1 + 4)
    assert!((tape.value(kl).item() - 2.5).abs() < 1e-12);
    let bad = tape.constant(Tensor::zeros(&[3]));
    assert!(kl_diag_gaussian(&mut tape, mu, bad, pm, plv).is_err());
}

#[test]
fn kl_matches_monte_carlo() {
    let (mp, lvp) = ([0.2, -0.4, 1.0, 0.0], [0.3, -0.2, 0.1, 0.5]);
    let (mq, lvq) = ([-0.3, 0.5, 0.2, 0.6], [-0.1, 0.4, 0.0, -0.3]);
    let mut tape = Tape::<f64>::new();
    let v = |tape: &mut Tape<f64>, d: &[f64; 4]| tape.constant(Tensor::from_slice(&[4], d).unwrap());
    let (a, b, c, d) = (
        v(&mut tape, &mp),
        v(&mut tape, &lvp),
        v(&mut tape, &mq),
        v(&mut tape, &lvq),
    );
    let kl = kl_diag_gaussian(&mut tape, a, b, c, d).unwrap();
    let analytic = tape.value(kl).item();

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let n = 1_000_000;
    let mut acc = 0.0;
    for _ in 0..n {
        let mut log_ratio = 0.0;
        for k in 0..4 {
            let sp = (0.5 * lvp[k]).exp();
            let sq = (0.5 * lvq[k]).exp();
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            let x = mp[k] + sp * z;
            let lp = -0.5 * z * z - sp.ln();
            let zq = (x - mq[k]) / sq;
            let lq = -0.5 * zq * zq - sq.ln();
            log_ratio += lp - lq;
        }
        acc += log_ratio;
    }
    let mc = acc / n as f64;
    assert!(
        ((mc - analytic) / analytic).abs() < 0.01,
        "analytic {analytic} vs monte carlo {mc}"
    );
}

#[test]
fn kl_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params: Vec<Tensor<f64>> = (0..4).map(|_| rand64(&mut rng, &[3, 2], 1.0)).collect();
    let r = grad_check(|t, p| kl_diag_gaussian(t, p[0], p[1], p[2], p[3]), &params, 1e-5).unwrap();
    assert!(r.max_relative_error < 1e-6, "{r:?}");
}
