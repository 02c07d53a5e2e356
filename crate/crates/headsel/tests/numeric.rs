//! Gradient and value oracles for the autodiff engine.
//!
//! Every primitive is checked against central finite differences at f64 over
//! 100 seeded random instances. The finite-difference side only re-runs the
//! forward computation, so it is independent of the backward formulas it
//! validates. To avoid vacuous checks (a plain sum of a softmax is constant),
//! each op's output is scalarized through a fixed random weighting.

use headsel::numeric::{
    check_gradients, Mode, NodeId, ParamGrads, ParamStore, Tape, Tensor,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const INSTANCES: u64 = 100;
const H: f64 = 1e-4;
const REL_TOL: f64 = 1e-4;
const ABS_TOL: f64 = 1e-8;

type Build = dyn Fn(&mut Tape<'_, f64>, &ParamStore<f64>) -> NodeId;

fn param(tape: &mut Tape<'_, f64>, store: &ParamStore<f64>, name: &str) -> NodeId {
    tape.param(store.id_by_name(name).expect(name))
}

/// Run the finite-difference oracle on `build` over seeded random parameter
/// settings. `post` lets a case move samples away from non-differentiable
/// points (relu's kink, log's domain edge).
fn fd_op_mapped(name: &str, shapes: &[(&str, &[usize])], post: fn(f64) -> f64, build: &Build) {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (pname, shape) in shapes {
            let mut t = Tensor::uniform(shape, -1.0, 1.0, &mut rng);
            for v in t.data_mut() {
                *v = post(*v);
            }
            store.add(pname, t);
        }

        let weight_seed = seed + 10_000;
        let scalarize = move |tape: &mut Tape<'_, f64>, out: NodeId| -> NodeId {
            let shape = tape.value(out).shape().to_vec();
            let mut wrng = ChaCha8Rng::seed_from_u64(weight_seed);
            let w = tape.constant(Tensor::uniform(&shape, -1.0, 1.0, &mut wrng));
            let prod = tape.mul(out, w).unwrap();
            tape.sum(prod)
        };

        let mut grads = ParamGrads::zeros_like(&store);
        {
            let mut tape = Tape::new(&store);
            let out = build(&mut tape, &store);
            let loss = scalarize(&mut tape, out);
            tape.backward(loss, &mut grads).unwrap();
        }
        let report = check_gradients(
            &mut store,
            &grads,
            |st| {
                let mut tape = Tape::new(st);
                let out = build(&mut tape, st);
                let loss = scalarize(&mut tape, out);
                tape.value(loss).at(0)
            },
            H,
            REL_TOL,
            ABS_TOL,
        );
        assert!(
            report.passed(),
            "{name} seed {seed}: {} of {} elements failed, first: {:?}",
            report.failures.len(),
            report.checked,
            report.failures.first()
        );
    }
}

fn fd_op(name: &str, shapes: &[(&str, &[usize])], build: &Build) {
    fd_op_mapped(name, shapes, |x| x, build);
}

#[test]
fn grad_matmul() {
    fd_op("matmul", &[("a", &[3, 4]), ("b", &[4, 2])], &|t, s| {
        let a = param(t, s, "a");
        let b = param(t, s, "b");
        t.matmul(a, b).unwrap()
    });
}

#[test]
fn grad_vecmat() {
    fd_op("vecmat", &[("v", &[3]), ("m", &[3, 5])], &|t, s| {
        let v = param(t, s, "v");
        let m = param(t, s, "m");
        t.vecmat(v, m).unwrap()
    });
}

#[test]
fn grad_affine() {
    fd_op("affine", &[("w", &[4, 3]), ("x", &[3]), ("b", &[4])], &|t, s| {
        let w = param(t, s, "w");
        let x = param(t, s, "x");
        let b = param(t, s, "b");
        t.affine(w, x, b).unwrap()
    });
}

#[test]
fn grad_add() {
    fd_op("add", &[("a", &[6]), ("b", &[6])], &|t, s| {
        let a = param(t, s, "a");
        let b = param(t, s, "b");
        t.add(a, b).unwrap()
    });
}

#[test]
fn grad_add_col() {
    fd_op("add_col", &[("m", &[3, 4]), ("v", &[3])], &|t, s| {
        let m = param(t, s, "m");
        let v = param(t, s, "v");
        t.add_col(m, v).unwrap()
    });
}

#[test]
fn grad_scale() {
    fd_op("scale", &[("a", &[5])], &|t, s| {
        let a = param(t, s, "a");
        t.scale(a, -2.5)
    });
}

#[test]
fn grad_tanh() {
    fd_op("tanh", &[("a", &[7])], &|t, s| {
        let a = param(t, s, "a");
        t.tanh(a)
    });
}

#[test]
fn grad_sigmoid() {
    fd_op("sigmoid", &[("a", &[7])], &|t, s| {
        let a = param(t, s, "a");
        t.sigmoid(a)
    });
}

#[test]
fn grad_relu() {
    // keep samples at least 0.05 away from the kink at zero
    fd_op_mapped(
        "relu",
        &[("a", &[9])],
        |x| x + 0.05 * x.signum(),
        &|t, s| {
            let a = param(t, s, "a");
            t.relu(a)
        },
    );
}

#[test]
fn grad_mul() {
    fd_op("mul", &[("a", &[2, 3]), ("b", &[2, 3])], &|t, s| {
        let a = param(t, s, "a");
        let b = param(t, s, "b");
        t.mul(a, b).unwrap()
    });
}

#[test]
fn grad_concat() {
    fd_op("concat", &[("a", &[3]), ("b", &[2]), ("c", &[4])], &|t, s| {
        let a = param(t, s, "a");
        let b = param(t, s, "b");
        let c = param(t, s, "c");
        t.concat(&[a, b, c]).unwrap()
    });
}

#[test]
fn grad_hstack() {
    fd_op("hstack", &[("a", &[3]), ("b", &[3]), ("c", &[3])], &|t, s| {
        let a = param(t, s, "a");
        let b = param(t, s, "b");
        let c = param(t, s, "c");
        t.hstack(&[a, b, c]).unwrap()
    });
}

#[test]
fn grad_slice() {
    fd_op("slice", &[("a", &[8])], &|t, s| {
        let a = param(t, s, "a");
        t.slice(a, 2, 4).unwrap()
    });
}

#[test]
fn grad_column() {
    fd_op("column", &[("m", &[4, 3])], &|t, s| {
        let m = param(t, s, "m");
        t.column(m, 1).unwrap()
    });
}

#[test]
fn grad_gather() {
    // repeated index exercises scatter-add accumulation
    fd_op("gather", &[("a", &[6])], &|t, s| {
        let a = param(t, s, "a");
        t.gather(a, &[4, 0, 4, 2]).unwrap()
    });
}

#[test]
fn grad_softmax() {
    fd_op("softmax", &[("a", &[6])], &|t, s| {
        let a = param(t, s, "a");
        t.softmax(a).unwrap()
    });
}

#[test]
fn grad_log_pick() {
    // shift samples into [1, 3) so the log stays well away from zero
    fd_op_mapped(
        "log_pick",
        &[("p", &[5])],
        |x| x + 2.0,
        &|t, s| {
            let p = param(t, s, "p");
            t.log_pick(p, 3).unwrap()
        },
    );
}

#[test]
fn grad_sum_and_mean() {
    fd_op("sum", &[("a", &[2, 3])], &|t, s| {
        let a = param(t, s, "a");
        t.sum(a)
    });
    fd_op("mean", &[("a", &[7])], &|t, s| {
        let a = param(t, s, "a");
        t.mean(a)
    });
}

#[test]
fn grad_dropout_with_fixed_mask() {
    // the mask is resampled from the same seed on every forward pass, so the
    // finite-difference evaluations see the same network as backward did
    fd_op("dropout", &[("a", &[12])], &|t, s| {
        let a = param(t, s, "a");
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        t.dropout(a, 0.5, Mode::Train, &mut rng).unwrap()
    });
}

#[test]
fn grad_composite_chain() {
    // affine -> tanh -> vecmat -> softmax -> log_pick, the scorer's shape of
    // computation in miniature
    fd_op_mapped(
        "chain",
        &[("w", &[4, 3]), ("x", &[3]), ("b", &[4]), ("m", &[4, 5]), ("v", &[5])],
        |x| x,
        &|t, s| {
            let w = param(t, s, "w");
            let x = param(t, s, "x");
            let b = param(t, s, "b");
            let m = param(t, s, "m");
            let h = t.affine(w, x, b).unwrap();
            let h = t.tanh(h);
            let scores = t.vecmat(h, m).unwrap();
            let v = param(t, s, "v");
            let scores = t.add(scores, v).unwrap();
            let p = t.softmax(scores).unwrap();
            t.log_pick(p, 2).unwrap()
        },
    );
}

// value-level oracles

#[test]
fn matmul_matches_hand_computation() {
    let store: ParamStore<f64> = ParamStore::new();
    let mut t = Tape::new(&store);
    let a = t.constant(Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    let b = t.constant(Tensor::matrix(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]));
    let c = t.matmul(a, b).unwrap();
    assert_eq!(t.value(c).data(), &[58.0, 64.0, 139.0, 154.0]);
}

#[test]
fn softmax_of_equal_scores_is_uniform() {
    let store: ParamStore<f64> = ParamStore::new();
    let mut t = Tape::new(&store);
    let x = t.constant(Tensor::vector(vec![0.0, 0.0]));
    let p = t.softmax(x).unwrap();
    assert_eq!(t.value(p).data(), &[0.5, 0.5]);
}

#[test]
fn softmax_is_shift_invariant_and_normalized() {
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = Tensor::<f64>::uniform(&[9], -30.0, 30.0, &mut rng);
        let shifted = Tensor::from_vec(&[9], base.data().iter().map(|x| x + 123.25).collect());
        let store: ParamStore<f64> = ParamStore::new();
        let mut t = Tape::new(&store);
        let a = t.constant(base);
        let b = t.constant(shifted);
        let pa = t.softmax(a).unwrap();
        let pb = t.softmax(b).unwrap();
        let sum: f64 = t.value(pa).data().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12, "seed {seed}: sum {sum}");
        for (x, y) in t.value(pa).data().iter().zip(t.value(pb).data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn softmax_survives_large_scores() {
    let store: ParamStore<f64> = ParamStore::new();
    let mut t = Tape::new(&store);
    let x = t.constant(Tensor::vector(vec![1000.0, 1000.0, -2000.0]));
    let p = t.softmax(x).unwrap();
    let d = t.value(p).data();
    assert!((d[0] - 0.5).abs() < 1e-12 && (d[1] - 0.5).abs() < 1e-12 && d[2] == 0.0);
}

#[test]
fn backward_leaves_unreached_parameters_at_zero() {
    let mut store: ParamStore<f64> = ParamStore::new();
    let used = store.add("used", Tensor::vector(vec![1.0, 2.0]));
    let unused = store.add("unused", Tensor::vector(vec![3.0, 4.0]));
    let mut grads = ParamGrads::zeros_like(&store);
    let mut t = Tape::new(&store);
    let u = t.param(used);
    let s = t.sum(u);
    t.backward(s, &mut grads).unwrap();
    assert_eq!(grads.get(used).data(), &[1.0, 1.0]);
    assert_eq!(grads.get(unused).data(), &[0.0, 0.0]);
    let _ = unused;
}

#[test]
fn backward_accumulates_across_tapes() {
    let mut store: ParamStore<f64> = ParamStore::new();
    let id = store.add("w", Tensor::vector(vec![2.0, 5.0]));
    let mut grads = ParamGrads::zeros_like(&store);
    for _ in 0..3 {
        let mut t = Tape::new(&store);
        let w = t.param(id);
        let s = t.sum(w);
        t.backward(s, &mut grads).unwrap();
    }
    assert_eq!(grads.get(id).data(), &[3.0, 3.0]);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let store: ParamStore<f64> = ParamStore::new();
    let mut grads = ParamGrads::zeros_like(&store);
    let mut t = Tape::new(&store);
    let x = t.constant(Tensor::vector(vec![1.0, 2.0]));
    assert!(t.backward(x, &mut grads).is_err());
}

#[test]
fn shape_mismatch_errors_name_both_shapes() {
    let store: ParamStore<f64> = ParamStore::new();
    let mut t = Tape::new(&store);
    let a = t.constant(Tensor::matrix(2, 3, vec![0.0; 6]));
    let b = t.constant(Tensor::matrix(2, 3, vec![0.0; 6]));
    let err = t.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("matmul"), "{msg}");
}

#[test]
fn dropout_is_identity_when_inactive() {
    let store: ParamStore<f64> = ParamStore::new();
    let mut t = Tape::new(&store);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = t.constant(Tensor::vector(vec![1.0, -2.0, 3.0]));
    let infer = t.dropout(x, 0.5, Mode::Infer, &mut rng).unwrap();
    assert_eq!(infer, x);
    let zero_rate = t.dropout(x, 0.0, Mode::Train, &mut rng).unwrap();
    assert_eq!(zero_rate, x);
    assert!(t.dropout(x, 1.0, Mode::Train, &mut rng).is_err());
    assert!(t.dropout(x, -0.1, Mode::Train, &mut rng).is_err());
}

#[test]
fn dropout_preserves_expectation() {
    let store: ParamStore<f64> = ParamStore::new();
    let mut t = Tape::new(&store);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 100_000;
    let x = t.constant(Tensor::from_vec(&[n], vec![1.0; n]));
    let d = t.dropout(x, 0.3, Mode::Train, &mut rng).unwrap();
    let mean = t.value(d).data().iter().sum::<f64>() / n as f64;
    assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
    // survivors carry exactly the inverse keep probability
    for &v in t.value(d).data() {
        assert!(v == 0.0 || (v - 1.0 / 0.7).abs() < 1e-12);
    }
}

#[test]
fn identical_seeds_give_identical_dropout_masks() {
    let store: ParamStore<f64> = ParamStore::new();
    let collect = |seed: u64| -> Vec<f64> {
        let mut t = Tape::new(&store);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = t.constant(Tensor::from_vec(&[64], vec![1.0; 64]));
        let d = t.dropout(x, 0.5, Mode::Train, &mut rng).unwrap();
        t.value(d).data().to_vec()
    };
    assert_eq!(collect(42), collect(42));
    assert_ne!(collect(42), collect(43));
}
