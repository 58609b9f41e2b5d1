mod common;

use gelatto_core::tensor::{
    finite_diff_gradcheck, OpKind, ReduceKind, Tape, Tensor, Var,
};
use gelatto_core::{Error, Result};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::op_gradient_errors;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-6;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Random fixed weights so that every scalar objective depends on every
/// output coordinate with a distinct coefficient.
fn weighted_sum(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(tape.shape(y), &mut rng);
    let w = tape.constant(w);
    let p = tape.mul(y, w)?;
    tape.sum_all(p)
}

#[test]
fn sum_objective_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&[4, 3], &mut rng);
    let err = finite_diff_gradcheck(|t, x| t.sum_all(x), &x, EPS).unwrap();
    assert!(err < 1e-10, "{err}");
}

#[test]
fn softmax_sum_composite() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&[3, 5], &mut rng);
    let err = finite_diff_gradcheck(
        |t, x| {
            let s = t.softmax(x, 1)?;
            weighted_sum(t, s, 9)
        },
        &x,
        EPS,
    )
    .unwrap();
    assert!(err < TOL, "{err}");
}

#[test]
fn corrupted_backward_rule_is_detected() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&[3, 5], &mut rng);
    let err = finite_diff_gradcheck(
        |t, x| {
            t.corrupt_backward(OpKind::Softmax, 1.5);
            let s = t.softmax(x, 1)?;
            weighted_sum(t, s, 9)
        },
        &x,
        EPS,
    )
    .unwrap();
    assert!(err > 1e-2, "fault went unnoticed: {err}");
}

#[test]
fn nondeterministic_function_is_rejected() {
    use std::cell::Cell;
    let calls = Cell::new(0u32);
    let x = Tensor::vector(vec![0.5, 1.0]);
    let res = finite_diff_gradcheck(
        |t, x| {
            calls.set(calls.get() + 1);
            let s = t.scale(x, calls.get() as f64)?;
            t.sum_all(s)
        },
        &x,
        EPS,
    );
    assert!(matches!(res, Err(Error::Contract(_))));
}

#[test]
fn every_op_matches_central_differences() {
    for (name, input, err) in op_gradient_errors() {
        assert!(err < TOL, "{name} input {input}: relative error {err}");
    }
}

#[test]
fn relu_away_from_kink() {
    // Inputs bounded away from zero so the central difference never straddles the kink.
    let x = Tensor::vector(vec![-1.5, -0.3, 0.2, 1.1, 1.9]);
    let err = finite_diff_gradcheck(
        |t, x| {
            let r = t.relu(x)?;
            weighted_sum(t, r, 5)
        },
        &x,
        EPS,
    )
    .unwrap();
    assert!(err < TOL);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_sums_to_one(data in proptest::collection::vec(-50.0f64..50.0, 12)) {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![3, 4], data).unwrap());
        for axis in 0..2 {
            let s = tape.softmax(x, axis).unwrap();
            let total = tape.reduce(s, axis, ReduceKind::Sum).unwrap();
            for v in tape.value(total).data() {
                prop_assert!((v - 1.0).abs() <= 1e-12);
                prop_assert!(*v > 0.0);
            }
        }
    }

    #[test]
    fn linear_is_permutation_equivariant(
        data in proptest::collection::vec(-2.0f64..2.0, 15),
        weights in proptest::collection::vec(-2.0f64..2.0, 6),
        perm in Just((0..5usize).collect::<Vec<_>>()).prop_shuffle(),
    ) {
        let x = Tensor::new(vec![5, 3], data).unwrap();
        let mut permuted = Vec::new();
        for &p in &perm {
            permuted.extend_from_slice(x.row(p));
        }
        let mut tape = Tape::new();
        let w = tape.constant(Tensor::new(vec![3, 2], weights).unwrap());
        let b = tape.constant(Tensor::vector(vec![0.3, -0.1]));
        let xv = tape.constant(x);
        let xp = tape.constant(Tensor::new(vec![5, 3], permuted).unwrap());
        let y = tape.linear(xv, w, Some(b)).unwrap();
        let yp = tape.linear(xp, w, Some(b)).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            prop_assert_eq!(tape.value(yp).row(i), tape.value(y).row(p));
        }
    }

    #[test]
    fn gather_conserves_gradient_mass(
        index in proptest::collection::vec(0usize..6, 1..20),
    ) {
        let mut tape = Tape::new();
        let src = tape.leaf(Tensor::zeros(&[6, 2]));
        let g = tape.gather_rows(src, &index, &[index.len()]).unwrap();
        let s = tape.sum_all(g).unwrap();
        let grads = tape.backward(s).unwrap();
        let mass: f64 = grads.get(src).unwrap().iter().sum();
        prop_assert_eq!(mass, (index.len() * 2) as f64);
    }
}
