//! MLP, Adam and checkpoint behaviour through the public API.

use cibr::autodiff::{Tape, Tensor};
use cibr::nn::{adam_step, init_mlp, mlp_forward, AdamConfig, AdamState, Checkpoint, MlpParams, MlpSpec};
use cibr::rng::Stream;
use proptest::prelude::*;

fn spec_strategy() -> impl Strategy<Value = MlpSpec> {
    prop::collection::vec(1usize..7, 2..5).prop_map(|dims| MlpSpec::new(dims).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn checkpoint_roundtrip_is_bit_exact(spec in spec_strategy(), seed in any::<u64>()) {
        let a: MlpParams<f64> = init_mlp(&spec, seed).unwrap();
        let b: MlpParams<f64> = MlpParams::init(&spec, seed ^ 1, &Stream::new(seed ^ 1, "other")).unwrap();
        let ckpt = Checkpoint { entries: vec![("a".into(), a), ("b".into(), b)] };
        let back = Checkpoint::<f64>::from_bytes(&ckpt.to_bytes()).unwrap();
        prop_assert_eq!(back, ckpt);
    }

    #[test]
    fn glorot_weights_stay_within_limit(spec in spec_strategy(), seed in any::<u64>()) {
        let p: MlpParams<f64> = init_mlp(&spec, seed).unwrap();
        for (w, b) in p.weights.iter().zip(&p.biases) {
            let limit = (6.0 / (w.rows() + w.cols()) as f64).sqrt();
            prop_assert!(w.data().iter().all(|x| x.abs() <= limit));
            prop_assert!(b.data().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn tape_forward_matches_value_forward(seed in any::<u64>(), rows in 1usize..6) {
        let spec = MlpSpec::new(vec![3, 5, 2]).unwrap();
        let p: MlpParams<f64> = init_mlp(&spec, seed).unwrap();
        let x = Tensor::from_fn(rows, 3, |i, j| (i as f64 - j as f64 * 0.7).sin());
        let mut tape = Tape::new();
        let vars = p.record(&mut tape, false);
        let xv = tape.constant(x.clone());
        let y = mlp_forward(&mut tape, &vars, xv).unwrap();
        prop_assert_eq!(tape.value(y), &p.forward_value(&x).unwrap());
    }
}

#[test]
fn same_seed_same_init_different_seed_differs() {
    let spec = MlpSpec::new(vec![4, 8, 3]).unwrap();
    let a: MlpParams<f64> = init_mlp(&spec, 11).unwrap();
    assert_eq!(a, init_mlp(&spec, 11).unwrap());
    assert_ne!(a, init_mlp(&spec, 12).unwrap());
}

#[test]
fn adam_minimizes_a_linear_regression() {
    // fit y = x·w* with a single linear layer
    let spec = MlpSpec::new(vec![2, 1]).unwrap();
    let mut p: MlpParams<f64> = init_mlp(&spec, 0).unwrap();
    let mut state = AdamState::for_mlp(&p, AdamConfig::with_lr(0.05)).unwrap();
    let x = Tensor::from_fn(16, 2, |i, j| ((i * 3 + j * 5) % 7) as f64 / 7.0 - 0.5);
    let y = Tensor::from_fn(16, 1, |i, _| 1.5 * x.get(i, 0) - 2.0 * x.get(i, 1) + 0.25);
    for _ in 0..800 {
        let mut tape = Tape::new();
        let vars = p.record(&mut tape, true);
        let (xv, yv) = (tape.constant(x.clone()), tape.constant(y.clone()));
        let out = mlp_forward(&mut tape, &vars, xv).unwrap();
        let r = tape.sub(out, yv).unwrap();
        let sq = tape.mul(r, r).unwrap();
        let loss = tape.mean(sq).unwrap();
        let g = tape.backward(loss).unwrap();
        let grads: Vec<&Tensor<f64>> = vars.all().iter().map(|&v| g.get(v).unwrap()).collect();
        adam_step(&mut p, &grads, &mut state).unwrap();
    }
    let w = &p.weights[0];
    assert!((w.get(0, 0) - 1.5).abs() < 1e-2 && (w.get(1, 0) + 2.0).abs() < 1e-2, "{w:?}");
    assert!((p.biases[0].get(0, 0) - 0.25).abs() < 1e-2);
    assert_eq!(state.step_count, 800);
}

#[test]
fn adam_refuses_non_finite_gradients_without_moving() {
    let spec = MlpSpec::new(vec![2, 2]).unwrap();
    let mut p: MlpParams<f64> = init_mlp(&spec, 1).unwrap();
    let before = p.clone();
    let mut state = AdamState::for_mlp(&p, AdamConfig::default()).unwrap();
    let bad = Tensor::new(2, 2, vec![0.0, f64::NAN, 0.0, 0.0]).unwrap();
    let ok = Tensor::zeros(1, 2);
    let err = adam_step(&mut p, &[&bad, &ok], &mut state).unwrap_err();
    assert!(matches!(err, cibr::Error::NumericalDivergence { .. }), "{err}");
    assert_eq!(p, before);
    assert_eq!(state.step_count, 0);
}

#[test]
fn checkpoint_file_roundtrip_and_truncation() {
    let dir = tempfile::tempdir().unwrap();
    let spec = MlpSpec::new(vec![3, 4, 2]).unwrap();
    let ckpt = Checkpoint { entries: vec![("enc".into(), init_mlp::<f64>(&spec, 5).unwrap())] };
    let path = dir.path().join("c.bin");
    ckpt.save(&path).unwrap();
    assert_eq!(Checkpoint::<f64>::load(&path).unwrap(), ckpt);
    let bytes = ckpt.to_bytes();
    assert!(Checkpoint::<f64>::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    assert!(matches!(Checkpoint::<f64>::load(&dir.path().join("missing.bin")), Err(cibr::Error::Io { .. })));
}

#[test]
fn invalid_specs_are_rejected() {
    assert!(MlpSpec::new(vec![3]).is_err());
    assert!(MlpSpec::new(vec![3, 0, 2]).is_err());
    assert!(AdamConfig::with_lr(0.0).validate().is_err());
}
