//! Masked loss semantics: closed-form values, empty masks, mask isolation.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensor_nn::{NnError, Tape, Tensor};

#[test]
fn one_hot_correct_logits_give_near_zero_ce() {
    let (c, h, w) = (5, 4, 4);
    let mut logits = vec![0.0f32; c * h * w];
    let target: Vec<u16> = (0..h * w).map(|i| (i % c) as u16).collect();
    for (px, &t) in target.iter().enumerate() {
        logits[t as usize * h * w + px] = 50.0; // large margin
    }
    let mut tape = Tape::new();
    let x = tape.input(Tensor::from_vec(&[c, h, w], logits).unwrap());
    let l = tape
        .cross_entropy_masked(x, &target, &vec![true; h * w])
        .unwrap();
    assert!(tape.scalar(l) < 1e-6, "loss {}", tape.scalar(l));
}

#[test]
fn uniform_logits_over_41_classes_give_ln_41() {
    let (c, h, w) = (41, 4, 4);
    let mut tape = Tape::new();
    let x = tape.input(Tensor::zeros(&[c, h, w]));
    let target = vec![7u16; h * w];
    let l = tape
        .cross_entropy_masked(x, &target, &vec![true; h * w])
        .unwrap();
    let expected = (41.0f64).ln();
    assert!(
        (tape.scalar(l) as f64 - expected).abs() < 1e-4,
        "loss {} vs ln(41) {}",
        tape.scalar(l),
        expected
    );
}

#[test]
fn empty_mask_gives_zero_ce() {
    let mut tape = Tape::new();
    let x = tape.input(Tensor::zeros(&[3, 4, 4]));
    let l = tape
        .cross_entropy_masked(x, &vec![0u16; 16], &vec![false; 16])
        .unwrap();
    assert_eq!(tape.scalar(l), 0.0);
}

#[test]
fn out_of_range_label_is_a_data_error() {
    let mut tape = Tape::new();
    let x = tape.input(Tensor::zeros(&[3, 4, 4]));
    let mut target = vec![0u16; 16];
    target[5] = 3; // only 3 channels, labels 0..2
    match tape.cross_entropy_masked(x, &target, &vec![true; 16]) {
        Err(NnError::Data(_)) => {}
        other => panic!("expected data error, got {other:?}"),
    }
}

#[test]
fn mse_identical_inputs_give_zero() {
    let mut tape = Tape::new();
    let data: Vec<f32> = (0..16).map(|i| i as f32).collect();
    let x = tape.input(Tensor::from_vec(&[4, 4], data.clone()).unwrap());
    let l = tape.mse_masked(x, &data, &vec![true; 16]).unwrap();
    assert_eq!(tape.scalar(l), 0.0);
}

#[test]
fn mse_zero_vs_one_full_mask_is_one() {
    let mut tape = Tape::new();
    let x = tape.input(Tensor::zeros(&[4, 4]));
    let l = tape.mse_masked(x, &vec![1.0; 16], &vec![true; 16]).unwrap();
    assert_eq!(tape.scalar(l), 1.0);
}

#[test]
fn mse_matches_scalar_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let pred: Vec<f32> = (0..64).map(|_| rng.gen_range(-2.0..2.0f32)).collect();
    let target: Vec<f32> = (0..64).map(|_| rng.gen_range(-2.0..2.0f32)).collect();
    let mask: Vec<bool> = (0..64).map(|_| rng.gen_bool(0.5)).collect();
    let mut tape = Tape::new();
    let x = tape.input(Tensor::from_vec(&[8, 8], pred.clone()).unwrap());
    let l = tape.mse_masked(x, &target, &mask).unwrap();

    let mut acc = 0.0f64;
    let mut n = 0;
    for i in 0..64 {
        if mask[i] {
            acc += ((pred[i] - target[i]) as f64).powi(2);
            n += 1;
        }
    }
    let oracle = acc / n as f64;
    assert!(
        (tape.scalar(l) as f64 - oracle).abs() / oracle.abs() < 1e-6,
        "got {}, oracle {}",
        tape.scalar(l),
        oracle
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Losses must depend only on masked pixels: mutating values outside
    /// the mask leaves the result bit-identical.
    #[test]
    fn masked_losses_ignore_unmasked_pixels(seed in 0u64..1_000_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, h, w) = (4, 6, 6);
        let hw = h * w;
        let logits: Vec<f32> = (0..c * hw).map(|_| rng.gen_range(-3.0..3.0f32)).collect();
        let target: Vec<u16> = (0..hw).map(|_| rng.gen_range(0..c as u16)).collect();
        let mask: Vec<bool> = (0..hw).map(|_| rng.gen_bool(0.5)).collect();

        let ce = |logits: &[f32], target: &[u16]| {
            let mut tape = Tape::new();
            let x = tape.input(Tensor::from_vec(&[c, h, w], logits.to_vec()).unwrap());
            let l = tape.cross_entropy_masked(x, target, &mask).unwrap();
            tape.scalar(l)
        };
        let base = ce(&logits, &target);

        let mut mutated = logits.clone();
        let mut mutated_target = target.clone();
        for px in 0..hw {
            if !mask[px] {
                for ch in 0..c {
                    mutated[ch * hw + px] = rng.gen_range(-10.0..10.0);
                }
                mutated_target[px] = rng.gen_range(0..c as u16);
            }
        }
        prop_assert_eq!(base.to_bits(), ce(&mutated, &mutated_target).to_bits());

        let pred: Vec<f32> = (0..hw).map(|_| rng.gen_range(-1.0..1.0f32)).collect();
        let tgt: Vec<f32> = (0..hw).map(|_| rng.gen_range(-1.0..1.0f32)).collect();
        let mse = |pred: &[f32]| {
            let mut tape = Tape::new();
            let x = tape.input(Tensor::from_vec(&[h, w], pred.to_vec()).unwrap());
            let l = tape.mse_masked(x, &tgt, &mask).unwrap();
            tape.scalar(l)
        };
        let base = mse(&pred);
        let mut mutated = pred.clone();
        for px in 0..hw {
            if !mask[px] {
                mutated[px] = rng.gen_range(-10.0..10.0);
            }
        }
        prop_assert_eq!(base.to_bits(), mse(&mutated).to_bits());
    }
}
