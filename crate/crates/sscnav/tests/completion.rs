//! Completion and confidence checks: paste-back, mask isolation, dataset
//! properties, IoU hand cases, and small overfit runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sscnav::completion::{
    build_completion_dataset, complete, completion_net_spec, confidence_net_spec,
    estimate_confidence, eval_iou, load_dataset, save_dataset, train_completion,
    train_confidence, CompletionSample, TrainConfig,
};
use sscnav::perception::{EgoSemMap, MapParams, SensorParams};
use sscnav::world::{generate_world, Pose, WorldParams, NUM_CATEGORIES, UNKNOWN};
use tensor_nn::{Network, Tape};

const R: usize = 32;

fn random_map(rng: &mut ChaCha8Rng, observed_p: f64, force: Option<&[bool]>) -> EgoSemMap {
    let n = R * R;
    let observed: Vec<bool> = (0..n)
        .map(|i| force.map(|f| f[i]).unwrap_or_else(|| rng.gen_bool(observed_p)))
        .collect();
    let labels: Vec<u8> = observed
        .iter()
        .map(|&o| if o { rng.gen_range(0..NUM_CATEGORIES as u8) } else { UNKNOWN })
        .collect();
    EgoSemMap::from_parts(R, labels, observed).unwrap()
}

/// input mask is a random subset of the target mask
fn random_sample(rng: &mut ChaCha8Rng) -> CompletionSample {
    let target = random_map(rng, 0.8, None);
    let input_mask: Vec<bool> = target.observed().iter().map(|&t| t && rng.gen_bool(0.4)).collect();
    let labels: Vec<u8> = input_mask
        .iter()
        .enumerate()
        .map(|(i, &o)| if o { target.labels()[i] } else { UNKNOWN })
        .collect();
    let input = EgoSemMap::from_parts(R, labels, input_mask).unwrap();
    CompletionSample { input, target, pose: Pose { x: 0.0, y: 0.0, heading: 0.0 } }
}

fn small_net(seed: u64) -> Network {
    Network::new(completion_net_spec(&[8, 16]), seed).unwrap()
}

#[test]
fn composited_map_pastes_input_back_over_observed_cells() {
    let net = small_net(1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let o = random_map(&mut rng, 0.3, None);
        let c = complete(&net, &o).unwrap();
        for i in 0..R * R {
            if o.observed()[i] {
                assert_eq!(c.composited[i], o.labels()[i]);
            } else {
                assert_eq!(c.composited[i], c.labels[i]);
            }
        }
    }
}

#[test]
fn completion_is_deterministic() {
    let net = small_net(3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let o = random_map(&mut rng, 0.3, None);
    let a = complete(&net, &o).unwrap();
    let b = complete(&net, &o).unwrap();
    for (x, y) in a.logits.data().iter().zip(b.logits.data()) {
        assert_eq!(x.to_bits(), y.to_bits());
    }
    assert_eq!(a.labels, b.labels);
}

#[test]
fn size_mismatch_is_a_config_error() {
    let net = small_net(5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = 30 * 30; // not divisible by the net's downsampling factor
    let observed: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
    let labels: Vec<u8> = observed.iter().map(|&o| if o { 0 } else { UNKNOWN }).collect();
    let o = EgoSemMap::from_parts(30, labels, observed).unwrap();
    assert!(matches!(complete(&net, &o), Err(sscnav::SscError::Config(_))));
}

fn ce_loss(net: &mut Network, s: &CompletionSample) -> f64 {
    let mut tape = Tape::new();
    let x = tape.input(s.input.to_tensor());
    let out = net.forward(&mut tape, x).unwrap();
    let target: Vec<u16> = s.target.labels().iter().map(|&l| l as u16).collect();
    let l = tape.cross_entropy_masked(out, &target, &s.loss_mask()).unwrap();
    tape.scalar_f64(l)
}

#[test]
fn loss_ignores_target_changes_inside_the_observed_region() {
    let mut net = small_net(7);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..10 {
        let s = random_sample(&mut rng);
        let base = ce_loss(&mut net, &s);
        // scramble target labels wherever the input already observed the cell
        let mut labels = s.target.labels().to_vec();
        for i in 0..R * R {
            if s.input.observed()[i] {
                labels[i] = rng.gen_range(0..NUM_CATEGORIES as u8);
            }
        }
        let target = EgoSemMap::from_parts(R, labels, s.target.observed().to_vec()).unwrap();
        let mutated = CompletionSample { input: s.input.clone(), target, pose: s.pose };
        assert_eq!(base.to_bits(), ce_loss(&mut net, &mutated).to_bits());
    }
}

#[test]
fn fully_observed_input_contributes_zero_loss() {
    let mut net = small_net(9);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let target = random_map(&mut rng, 0.7, None);
    let input = target.clone(); // same mask: nothing left to score
    let s = CompletionSample { input, target, pose: Pose { x: 0.0, y: 0.0, heading: 0.0 } };
    assert_eq!(ce_loss(&mut net, &s), 0.0);
}

fn dataset_worlds() -> (Vec<sscnav::world::World>, MapParams, SensorParams) {
    let params = WorldParams {
        width_m: 8.0,
        height_m: 8.0,
        resolution: 0.125,
        min_rooms: 2,
        max_rooms: 4,
        room_min_m: 1.75,
    };
    let worlds = (0..2u64).map(|s| generate_world(s, &params).unwrap()).collect();
    (worlds, MapParams { window_m: 6.0, cells: R }, SensorParams::default())
}

#[test]
fn dataset_has_mask_containment_and_monotone_coverage() {
    let (worlds, map, sensor) = dataset_worlds();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let samples = build_completion_dataset(&worlds, 10, &sensor, &map, &mut rng).unwrap();
    assert_eq!(samples.len(), 2 * 10 * 4);
    for s in &samples {
        for i in 0..R * R {
            if s.input.observed()[i] {
                assert!(s.target.observed()[i], "containment violated");
                assert_eq!(s.input.labels()[i], s.target.labels()[i]);
            }
        }
    }
    // each anchor's four samples retain nested view sets: k=1 never sees
    // more than k=4
    for group in samples.chunks(4) {
        let counts: Vec<usize> = group.iter().map(|s| s.input.observed_count()).collect();
        for w in counts.windows(2) {
            assert!(w[0] <= w[1], "coverage not monotone in k: {counts:?}");
        }
    }
}

#[test]
fn dataset_roundtrips_through_its_file_format() {
    let (worlds, map, sensor) = dataset_worlds();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let samples = build_completion_dataset(&worlds, 3, &sensor, &map, &mut rng).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.ds");
    save_dataset(&samples, R, &path).unwrap();
    let (restored, cells) = load_dataset(&path).unwrap();
    assert_eq!(cells, R);
    assert_eq!(restored.len(), samples.len());
    for (a, b) in samples.iter().zip(&restored) {
        assert_eq!(a.input.labels(), b.input.labels());
        assert_eq!(a.target.observed(), b.target.observed());
        assert_eq!(a.pose, b.pose);
    }
}

#[test]
fn confidence_is_in_range_and_saturated_on_observed_cells() {
    let net = small_net(13);
    let cnet = Network::new(confidence_net_spec(&[8, 16]), 14).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..10 {
        let o = random_map(&mut rng, 0.4, None);
        let completed = complete(&net, &o).unwrap();
        let c = estimate_confidence(&cnet, &o, &completed).unwrap();
        for i in 0..R * R {
            assert!((0.0..=1.0).contains(&c.values[i]));
            if o.observed()[i] {
                assert_eq!(c.values[i], 1.0);
            }
        }
    }
}

#[test]
fn iou_hand_cases() {
    let n = 30usize;
    let mask = vec![true; n];
    // identical
    let gt: Vec<u8> = (0..n).map(|i| (i % 3) as u8).collect();
    let r = eval_iou([(&gt[..], &gt[..], &mask[..])]);
    for c in 0..3 {
        assert_eq!(r.per_category[c], Some(1.0));
    }
    assert_eq!(r.mean, 1.0);
    // disjoint for category 0
    let pred: Vec<u8> = vec![1; n];
    let gt0: Vec<u8> = vec![0; n];
    let r = eval_iou([(&pred[..], &gt0[..], &mask[..])]);
    assert_eq!(r.per_category[0], Some(0.0));
    assert_eq!(r.per_category[1], Some(0.0));
    assert_eq!(r.per_category[2], None);
    // half-width shift: A on [0, 10) in target, [5, 15) in prediction,
    // B elsewhere in both -> IoU(A) = 5/15
    let gt: Vec<u8> = (0..n).map(|i| if i < 10 { 0 } else { 1 }).collect();
    let pred: Vec<u8> = (0..n).map(|i| if (5..15).contains(&i) { 0 } else { 1 }).collect();
    let r = eval_iou([(&pred[..], &gt[..], &mask[..])]);
    assert_eq!(r.per_category[0], Some(5.0 / 15.0));
}

#[test]
fn iou_respects_the_scoring_mask() {
    let n = 20usize;
    let gt: Vec<u8> = vec![2; n];
    let pred: Vec<u8> = (0..n).map(|i| if i < 10 { 2 } else { 3 }).collect();
    let mask: Vec<bool> = (0..n).map(|i| i < 10).collect();
    let r = eval_iou([(&pred[..], &gt[..], &mask[..])]);
    assert_eq!(r.per_category[2], Some(1.0));
    assert_eq!(r.per_category[3], None, "mismatches outside the mask must not count");
}

#[test]
fn completion_overfits_a_small_fixed_set() {
    let (worlds, map, sensor) = dataset_worlds();
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let samples = build_completion_dataset(&worlds[..1], 3, &sensor, &map, &mut rng).unwrap();
    let cfg = TrainConfig {
        epochs: 300,
        batch: 4,
        lr: 2e-3,
        lr_decay: 1.0,
        widths: vec![8, 16],
        seed: 17,
        val_fraction: 0.0,
    };
    let (_, stats) = train_completion(&samples, &cfg).unwrap();
    let last = stats.last().unwrap().train_loss;
    assert!(last < 0.1, "train CE stuck at {last}");
    assert!(stats.first().unwrap().train_loss > last);
}

#[test]
fn confidence_overfits_against_a_frozen_completion_net() {
    let (worlds, map, sensor) = dataset_worlds();
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let samples = build_completion_dataset(&worlds[..1], 3, &sensor, &map, &mut rng).unwrap();
    let frozen = small_net(19);
    let cfg = TrainConfig {
        epochs: 60,
        batch: 4,
        lr: 1e-3,
        lr_decay: 1.0,
        widths: vec![8, 16],
        seed: 20,
        val_fraction: 0.0,
    };
    let (_, stats) = train_confidence(&frozen, &samples, &cfg).unwrap();
    let last = stats.last().unwrap().train_loss;
    assert!(last < 0.02, "confidence MSE stuck at {last}");
}
