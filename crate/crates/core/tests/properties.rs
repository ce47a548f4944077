mod common;

use common::*;
use joint_ood::evaluation::{evaluate, find_threshold, Outcome, ABOVE_ONE};
use joint_ood::model::{loss_domain, loss_joint, loss_weighted_batch, predict_joint, predict_separate};
use joint_ood::numerics::{argmax, clip_gradients, global_norm, softmax, GradStore, Graph, Params, Tensor};
use joint_ood::training::{dcw_update, DcwState, LAMBDA_MARGIN};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn threshold_search_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for trial in 0..1000 {
        let classes = rng.gen_range(2..6);
        let items = random_outcomes(&mut rng, classes, 50);
        let target = [0.0, 0.05, 0.1, 0.25, 0.5, 1.0][rng.gen_range(0..6)];
        let t = find_threshold(&items, classes - 1, target).unwrap();
        assert_eq!(t, brute_threshold(&items, classes - 1, target), "trial {trial}");
        let report = evaluate(&items, classes - 1, t).unwrap();
        assert!(report.far <= target, "trial {trial}: far {} > {target}", report.far);
    }
}

#[test]
fn threshold_two_false_accepts() {
    // 10 gold OOD, two accepted at 0.4 and 0.8.
    let ood = 3;
    let mut items: Vec<Outcome> = (0..8)
        .map(|_| Outcome {
            predicted: ood,
            confidence: 0.9,
            gold: ood,
        })
        .collect();
    for c in [0.4, 0.8] {
        items.push(Outcome {
            predicted: 0,
            confidence: c,
            gold: ood,
        });
    }
    let t = find_threshold(&items, ood, 0.1).unwrap();
    assert!(t > 0.4 && t <= 0.8);
    assert_eq!(evaluate(&items, ood, t).unwrap().far, 0.1);
}

#[test]
fn separate_mode_threshold_uses_detector_ind_probability() {
    // 20 utterances scored by a detector/classifier pair; the sweep over
    // the gated confidence must agree with brute force at every target.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ood_id = 3;
    let items: Vec<Outcome> = (0..20)
        .map(|i| {
            let p_ind: f64 = rng.gen_range(0.0..1.0);
            let ind = [rng.gen_range(0.1..1.0), rng.gen_range(0.1..1.0), rng.gen_range(0.1..1.0)];
            let total: f64 = ind.iter().sum();
            let ind: Vec<f64> = ind.iter().map(|v| v / total).collect();
            let s = predict_separate(&[p_ind, 1.0 - p_ind], &ind, ood_id);
            if s.predicted != ood_id {
                assert_eq!(s.confidence, p_ind);
                assert_eq!(s.predicted, argmax(&ind));
            }
            Outcome {
                predicted: s.predicted,
                confidence: s.confidence,
                gold: if i % 3 == 0 { ood_id } else { i % 3 },
            }
        })
        .collect();
    for target in [0.0, 0.1, 0.2, 0.5, 1.0] {
        let t = find_threshold(&items, ood_id, target).unwrap();
        assert_eq!(t, brute_threshold(&items, ood_id, target));
    }
}

#[test]
fn dcw_matches_oracle_and_halving_law() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..1000 {
        let target = rng.gen_range(0.01..0.3);
        let len = rng.gen_range(1..60);
        let mut state = DcwState::new(target);
        let mut oracle = DcwOracle::start();
        let mut transitions = 0;
        let mut prev_gamma = state.gamma;
        for _ in 0..len {
            let far = if rng.gen_bool(0.2) { target } else { rng.gen_range(0.0..0.6) };
            let was = state.satisfied;
            state = dcw_update(state, far);
            oracle = oracle.step(far, target);
            assert_eq!((state.lambda, state.gamma, state.satisfied), (oracle.lambda, oracle.gamma, oracle.satisfied));
            transitions += usize::from(!was && state.satisfied);
            assert!(state.lambda > 0.0 && state.lambda < 2.0);
            assert!(state.lambda >= LAMBDA_MARGIN && state.lambda <= 2.0 - LAMBDA_MARGIN);
            assert_eq!(state.gamma, 0.1 * 0.5f64.powi(transitions as i32));
            assert!(state.gamma <= prev_gamma);
            prev_gamma = state.gamma;
        }
    }
}

#[test]
fn unsatisfiable_target_drives_lambda_to_ceiling() {
    let mut s = DcwState::new(0.0);
    for _ in 0..30 {
        s = dcw_update(s, 0.2);
    }
    assert_eq!(s.lambda, 2.0 - LAMBDA_MARGIN);
    assert!(!s.satisfied);
}

fn outcomes() -> impl Strategy<Value = (Vec<Outcome>, usize)> {
    (2usize..6).prop_flat_map(|classes| {
        let item = (0..classes, 0u32..=10, 0..classes).prop_map(|(p, c, g)| Outcome {
            predicted: p,
            confidence: c as f64 / 10.0,
            gold: g,
        });
        (prop::collection::vec(item, 1..40), Just(classes - 1))
    })
}

proptest! {
    #[test]
    fn metrics_match_hand_count((items, ood) in outcomes(), t in 0.0f64..=1.0) {
        let r = evaluate(&items, ood, t).unwrap();
        let (acc, far, frr) = brute_metrics(&items, ood, t);
        prop_assert_eq!((r.accuracy, r.far, r.frr), (acc, far, frr));
        prop_assert_eq!(r.gold_ind + r.gold_ood, r.total);
        for v in [r.accuracy, r.far, r.frr] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn far_falls_and_frr_rises_with_threshold((items, ood) in outcomes(), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let rl = evaluate(&items, ood, lo).unwrap();
        let rh = evaluate(&items, ood, hi).unwrap();
        prop_assert!(rh.far <= rl.far);
        prop_assert!(rh.frr >= rl.frr);
    }

    #[test]
    fn threshold_zero_is_raw_argmax((items, ood) in outcomes()) {
        let r = evaluate(&items, ood, 0.0).unwrap();
        let raw = items.iter().filter(|o| o.predicted == o.gold).count() as f64 / items.len() as f64;
        prop_assert_eq!(r.accuracy, raw);
        prop_assert!(evaluate(&items, ood, ABOVE_ONE).is_ok());
    }

    #[test]
    fn clipping_never_increases_the_norm(
        values in prop::collection::vec(-50.0f64..50.0, 1..30),
        threshold in 0.1f64..20.0,
    ) {
        let mut params = Params::new();
        let id = params.add("w", Tensor::vector(vec![0.0; values.len()])).unwrap();
        let mut grads = GradStore::for_params(&params);
        grads.slot(id).copy_from_slice(&values);
        let before = global_norm(&grads);
        clip_gradients(&mut grads, threshold);
        let after = global_norm(&grads);
        prop_assert!(after <= before + 1e-12);
        prop_assert!(after <= threshold + 1e-6);
        if before <= threshold {
            prop_assert_eq!(grads.get(id).unwrap().data(), values.as_slice());
        }
    }

    #[test]
    fn softmax_is_a_distribution_and_shift_invariant(
        logits in prop::collection::vec(-30.0f64..30.0, 2..25),
        shift in -100.0f64..100.0,
    ) {
        let p = softmax(&logits);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&v| v >= 0.0));
        let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
        prop_assert_eq!(predict_joint(&softmax(&shifted)).0, predict_joint(&p).0);
    }

    #[test]
    fn zero_alpha_joint_loss_is_domain_loss(
        logits in prop::collection::vec(-5.0f64..5.0, 3..8),
        ood in prop::collection::vec(-5.0f64..5.0, 2),
        gold in 0usize..3,
    ) {
        let d = softmax(&logits);
        let o = softmax(&ood);
        let ld = loss_domain(&d, gold);
        prop_assert_eq!(loss_joint(ld, joint_ood::model::loss_ood(&o, 1), 0.0), ld);
    }

    #[test]
    fn lambda_one_weighting_is_plain_sum(
        batch in prop::collection::vec((0.0f64..10.0, any::<bool>()), 1..64),
    ) {
        let (losses, is_ood): (Vec<f64>, Vec<bool>) = batch.into_iter().unzip();
        let weighted = loss_weighted_batch(&losses, &is_ood, 1.0).unwrap();
        let mut ind = 0.0;
        let mut out = 0.0;
        for (l, o) in losses.iter().zip(&is_ood) {
            if *o { out += l } else { ind += l }
        }
        prop_assert_eq!(weighted, ind + out);
    }

    #[test]
    fn amplifying_a_window_never_lowers_the_pool(
        rows in 1usize..8,
        cols in 1usize..5,
        seed in any::<u64>(),
        boost in 0.0f64..3.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = uniform(&mut rng, &[rows, cols], -2.0, 2.0);
        let k = rng.gen_range(0..rows);
        let mut amplified = base.clone();
        for v in &mut amplified.data_mut()[k * cols..(k + 1) * cols] {
            *v += boost;
        }
        let params = Params::<f64>::new();
        let mut g = Graph::new(&params);
        let a = g.input(base);
        let b = g.input(amplified);
        let pa = g.max_over_time(a).unwrap();
        let pb = g.max_over_time(b).unwrap();
        for (x, y) in g.value(pa).iter().zip(g.value(pb)) {
            prop_assert!(y >= x);
        }
    }
}
