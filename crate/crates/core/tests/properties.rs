use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vrlab_core::experiment::{assign_condition, load_experiment};
use vrlab_core::ids::SessionId;
use vrlab_core::instruments::{score, Aggregation, InstrumentDef, Item, Subscale};
use vrlab_core::telemetry::{attention_distribution, OrientationSample, ZonePartition};

/// Zone from the counter-clockwise offset past the left edge of zone 1.
fn zone_oracle(fov: f64, yaw: f64) -> u8 {
    let d = (yaw + fov / 2.0).rem_euclid(360.0);
    if d < fov {
        1
    } else if d < 180.0 {
        2
    } else if d < 180.0 + fov {
        3
    } else {
        4
    }
}

fn dyadic_yaw() -> impl Strategy<Value = f64> {
    (-180i64 * 64..180 * 64).prop_map(|k| k as f64 / 64.0)
}

fn dyadic_fov() -> impl Strategy<Value = f64> {
    (1i64..180 * 4).prop_map(|k| k as f64 / 4.0)
}

proptest! {
    #[test]
    fn every_yaw_lands_in_exactly_one_zone(fov in dyadic_fov(), yaw in dyadic_yaw()) {
        let p = ZonePartition::new(fov).unwrap();
        let z = p.classify(yaw);
        prop_assert!((1..=4).contains(&z));
        prop_assert_eq!(z, zone_oracle(fov, yaw));
    }

    #[test]
    fn whole_turns_do_not_change_the_zone(fov in dyadic_fov(), yaw in dyadic_yaw(), k in -20i64..20) {
        let p = ZonePartition::new(fov).unwrap();
        prop_assert_eq!(p.classify(yaw), p.classify(yaw + 360.0 * k as f64));
    }

    #[test]
    fn mean_subscale_shifts_with_answers(answers in prop::collection::vec(-50i32..50, 4), c in -50i32..50) {
        let def = wide_instrument(Aggregation::Mean, 1.0, &["q1", "q2", "q3", "q4"]);
        let base = score(&def, &sid(), &answer_map(&answers)).unwrap();
        let shifted: Vec<i32> = answers.iter().map(|a| a + c).collect();
        let moved = score(&def, &sid(), &answer_map(&shifted)).unwrap();
        let (a, b) = (base.subscale_scores["s"], moved.subscale_scores["s"]);
        prop_assert!((b - (a + f64::from(c))).abs() < 1e-9);
    }

    #[test]
    fn item_order_does_not_matter(answers in prop::collection::vec(-50i32..50, 4), rot in 0usize..4) {
        let mut order = vec!["q1", "q2", "q3", "q4"];
        order.rotate_left(rot);
        order.swap(0, 3);
        for agg in [Aggregation::Mean, Aggregation::WeightedSum] {
            let a = score(&wide_instrument(agg, 0.5, &["q1", "q2", "q3", "q4"]), &sid(), &answer_map(&answers)).unwrap();
            let b = score(&wide_instrument(agg, 0.5, &order), &sid(), &answer_map(&answers)).unwrap();
            prop_assert!((a.subscale_scores["s"] - b.subscale_scores["s"]).abs() < 1e-9);
        }
    }

    #[test]
    fn weighted_sum_is_linear(x in prop::collection::vec(-200i32..200, 4), y in prop::collection::vec(-200i32..200, 4), w in -3.0f64..3.0) {
        let def = wide_instrument(Aggregation::WeightedSum, w, &["q1", "q2", "q3", "q4"]);
        let xy: Vec<i32> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
        let s = |v: &[i32]| score(&def, &sid(), &answer_map(v)).unwrap().subscale_scores["s"];
        let expected: f64 = w * xy.iter().map(|&v| f64::from(v)).sum::<f64>();
        prop_assert!((s(&xy) - (s(&x) + s(&y))).abs() < 1e-6);
        prop_assert!((s(&xy) - expected).abs() < 1e-6);
    }

    #[test]
    fn assignment_is_a_pure_function(seed in any::<u64>(), index in 0u64..10_000, block in any::<bool>()) {
        let exp = three_conditions(block);
        prop_assert_eq!(assign_condition(&exp, seed, index), assign_condition(&exp, seed, index));
    }

    #[test]
    fn block_balanced_is_even_after_full_blocks(seed in any::<u64>(), blocks in 1u64..40) {
        let exp = three_conditions(true);
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for i in 0..blocks * 3 {
            *counts.entry(assign_condition(&exp, seed, i).as_str().to_owned()).or_default() += 1;
        }
        prop_assert_eq!(counts.len(), 3);
        prop_assert!(counts.values().all(|&c| c == blocks));
    }
}

#[test]
fn uniform_yaws_match_arc_lengths() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for fov in [30.0, 60.0, 101.0, 150.0] {
        let p = ZonePartition::new(fov).unwrap();
        let samples: Vec<OrientationSample> = (0..20_000)
            .map(|i| OrientationSample {
                seq: i,
                t_ms: i * 200,
                yaw_deg: rng.random_range(-180.0..180.0),
                pitch_deg: 0.0,
                roll_deg: 0.0,
            })
            .collect();
        let dist = attention_distribution(&sid(), &samples, &p).unwrap();
        let arcs = [fov, 180.0 - fov, fov, 180.0 - fov];
        for (f, arc) in dist.fractions.iter().zip(arcs) {
            assert!((f - arc / 360.0).abs() <= 0.05, "fov {fov}: {f} vs {}", arc / 360.0);
        }
        assert!((dist.fractions.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn zone_edges_follow_counter_clockwise_rule() {
    let p = ZonePartition::new(101.0).unwrap();
    assert_eq!(p.classify(-50.5), 1);
    assert_eq!(p.classify(50.5), 2);
    assert_eq!(p.classify(129.5), 3);
    assert_eq!(p.classify(-129.5), 4);
    assert_eq!(p.classify(-180.0), 3);
    assert_eq!(p.classify(180.0), 3);
}

fn sid() -> SessionId {
    SessionId::from("s1")
}

fn answer_map(values: &[i32]) -> BTreeMap<String, i32> {
    values.iter().enumerate().map(|(i, v)| (format!("q{}", i + 1), *v)).collect()
}

fn wide_instrument(aggregation: Aggregation, weight: f64, order: &[&str]) -> InstrumentDef {
    InstrumentDef {
        instrument_id: "wide".into(),
        title: String::new(),
        items: (1..=4)
            .map(|i| Item { item_id: format!("q{i}"), prompt: String::new(), scale_min: -1000, scale_max: 1000 })
            .collect(),
        subscales: vec![Subscale {
            name: "s".into(),
            item_ids: order.iter().map(|s| (*s).to_owned()).collect(),
            aggregation,
            weight,
        }],
    }
}

fn three_conditions(block: bool) -> vrlab_core::experiment::Experiment {
    let method = if block { "BlockBalanced" } else { "UniformRandom" };
    load_experiment(&format!(
        r#"{{
          "schema_version": 1,
          "experiment_id": "three",
          "title": "three",
          "conditions": [{{"condition_id": "a", "label": "A"}}, {{"condition_id": "b", "label": "B"}}, {{"condition_id": "c", "label": "C"}}],
          "flow": [
            {{"step_id": "vr", "kind": "VrStimulus", "parameters": {{"duration_s": 10}}}},
            {{"step_id": "code", "kind": "VerificationCode"}},
            {{"step_id": "survey", "kind": "ExitSurvey"}}
          ],
          "payment": {{"base_cents": 100}},
          "device_requirements": ["GearVR"],
          "assignment": {{"method": "{method}"}}
        }}"#
    ))
    .unwrap()
}
