mod common;

use crmopo::cmdp::{exact_objectives, visitation_measure, SoftmaxPolicy};
use crmopo::generate::{random_cmdp, RandomCmdpSpec};
use crmopo::io::{parse_cmdp, to_json};
use crmopo::manipulate::{momentum_blend, project_to_simplex, WeightBounds};
use crmopo::oracle::dominates;
use proptest::prelude::*;

fn vector(len: usize) -> impl Strategy<Value = Vec<f64>> {
    // a coarse value set makes ties (and so dominance) common
    prop::collection::vec((0i32..4).prop_map(f64::from), len)
}

fn small_model() -> impl Strategy<Value = crmopo::TabularCmdp> {
    (1usize..5, 1usize..4, 1usize..3, 0usize..3, 0.0f64..0.95, any::<u64>()).prop_map(|(ns, na, m, p, gamma, seed)| {
        random_cmdp(&RandomCmdpSpec::new(ns, na, m, p).gamma(gamma), seed).unwrap()
    })
}

proptest! {
    #[test]
    fn dominance_is_irreflexive(a in vector(3)) {
        prop_assert!(!dominates(&a, &a).unwrap());
    }

    #[test]
    fn dominance_is_transitive_and_asymmetric(a in vector(3), b in vector(3), c in vector(3)) {
        let ab = dominates(&a, &b).unwrap();
        let bc = dominates(&b, &c).unwrap();
        if ab && bc {
            prop_assert!(dominates(&a, &c).unwrap());
        }
        if ab {
            prop_assert!(!dominates(&b, &a).unwrap());
        }
    }

    #[test]
    fn per_state_shift_leaves_policy_unchanged(
        params in prop::collection::vec(-20.0f64..20.0, 6),
        shift in prop::collection::vec(-50.0f64..50.0, 2),
    ) {
        let w = SoftmaxPolicy::new(2, 3, params).unwrap();
        let shifted = w.shifted(&shift);
        prop_assert!(w.policy().unwrap().max_total_variation(&shifted.policy().unwrap()) < 1e-12);
    }

    #[test]
    fn visitation_has_unit_mass(model in small_model(), scale in 0.0f64..3.0, seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let policy = common::random_params(&mut rng, &model, scale).policy().unwrap();
        let vis = visitation_measure(&model, &policy).unwrap();
        prop_assert!((vis.nu.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        prop_assert!(vis.nu.iter().all(|&x| x >= -1e-15));
    }

    #[test]
    fn objectives_respect_value_bound(model in small_model(), seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let policy = common::random_params(&mut rng, &model, 2.0).policy().unwrap();
        for f in exact_objectives(&model, &policy).unwrap() {
            prop_assert!(f >= -1e-12 && f <= model.value_bound() + 1e-9);
        }
    }

    #[test]
    fn momentum_stays_between_arguments(
        prev in prop::collection::vec(0.0f64..2.0, 3),
        current in prop::collection::vec(0.0f64..2.0, 3),
        alpha in 0.0f64..=1.0,
    ) {
        let blended = momentum_blend(&prev, &current, alpha).unwrap();
        for ((b, p), c) in blended.iter().zip(&prev).zip(&current) {
            prop_assert!(*b >= p.min(*c) - 1e-15 && *b <= p.max(*c) + 1e-15);
        }
    }

    #[test]
    fn simplex_projection_lands_on_simplex(v in prop::collection::vec(-5.0f64..5.0, 1..6)) {
        let x = project_to_simplex(&v);
        prop_assert!((x.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(x.iter().all(|&t| t >= 0.0));
    }

    #[test]
    fn enforced_weights_meet_bounds(v in prop::collection::vec(-1.0f64..5.0, 1..5)) {
        let bounds = WeightBounds::default();
        let w = bounds.enforce(&v);
        prop_assert!(w.iter().all(|&x| (0.0..=bounds.max_entry).contains(&x)));
        prop_assert!(w.iter().sum::<f64>() >= bounds.min_sum - 1e-12);
    }

    #[test]
    fn json_round_trip_is_exact(model in small_model()) {
        prop_assert_eq!(parse_cmdp(&to_json(&model)).unwrap(), model);
    }
}
