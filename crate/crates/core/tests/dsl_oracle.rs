use proptest::prelude::*;
use taskcheck::dsl::{evaluate_constraint, parse_constraint, Status};
use taskcheck_testkit::gen::{dataset_and_conditional, dataset_and_constraint};
use taskcheck_testkit::reference;

proptest! {
    #![proptest_config(ProptestConfig { cases: 400, max_global_rejects: 8192, ..ProptestConfig::default() })]

    #[test]
    fn evaluator_matches_reference((d, c) in dataset_and_constraint(50, 6)) {
        let got = evaluate_constraint(&c, &d);
        let want = reference::evaluate(&c, &d);
        prop_assert_eq!(got.status, want.status, "{}", c);
        prop_assert_eq!(got.measured.map(f64::to_bits), want.measured.map(f64::to_bits), "{}", c);
    }

    #[test]
    fn where_is_evaluation_on_the_kept_rows((d, c) in dataset_and_conditional(50, 6)) {
        let filtered = evaluate_constraint(&c, &d);
        prop_assume!(filtered.status != Status::Error);
        let kept = d.take_rows(&reference::rows_where(&d, c.filter.as_ref()));
        let mut plain = c.clone();
        plain.filter = None;
        let restricted = evaluate_constraint(&plain, &kept);
        prop_assert_eq!(filtered.status, restricted.status, "{}", c);
        prop_assert_eq!(filtered.measured.map(f64::to_bits), restricted.measured.map(f64::to_bits), "{}", c);
    }

    #[test]
    fn render_parse_round_trip((_d, c) in dataset_and_constraint(5, 6)) {
        let text = c.to_string();
        let back = parse_constraint(&text).unwrap();
        prop_assert_eq!(back.to_string(), text);
        prop_assert!(back.same_rule(&c), "{}", c);
    }
}
