mod common;

use streampca::schedule::*;

#[test]
fn evaluators_match_independent_oracles() {
    for (name, worst) in common::draws::compare_evaluators(500, 99) {
        assert!(worst <= 1e-12, "{name}: worst relative error {worst:e}");
    }
}

#[test]
fn epoch_ladder_examples() {
    let s = epoch_schedule(0.5, 5, 5.0, 0.0).unwrap();
    assert!(s.check_conditions(0.5, 5).is_ok());
    for w in s.pairs.windows(2) {
        assert_eq!(w[1].1, 2.0 * w[0].1);
        assert!(w[1].0 > w[0].0);
    }
    assert!(s.final_time() as f64 >= closed_form_final_time(0.5, 5, 5.0, 0.0));
    assert!(matches!(
        epoch_schedule(0.5, 5, 2.0, 0.0),
        Err(streampca::Error::UnsupportedRegime { .. })
    ));
}

#[test]
fn finite_sample_bound_grows_with_discards() {
    let p = BoundParams {
        d: 5,
        r: 1.5,
        sigma2_eff: 2.0,
        delta: 0.2,
        lambda1: 1.0,
        eigengap: 0.2,
    };
    let mut prev = 0.0;
    for mu in [0, 10, 100, 200] {
        let b = finite_sample_bound(1_000_000, 100, mu, &p, 4.0, 1e6, 1e7).unwrap();
        assert!(b.total > prev);
        assert!(b.iterations <= 10_000.0);
        prev = b.total;
    }
}

#[test]
fn bound_is_decreasing_in_t() {
    let p = BoundParams {
        d: 5,
        r: 1.0,
        sigma2_eff: 1.0,
        delta: 0.3,
        lambda1: 1.0,
        eigengap: 0.2,
    };
    let s = StepSchedule::from_c0(4.0, 0.2, 1e6).unwrap();
    let mut prev = f64::INFINITY;
    for t in [0u64, 1, 10, 1000, 100_000, 10_000_000] {
        let b = theoretical_bound(t, &p, &s).unwrap();
        assert!(b < prev);
        prev = b;
    }
}
