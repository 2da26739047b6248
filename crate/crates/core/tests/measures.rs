mod common;

use gstar::geometry::Cube;
use gstar::measures::{
    expectation_integrals, poisson_term, AtomicMeasure, SampledFunction, WeightPair,
};
use gstar::rng::stream;
use gstar::Error;
use proptest::prelude::*;

#[test]
fn csv_round_trip_and_comments() {
    let text = "# sigma\n0.25, 1\n\n0.75,3\n";
    let m = AtomicMeasure::<f64>::parse_csv(text, "s.csv").unwrap();
    assert_eq!(m.len(), 2);
    assert_eq!(m.total_mass(), 4.0);
    let back = AtomicMeasure::<f64>::parse_csv(&m.to_csv(), "again").unwrap();
    assert_eq!(back, m);
}

#[test]
fn csv_errors_name_source_and_line() {
    let err = AtomicMeasure::<f64>::parse_csv("0.1,1\n0.2,-1\n", "w.csv").unwrap_err();
    match err {
        Error::Parse { path, line, .. } => {
            assert_eq!(path, "w.csv");
            assert_eq!(line, 2);
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(AtomicMeasure::<f64>::parse_csv("0.1,0.2,1\n0.3,1\n", "x").is_err());
    assert!(AtomicMeasure::<f64>::parse_csv("# nothing\n", "x").is_err());
}

#[test]
fn disjoint_support_flag_rejects_shared_atoms() {
    let s = AtomicMeasure::new(1, vec![(vec![0.5], 1.0)]).unwrap();
    let w = AtomicMeasure::new(1, vec![(vec![0.5], 2.0)]).unwrap();
    assert!(WeightPair::new(s.clone(), w.clone(), true).is_err());
    assert!(WeightPair::new(s, w, false).unwrap().has_coincident_atoms());
}

proptest! {
    #[test]
    fn mass_is_additive_over_children(seed in 0u64..10_000, k in 1usize..40, level in -4i32..1) {
        let mut rng = stream(seed, 0);
        let m = common::random_measure(&mut rng, 2, k, -0.5, 1.5);
        let q = Cube::dyadic(vec![0.0, 0.0], level);
        let whole = m.mass_on(&q).unwrap();
        let parts: f64 = q.children().iter().map(|c| m.mass_on(c).unwrap()).sum();
        prop_assert!((whole - parts).abs() <= 1e-12 * whole.max(1.0));
        for c in q.children() {
            prop_assert!(m.mass_on(&c).unwrap() <= whole);
        }
    }

    #[test]
    fn integrals_are_linear(seed in 0u64..10_000, a in -5.0..5.0f64, b in -5.0..5.0f64) {
        let mut rng = stream(seed, 1);
        let m = common::random_measure(&mut rng, 1, 12, 0.0, 1.0);
        let f: Vec<f64> = (0..12).map(|i| ((i * 7 + seed as usize) % 5) as f64 - 2.0).collect();
        let g: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect();
        let sf = SampledFunction::new(&m, f).unwrap();
        let sg = SampledFunction::new(&m, g).unwrap();
        let lhs = expectation_integrals(&sf.combine(a, &sg, b).unwrap(), &m).unwrap().integral;
        let rhs = a * expectation_integrals(&sf, &m).unwrap().integral + b * expectation_integrals(&sg, &m).unwrap().integral;
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs().max(rhs.abs())));
    }

    #[test]
    fn poisson_term_decreases_moving_away(seed in 0u64..10_000, step in 0.01..3.0f64, alpha in 0.05..1.0f64) {
        let mut rng = stream(seed, 2);
        let m = common::random_measure(&mut rng, 1, 8, -2.0, 0.0);
        let i = Cube::new(vec![0.0], 0.5).unwrap();
        let near = poisson_term(&i, &m, None, alpha).unwrap();
        let far = poisson_term(&i.translate(&[step]), &m, None, alpha).unwrap();
        prop_assert!(far <= near);
    }

    #[test]
    fn poisson_term_is_translation_invariant(seed in 0u64..10_000, v in -10.0..10.0f64, w in -10.0..10.0f64) {
        let mut rng = stream(seed, 3);
        let m = common::random_measure(&mut rng, 2, 6, 0.0, 2.0);
        let i = Cube::new(vec![0.5, 0.25], 0.25).unwrap();
        let a = poisson_term(&i, &m, None, 0.7).unwrap();
        let b = poisson_term(&i.translate(&[v, w]), &m.translated(&[v, w]).unwrap(), None, 0.7).unwrap();
        prop_assert!(common::relative(a, b) <= 1e-9);
    }

    #[test]
    fn poisson_term_is_additive(seed in 0u64..10_000) {
        let mut rng = stream(seed, 4);
        let a = common::random_measure(&mut rng, 1, 3, -3.0, 3.0);
        let b = common::random_measure(&mut rng, 1, 3, 4.0, 6.0);
        let mut atoms: Vec<(Vec<f64>, f64)> = Vec::new();
        for m in [&a, &b] {
            atoms.extend(m.positions().iter().cloned().zip(m.masses().iter().copied()));
        }
        let both = AtomicMeasure::new(1, atoms).unwrap();
        let i = Cube::new(vec![0.0], 1.0).unwrap();
        let sum = poisson_term(&i, &a, None, 0.5).unwrap() + poisson_term(&i, &b, None, 0.5).unwrap();
        prop_assert!(common::relative(poisson_term(&i, &both, None, 0.5).unwrap(), sum) <= 1e-12);
    }
}
