mod common;

use gstar::geometry::{GoodBadParams, GridTemplate, ShiftedGrid};
use gstar::kernels::KernelParams;
use gstar::martingale::{
    bad_fraction_estimate, build_stopping_tree, difference, expectation, good_projection,
    quasi_orthogonality, MartingaleDecomposition, StopCause,
};
use gstar::measures::{AtomicMeasure, SampledFunction};
use gstar::rng::stream;
use proptest::prelude::*;
use rand::Rng;

fn signed(rng: &mut impl Rng, k: usize) -> Vec<f64> {
    (0..k).map(|_| rng.gen_range(-2.0..2.0)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn pythagoras_holds(seed in 0u64..100_000, k in 1usize..=64, depth in 1u32..=8, n in 1usize..=2) {
        let mut rng = stream(seed, 0);
        let sigma = common::random_measure(&mut rng, n, k, 0.0, 1.0);
        let f = SampledFunction::new(&sigma, signed(&mut rng, k)).unwrap();
        let grid = ShiftedGrid::random(n, -12, 0, seed).unwrap();
        let d = MartingaleDecomposition::new(&f, &sigma, &grid, depth).unwrap();
        prop_assert!(d.pythagoras_gap() <= 1e-10, "gap {}", d.pythagoras_gap());
    }

    #[test]
    fn tower_property_and_mean_zero_differences(seed in 0u64..100_000, k in 1usize..30, level in -6i32..=0) {
        let mut rng = stream(seed, 1);
        let sigma = common::random_measure(&mut rng, 2, k, 0.0, 1.0);
        let f = SampledFunction::new(&sigma, signed(&mut rng, k)).unwrap();
        let grid = ShiftedGrid::random(2, -10, 0, seed).unwrap();
        let x: Vec<f64> = sigma.position(0).to_vec();
        let q = grid.locate(&x, level).unwrap();
        let whole = sigma.mass_on(&q).unwrap() * expectation(&f, &sigma, &q).unwrap();
        let parts: f64 = q
            .children()
            .iter()
            .map(|c| sigma.mass_on(c).unwrap() * expectation(&f, &sigma, c).unwrap())
            .sum();
        prop_assert!((whole - parts).abs() <= 1e-12 * (1.0 + whole.abs()));
        let delta = difference(&f, &sigma, &q).unwrap();
        let mean: f64 = delta.values().iter().zip(sigma.masses()).map(|(v, m)| v * m).sum();
        prop_assert!(mean.abs() <= 1e-12 * (1.0 + whole.abs()));
    }

    #[test]
    fn good_projection_shrinks_norm(seed in 0u64..100_000, k in 1usize..30) {
        let mut rng = stream(seed, 2);
        let sigma = common::random_measure(&mut rng, 1, k, 0.0, 1.0);
        let f = SampledFunction::new(&sigma, signed(&mut rng, k)).unwrap();
        let grid = ShiftedGrid::random(1, -14, 0, seed).unwrap();
        let gb = GoodBadParams::new(8, 0.25, 3.0).unwrap();
        let g = good_projection(&f, &sigma, &grid, &gb, 14).unwrap();
        let norm = |v: &[f64]| v.iter().zip(sigma.masses()).map(|(x, m)| x * x * m).sum::<f64>();
        prop_assert!(norm(&g.values) <= norm(f.values()) * (1.0 + 1e-12));
        prop_assert!((0.0..=1.0 + 1e-12).contains(&g.bad_fraction));
    }
}

#[test]
fn worked_example() {
    let sigma = AtomicMeasure::new(1, vec![(vec![0.25], 1.0), (vec![0.75], 3.0)]).unwrap();
    let f = SampledFunction::new(&sigma, vec![2.0, 6.0]).unwrap();
    let grid = ShiftedGrid::standard(1, -4, 0).unwrap();
    let q = grid.cube_at(0, &[0]).unwrap();
    assert_eq!(expectation(&f, &sigma, &q).unwrap(), 5.0);
    assert_eq!(difference(&f, &sigma, &q).unwrap().values(), &[-3.0, 1.0]);
    let d = MartingaleDecomposition::new(&f, &sigma, &grid, 4).unwrap();
    assert_eq!(d.norm_sq, 112.0);
    assert_eq!(d.energy(), 112.0);
}

#[test]
fn vacuous_badness_keeps_f() {
    let mut rng = stream(3, 0);
    let sigma = common::random_measure(&mut rng, 1, 10, 0.0, 1.0);
    let f = SampledFunction::new(&sigma, signed(&mut rng, 10)).unwrap();
    let grid = ShiftedGrid::random(1, -6, 0, 3).unwrap();
    let gb = GoodBadParams::new(10, 0.25, 3.0).unwrap();
    let g = good_projection(&f, &sigma, &grid, &gb, 6).unwrap();
    assert_eq!(g.bad_cubes, 0);
    for (a, b) in g.values.iter().zip(f.values()) {
        assert!((a - b).abs() <= 1e-12);
    }
    assert!(g.bad_fraction <= 1e-24);
}

#[test]
fn bad_fraction_decreases_in_r() {
    let mut rng = stream(4, 0);
    let sigma = common::random_measure(&mut rng, 1, 24, 0.0, 1.0);
    let f = SampledFunction::new(&sigma, signed(&mut rng, 24)).unwrap();
    let template = GridTemplate::new(1, -12, 0).unwrap();
    let mut prev = f64::INFINITY;
    for r in [1u32, 2, 4, 6, 8, 10] {
        let gb = GoodBadParams::new(r, 0.25, 3.0).unwrap();
        let v = bad_fraction_estimate(&f, &sigma, &template, &gb, 12, 200, 17).unwrap();
        assert!(v <= prev + 1e-12, "r={r}: {v} > {prev}");
        prev = v;
    }
    assert!(prev < 1.0);
}

#[allow(clippy::type_complexity)]
fn tree_inputs() -> (
    AtomicMeasure<f64>,
    AtomicMeasure<f64>,
    ShiftedGrid<f64>,
    KernelParams<f64>,
    GoodBadParams<f64>,
) {
    let mut rng = stream(5, 0);
    let sigma = common::random_measure(&mut rng, 1, 20, 0.0, 1.0);
    let w = common::random_measure(&mut rng, 1, 10, 0.0, 1.0);
    let grid = ShiftedGrid::standard(1, -16, 0).unwrap();
    let p = KernelParams::new(1, 4.0, 1.0).unwrap();
    let gb = GoodBadParams::new(3, 0.25, 3.0).unwrap();
    (sigma, w, grid, p, gb)
}

#[test]
fn constant_f_without_w_stops_at_first_generation() {
    let (sigma, _, grid, p, gb) = tree_inputs();
    let empty = AtomicMeasure::empty(1);
    let f = SampledFunction::constant(&sigma, 2.0);
    let root = grid.cube_at(0, &[0]).unwrap();
    let tree = build_stopping_tree(&f, &sigma, &empty, &root, &grid, &p, &gb, 4.0, 1.0).unwrap();
    assert!(tree.nodes.iter().all(|n| n.cause == StopCause::Initial));
    assert_eq!(
        tree.nodes.len(),
        root.children()
            .iter()
            .filter(|c| sigma.mass_on(c).unwrap() > 0.0)
            .count()
    );
    let q = quasi_orthogonality(&tree, &f, &sigma, &grid).unwrap();
    assert!((q.ratio - 1.0).abs() <= 1e-12);
}

#[test]
fn large_atom_value_triggers_average_stops() {
    let (sigma, w, grid, p, gb) = tree_inputs();
    let mut values = vec![1.0; sigma.len()];
    values[7] = 1e4;
    let f = SampledFunction::new(&sigma, values).unwrap();
    let root = grid.cube_at(0, &[0]).unwrap();
    let tree =
        build_stopping_tree(&f, &sigma, &w, &root, &grid, &p, &gb, 4.0, f64::INFINITY).unwrap();
    let hot = sigma.position(7);
    let chain: Vec<_> = tree
        .nodes
        .iter()
        .filter(|n| n.cause == StopCause::Average && n.cube.contains(hot))
        .collect();
    assert!(!chain.is_empty());
    for (i, node) in tree.nodes.iter().enumerate() {
        if let Some(parent) = node.parent {
            let up = &tree.nodes[parent];
            assert!(
                up.cube.contains_cube(&node.cube) && up.cube != node.cube,
                "node {i}"
            );
            if node.cause == StopCause::Average {
                assert!(node.tau > 2.0 * up.tau);
            }
        }
        assert!(node.tau > 0.0);
    }
}

#[test]
fn quasi_orthogonality_is_finite_and_stable_in_depth() {
    let (sigma, w, _, p, gb) = tree_inputs();
    let mut rng = stream(6, 0);
    let values: Vec<f64> = (0..sigma.len()).map(|_| rng.gen_range(0.1..3.0)).collect();
    let mut ratios = Vec::new();
    for floor in [-14, -18, -22, -26, -30] {
        let grid = ShiftedGrid::standard(1, floor, 0).unwrap();
        let f = SampledFunction::new(&sigma, values.clone()).unwrap();
        let root = grid.cube_at(0, &[0]).unwrap();
        let tree = build_stopping_tree(&f, &sigma, &w, &root, &grid, &p, &gb, 4.0, 0.05).unwrap();
        let q = quasi_orthogonality(&tree, &f, &sigma, &grid).unwrap();
        assert!(q.ratio.is_finite() && q.ratio > 0.0);
        assert!(q.kappa >= 1.0 - 1e-12, "kappa {}", q.kappa);
        ratios.push(q.ratio);
    }
    // Unchanged from floor -22 on.
    for r in &ratios[3..] {
        assert_eq!(*r, ratios[2], "{ratios:?}");
    }
}
