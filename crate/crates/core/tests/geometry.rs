mod common;

use gstar::geometry::{
    classify, dilated_multiplicity, estimate_pi_good, long_distance, whitney, Cube, GoodBadParams,
    Goodness, GridTemplate, ReferenceCube, ShiftedGrid,
};
use gstar::rng::stream;
use proptest::prelude::*;
use rand::Rng;

/// `dist(I, ∂J)` for closed axis-parallel cubes that are nested or have
/// disjoint interiors.
fn dist_to_boundary(i: &Cube<f64>, j: &Cube<f64>) -> f64 {
    let n = i.dim();
    let inside = (0..n).all(|a| i.corner()[a] >= j.corner()[a] && i.upper(a) <= j.upper(a));
    if inside {
        (0..n)
            .map(|a| (i.corner()[a] - j.corner()[a]).min(j.upper(a) - i.upper(a)))
            .fold(f64::INFINITY, f64::min)
    } else {
        (0..n)
            .map(|a| {
                let g = (j.corner()[a] - i.upper(a))
                    .max(i.corner()[a] - j.upper(a))
                    .max(0.0);
                g * g
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Bad iff some grid cube `J` at an admissible level, searched over a wide
/// index window, is close to `I`.
fn brute_force_bad(i: &Cube<f64>, grid: &ShiftedGrid<f64>, gb: &GoodBadParams<f64>) -> bool {
    let (level, _) = grid.index_of(i).unwrap();
    for k in level + gb.r as i32..=grid.max_level() {
        let centre = grid.index_of_point(i.corner(), k).unwrap();
        let n = i.dim();
        let span = 5i64;
        let width = (2 * span + 1) as usize;
        for code in 0..width.pow(n as u32) {
            let mut c = code;
            let idx: Vec<i64> = centre
                .iter()
                .map(|&x| {
                    let d = (c % width) as i64 - span;
                    c /= width;
                    x + d
                })
                .collect();
            let j = grid.cube_at(k, &idx).unwrap();
            if dist_to_boundary(i, &j) <= gb.threshold(i.side(), j.side()) {
                return true;
            }
        }
    }
    false
}

#[test]
fn classify_matches_exhaustive_search_on_unit_cubes() {
    let grid = ShiftedGrid::standard(1, 0, 3).unwrap();
    let gb = GoodBadParams::new(2, 0.25, 3.0).unwrap();
    let mut reference = Vec::new();
    for k in 0..8 {
        let i = grid.cube_at(0, &[k]).unwrap();
        let bad = brute_force_bad(&i, &grid, &gb);
        assert_eq!(
            classify(&i, &grid, &gb).unwrap() == Goodness::Bad,
            bad,
            "cube {k}"
        );
        reference.push(bad);
    }
    // Every unit cube of [0, 8) lies within 8^(3/4) of the boundary of [0, 8).
    assert!(reference.iter().all(|&b| b));
}

#[test]
fn classify_matches_exhaustive_search_on_shifted_grids() {
    for seed in 0..6u64 {
        for n in [1usize, 2] {
            let grid = ShiftedGrid::random(n, -14, 0, seed).unwrap();
            let gb = GoodBadParams::new(8, 0.25, 3.0).unwrap();
            let mut rng = stream(seed, 100 + n as u64);
            let mut goods = 0;
            for _ in 0..60 {
                let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
                let level = rng.gen_range(-14..=-8);
                let i = grid.locate(&x, level).unwrap();
                let got = classify(&i, &grid, &gb).unwrap();
                assert_eq!(got == Goodness::Bad, brute_force_bad(&i, &grid, &gb));
                goods += got.is_good() as usize;
            }
            assert!(goods > 0, "seed {seed} n {n}: no good cube sampled");
        }
    }
}

/// Maximal members of the set of admissible cubes, by enumeration.
fn whitney_by_enumeration(
    i: &Cube<f64>,
    gb: &GoodBadParams<f64>,
    min_level: i32,
) -> Vec<Cube<f64>> {
    let top = i.generation();
    let mut admissible: Vec<Cube<f64>> = Vec::new();
    let mut layer = vec![i.clone()];
    for level in (min_level..top).rev() {
        layer = layer.iter().flat_map(|c| c.children()).collect();
        for k in &layer {
            let scale_ok = gb.scale_factor() * k.side() <= i.side();
            if scale_ok && dist_to_boundary(k, i) >= gb.threshold(k.side(), i.side()) {
                admissible.push(k.clone());
            }
        }
        let _ = level;
    }
    let mut out: Vec<Cube<f64>> = admissible
        .iter()
        .filter(|k| {
            !admissible
                .iter()
                .any(|a| a.side() > k.side() && a.contains_cube(k))
        })
        .cloned()
        .collect();
    gstar::geometry::sort_cubes(&mut out);
    out
}

#[test]
fn whitney_matches_enumeration_on_unit_interval() {
    let grid = ShiftedGrid::standard(1, -12, 0).unwrap();
    let gb = GoodBadParams::new(2, 0.25, 3.0).unwrap();
    let i = grid.cube_at(0, &[0]).unwrap();
    let got = whitney(&i, &grid, &gb).unwrap();
    assert!(!got.warning);
    let expected = whitney_by_enumeration(&i, &gb, -12);
    assert_eq!(got.cubes, expected);
    let cover = got.cubes.iter().filter(|k| k.contains(&[0.5])).count();
    assert_eq!(cover, 1);
    for (a, k) in got.cubes.iter().enumerate() {
        assert!(gb.scale_factor() * k.side() <= i.side());
        assert!(dist_to_boundary(k, &i) >= gb.threshold(k.side(), i.side()));
        for other in &got.cubes[a + 1..] {
            assert!(k.gap(other) >= 0.0 && !k.contains_cube(other) && !other.contains_cube(k));
        }
    }
}

#[test]
fn whitney_matches_enumeration_in_the_plane() {
    let grid = ShiftedGrid::random(2, -7, 0, 5).unwrap();
    let gb = GoodBadParams::new(2, 0.2, 3.0).unwrap();
    let i = grid.cube_at(-1, &[0, 0]).unwrap();
    let got = whitney(&i, &grid, &gb).unwrap();
    assert_eq!(got.cubes, whitney_by_enumeration(&i, &gb, -7));
}

#[test]
fn good_strongly_contained_cubes_lie_in_whitney_cubes() {
    for (n, seed, floor) in [(1usize, 1u64, -14), (1, 2, -14), (2, 3, -11)] {
        let grid = ShiftedGrid::random(n, floor, 0, seed).unwrap();
        let gb = GoodBadParams::new(8, 0.25, 3.0).unwrap();
        let i = grid.cube_at(0, &vec![0; n]).unwrap();
        let w = whitney(&i, &grid, &gb).unwrap();
        let mut rng = stream(seed, 7);
        let mut checked = 0;
        for _ in 0..400 {
            let x: Vec<f64> = (0..n)
                .map(|a| i.corner()[a] + rng.gen_range(0.0..1.0))
                .collect();
            let j = grid.locate(&x, rng.gen_range(floor..=-8)).unwrap();
            if classify(&j, &grid, &gb).unwrap().is_good() {
                checked += 1;
                assert!(w.cubes.iter().any(|k| k.contains_cube(&j)), "{j:?}");
            }
        }
        assert!(checked > 10, "only {checked} good cubes sampled");
    }
}

#[test]
fn dilated_whitney_multiplicity_is_bounded() {
    for n in [1usize, 2] {
        let grid = ShiftedGrid::random(n, -9, 0, 9).unwrap();
        let gb = GoodBadParams::new(3, 0.2, 3.0).unwrap();
        let i = grid.cube_at(0, &vec![0; n]).unwrap();
        let w = whitney(&i, &grid, &gb).unwrap();
        let cap = 4usize.pow(n as u32);
        let mut rng = stream(9, n as u64);
        let mut worst = 0;
        for _ in 0..500 {
            let x: Vec<f64> = (0..n)
                .map(|a| i.corner()[a] + rng.gen_range(0.0..1.0))
                .collect();
            worst = worst.max(dilated_multiplicity(&w.cubes, gb.overlap_c, &x));
        }
        assert!(worst >= 1 && worst <= cap, "n={n}: {worst}");
    }
}

#[test]
fn pi_good_agrees_across_reference_cubes() {
    let template = GridTemplate::new(1, -14, 0).unwrap();
    let gb = GoodBadParams::new(8, 0.25, 3.0).unwrap();
    let a = estimate_pi_good::<f64>(
        &template,
        &ReferenceCube {
            level: -10,
            index: vec![3],
        },
        &gb,
        4000,
        1,
    )
    .unwrap();
    let b = estimate_pi_good::<f64>(
        &template,
        &ReferenceCube {
            level: -10,
            index: vec![517],
        },
        &gb,
        4000,
        2,
    )
    .unwrap();
    assert!(a.probability > 0.0 && a.probability < 1.0);
    assert!((a.probability - b.probability).abs() <= 3.0 * (a.halfwidth + b.halfwidth));
    let again = estimate_pi_good::<f64>(
        &template,
        &ReferenceCube {
            level: -10,
            index: vec![3],
        },
        &gb,
        4000,
        1,
    )
    .unwrap();
    assert_eq!(a, again);
}

#[test]
fn pi_good_matches_shift_enumeration() {
    // Exact probability over all 2^8 shift patterns of the scale range.
    let template = GridTemplate::new(1, -8, 0).unwrap();
    let gb = GoodBadParams::new(7, 0.45, 3.0).unwrap();
    let reference = ReferenceCube {
        level: -8,
        index: vec![5],
    };
    let mut exact = 0.0;
    let mut total = 0.0;
    for code in 0..(1u32 << 8) {
        let shifts: Vec<Vec<u8>> = (0..8).map(|b| vec![((code >> b) & 1) as u8]).collect();
        let grid = ShiftedGrid::<f64>::with_shifts(template, shifts).unwrap();
        let q = grid.cube_at(reference.level, &reference.index).unwrap();
        exact += classify(&q, &grid, &gb).unwrap().is_good() as u32 as f64;
        total += 1.0;
    }
    let exact = exact / total;
    let est = estimate_pi_good::<f64>(&template, &reference, &gb, 10_000, 3).unwrap();
    assert!(
        (est.probability - exact).abs() <= 3.0 * est.halfwidth.max(1e-3),
        "{est:?} vs {exact}"
    );
}

proptest! {
    #[test]
    fn long_distance_symmetric_and_dominant(
        a in -10.0..10.0f64, b in -10.0..10.0f64, la in -3i32..3, lb in -3i32..3,
    ) {
        let q = Cube::new(vec![a, b], 2f64.powi(la)).unwrap();
        let r = Cube::new(vec![b, a], 2f64.powi(lb)).unwrap();
        let d = long_distance(&q, &r).unwrap();
        prop_assert_eq!(d, long_distance(&r, &q).unwrap());
        prop_assert!(d >= q.side().max(r.side()));
    }

    #[test]
    fn realized_cubes_nest_and_tile(
        seed in 0u64..1000, x in 0.0..1.0f64, y in 0.0..1.0f64, level in -10i32..0,
    ) {
        let grid = ShiftedGrid::random(2, -10, 0, seed).unwrap();
        let q = grid.locate(&[x, y], level).unwrap();
        let parent = grid.locate(&[x, y], level + 1).unwrap();
        prop_assert!(q.contains(&[x, y]) && parent.contains_cube(&q));
        let kids = grid.children(&parent).unwrap();
        prop_assert_eq!(kids.iter().filter(|c| c.contains(&[x, y])).count(), 1);
        let vol: f64 = kids.iter().map(|c| c.volume()).sum();
        prop_assert_eq!(vol, parent.volume());
        prop_assert!(kids.contains(&q));
    }

    #[test]
    fn classify_invariant_under_joint_translation(
        seed in 0u64..500, x in 0.0..1.0f64, level in -8i32..-2, v in -3.0..3.0f64,
    ) {
        let grid = ShiftedGrid::random(1, -8, 0, seed).unwrap();
        let gb = GoodBadParams::new(2, 0.2, 3.0).unwrap();
        let i = grid.locate(&[x], level).unwrap();
        let moved = grid.translated(&[v]).unwrap();
        let j = i.translate(&[v]);
        prop_assert_eq!(classify(&i, &grid, &gb).unwrap(), classify(&j, &moved, &gb).unwrap());
    }

    #[test]
    fn identical_seed_identical_grid(seed in 0u64..10_000) {
        let a = ShiftedGrid::<f64>::random(2, -6, 0, seed).unwrap();
        let b = ShiftedGrid::<f64>::random(2, -6, 0, seed).unwrap();
        prop_assert_eq!(a.shifts(), b.shifts());
    }
}
