//! Bundled one-dimensional weight pairs used for the equivalence band.

use rand::Rng;

use crate::error::Result;
use crate::measures::{AtomicMeasure, WeightPair};
use crate::rng::{log_uniform, stream};

/// A named pair of the bundled suite.
#[derive(Clone, Debug)]
pub struct SuitePair {
    pub name: &'static str,
    pub pair: WeightPair<f64>,
}

fn line(atoms: &[(f64, f64)]) -> Result<AtomicMeasure<f64>> {
    AtomicMeasure::new(1, atoms.iter().map(|&(x, m)| (vec![x], m)).collect())
}

fn unit(xs: &[f64]) -> Vec<(f64, f64)> {
    xs.iter().map(|&x| (x, 1.0)).collect()
}

fn pair(name: &'static str, sigma: Vec<(f64, f64)>, w: Vec<(f64, f64)>) -> Result<SuitePair> {
    Ok(SuitePair {
        name,
        pair: WeightPair::new(line(&sigma)?, line(&w)?, true)?,
    })
}

/// Twelve pairs on `[0, 1)` with disjoint supports and at most 16 atoms per
/// measure.
pub fn bundled_suite() -> Result<Vec<SuitePair>> {
    let interlaced_s: Vec<f64> = (0..8).map(|i| (2 * i) as f64 / 16.0 + 0.01).collect();
    let interlaced_w: Vec<f64> = (0..8).map(|i| (2 * i + 1) as f64 / 16.0 + 0.01).collect();
    let cluster_s: Vec<f64> = (0..5).map(|i| 0.3 + 0.004 * i as f64).collect();
    let cluster_w: Vec<f64> = (0..5).map(|i| 0.35 + 0.004 * i as f64).collect();
    let left: Vec<f64> = (0..6).map(|i| 0.2 * i as f64 / 5.0).collect();
    let right: Vec<f64> = (0..6).map(|i| 0.8 + 0.2 * i as f64 / 5.0 - 1e-3).collect();
    let power_s: Vec<(f64, f64)> = (0..8)
        .map(|i| (0.05 + 0.11 * i as f64, 2f64.powi(-i)))
        .collect();
    let power_w: Vec<(f64, f64)> = (0..8)
        .map(|i| (0.1 + 0.11 * i as f64, 2f64.powi(i - 7)))
        .collect();
    let geo_s: Vec<f64> = (2..=9).map(|k| 0.5 + 2f64.powi(-k)).collect();
    let geo_w: Vec<f64> = (2..=9).map(|k| 0.5 - 2f64.powi(-k)).collect();

    let mut rng = stream(2024, 0);
    let mut random = |k: usize| -> Vec<(f64, f64)> {
        (0..k)
            .map(|_| {
                (
                    rng.gen_range(0.0..1.0),
                    log_uniform(&mut rng, 1.0 / 16.0, 16.0),
                )
            })
            .collect()
    };
    let rand_s = random(6);
    let rand_w = random(6);

    let imbalance_w: Vec<(f64, f64)> = [0.15, 0.4, 0.65, 0.9].iter().map(|&x| (x, 1e-3)).collect();
    let ring_w: Vec<f64> = vec![0.1, 0.2, 0.3, 0.7, 0.8, 0.9];

    Ok(vec![
        pair("two-points", unit(&[0.2]), unit(&[0.7]))?,
        pair("adjacent-halves", unit(&[0.0]), unit(&[0.5]))?,
        pair("interlaced", unit(&interlaced_s), unit(&interlaced_w))?,
        pair("clusters", unit(&cluster_s), unit(&cluster_w))?,
        pair("separated", unit(&left), unit(&right))?,
        pair("power-law", power_s, power_w)?,
        pair(
            "heavy-atom",
            vec![(0.45, 16.0), (0.1, 1.0), (0.9, 1.0)],
            unit(&[0.3, 0.6, 0.75]),
        )?,
        pair("near-coincident", unit(&[0.5]), unit(&[0.501]))?,
        pair("geometric", unit(&geo_s), unit(&geo_w))?,
        pair("random", rand_s, rand_w)?,
        pair("imbalanced", vec![(0.25, 8.0), (0.55, 8.0)], imbalance_w)?,
        pair("surrounded", unit(&[0.5]), unit(&ring_w))?,
    ])
}
