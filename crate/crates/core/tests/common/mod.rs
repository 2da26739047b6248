#![allow(dead_code)]

use gstar::kernels::{grad_poisson, scaled_poisson, KernelParams};
use gstar::measures::AtomicMeasure;
use rand::Rng;

/// Fourth-order central difference of `p_t^alpha` along coordinate `axis`
/// (`axis == n` is `t`).
pub fn fd_component(p: &KernelParams<f64>, u: &[f64], t: f64, axis: usize, h: f64) -> f64 {
    let eval = |s: f64| {
        let mut y = u.to_vec();
        let mut tt = t;
        if axis == p.n() {
            tt += s;
        } else {
            y[axis] += s;
        }
        scaled_poisson(&y, tt, p).unwrap()
    };
    (eval(-2.0 * h) - 8.0 * eval(-h) + 8.0 * eval(h) - eval(2.0 * h)) / (12.0 * h)
}

/// Largest error of the closed-form gradient against finite differences:
/// relative where a component is not small, absolute (scaled by 1e3) near
/// the zero set. A value at most 1e-6 passes both criteria.
pub fn fd_gradient_error(p: &KernelParams<f64>, u: &[f64], t: f64) -> f64 {
    let g = grad_poisson(u, t, p).unwrap();
    let scale = g.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let mut worst = 0.0f64;
    for (axis, &exact) in g.iter().enumerate() {
        let best = [1e-2, 3e-3, 1e-3]
            .iter()
            .map(|&step| {
                let fd = fd_component(p, u, t, axis, step * t);
                if exact.abs() >= 1e-3 * scale {
                    (fd - exact).abs() / exact.abs()
                } else {
                    (fd - exact).abs() * 1e3
                }
            })
            .fold(f64::INFINITY, f64::min);
        worst = worst.max(best);
    }
    worst
}

pub fn random_measure<R: Rng>(
    rng: &mut R,
    n: usize,
    k: usize,
    lo: f64,
    hi: f64,
) -> AtomicMeasure<f64> {
    let atoms = (0..k)
        .map(|_| {
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
            (x, gstar::rng::log_uniform(rng, 1.0 / 16.0, 16.0))
        })
        .collect();
    AtomicMeasure::new(n, atoms).unwrap()
}

pub fn relative(a: f64, b: f64) -> f64 {
    let m = a.abs().max(b.abs());
    if m == 0.0 {
        0.0
    } else {
        (a - b).abs() / m
    }
}
