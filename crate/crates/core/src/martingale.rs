//! Sigma-martingale averages and differences on a dyadic grid, the good
//! projection, and stopping cubes.

use rayon::prelude::*;
use serde::Serialize;

use crate::constants::{whitney_cube_of, CubeRecord};
use crate::error::{check_dim, domain, Result};
use crate::geometry::{classify, Cube, GoodBadParams, GridTemplate, ShiftedGrid};
use crate::kernels::KernelParams;
use crate::measures::{poisson_term, AtomicMeasure, SampledFunction};
use crate::rng::stream;
use crate::scalar::Scalar;

/// `E_Q^sigma f`, zero when `sigma(Q) = 0`.
pub fn expectation<T: Scalar>(
    f: &SampledFunction<'_, T>,
    sigma: &AtomicMeasure<T>,
    q: &Cube<T>,
) -> Result<T> {
    f.ensure_base(sigma)?;
    check_dim(sigma.dim(), q.dim())?;
    Ok(average(f.values(), sigma, &sigma.atoms_in(q), false))
}

/// `E_Q^sigma |f|`.
pub fn abs_expectation<T: Scalar>(
    f: &SampledFunction<'_, T>,
    sigma: &AtomicMeasure<T>,
    q: &Cube<T>,
) -> Result<T> {
    f.ensure_base(sigma)?;
    check_dim(sigma.dim(), q.dim())?;
    Ok(average(f.values(), sigma, &sigma.atoms_in(q), true))
}

fn average<T: Scalar>(values: &[T], sigma: &AtomicMeasure<T>, idx: &[usize], abs: bool) -> T {
    let mut mass = T::zero();
    let mut acc = T::zero();
    for &i in idx {
        let v = if abs { values[i].abs() } else { values[i] };
        mass += sigma.mass(i);
        acc += v * sigma.mass(i);
    }
    if mass > T::zero() {
        acc / mass
    } else {
        T::zero()
    }
}

/// `Delta_Q^sigma f = sum_{Q' in ch(Q)} (E_Q' f - E_Q f) 1_Q'` at the atoms.
pub fn difference<'a, T: Scalar>(
    f: &SampledFunction<'a, T>,
    sigma: &'a AtomicMeasure<T>,
    q: &Cube<T>,
) -> Result<SampledFunction<'a, T>> {
    f.ensure_base(sigma)?;
    check_dim(sigma.dim(), q.dim())?;
    let parent = average(f.values(), sigma, &sigma.atoms_in(q), false);
    let mut values = vec![T::zero(); sigma.len()];
    for child in q.children() {
        let idx = sigma.atoms_in(&child);
        let avg = average(f.values(), sigma, &idx, false);
        for i in idx {
            values[i] = avg - parent;
        }
    }
    SampledFunction::new(sigma, values)
}

/// `||Delta_Q f||^2` for one cube.
#[derive(Clone, Debug)]
pub struct DifferenceRecord<T> {
    pub cube: Cube<T>,
    pub norm_sq: T,
}

/// `f = sum_roots (E_Q f) 1_Q + sum_Q Delta_Q f + residual` down to a depth.
#[derive(Clone, Debug)]
pub struct MartingaleDecomposition<T> {
    pub roots: Vec<(Cube<T>, T)>,
    pub differences: Vec<DifferenceRecord<T>>,
    /// `sum ||f - E_Q f||^2_{L^2(1_Q sigma)}` over the finest cubes.
    pub residual: T,
    pub norm_sq: T,
}

impl<T: Scalar> MartingaleDecomposition<T> {
    /// Starts at the grid's top level and records `depth` generations of
    /// differences, never below the grid's finest level.
    pub fn new(
        f: &SampledFunction<'_, T>,
        sigma: &AtomicMeasure<T>,
        grid: &ShiftedGrid<T>,
        depth: u32,
    ) -> Result<Self> {
        f.ensure_base(sigma)?;
        check_dim(grid.dim(), sigma.dim())?;
        let vals = f.values();
        let norm_sq: T = vals
            .iter()
            .zip(sigma.masses())
            .map(|(&v, &m)| v * v * m)
            .sum();
        let top = grid.max_level();
        let floor = (top - depth as i32).max(grid.min_level());
        let mut roots = Vec::new();
        let mut differences = Vec::new();
        let mut residual = T::zero();
        for (root, idx) in top_cubes(sigma, grid)? {
            let avg = average(vals, sigma, &idx, false);
            let mass: T = idx.iter().map(|&i| sigma.mass(i)).sum();
            roots.push((root.clone(), avg * avg * mass));
            let mut stack = vec![(root, idx, avg)];
            while let Some((q, idx, avg)) = stack.pop() {
                if q.generation() <= floor {
                    residual += idx
                        .iter()
                        .map(|&i| (vals[i] - avg) * (vals[i] - avg) * sigma.mass(i))
                        .sum::<T>();
                    continue;
                }
                let mut norm = T::zero();
                for child in q.children() {
                    let sub: Vec<usize> = idx
                        .iter()
                        .copied()
                        .filter(|&i| child.contains(sigma.position(i)))
                        .collect();
                    if sub.is_empty() {
                        continue;
                    }
                    let a = average(vals, sigma, &sub, false);
                    let m: T = sub.iter().map(|&i| sigma.mass(i)).sum();
                    norm += (a - avg) * (a - avg) * m;
                    stack.push((child, sub, a));
                }
                differences.push(DifferenceRecord {
                    cube: q,
                    norm_sq: norm,
                });
            }
        }
        crate::geometry::sort_cubes_by(&mut differences, |d| &d.cube);
        Ok(Self {
            roots,
            differences,
            residual,
            norm_sq,
        })
    }

    /// `sum ||(E_Q f) 1_Q||^2 + sum ||Delta_Q f||^2 + residual`.
    pub fn energy(&self) -> T {
        self.roots.iter().map(|r| r.1).sum::<T>()
            + self.differences.iter().map(|d| d.norm_sq).sum::<T>()
            + self.residual
    }

    /// Relative gap in the Pythagoras identity.
    pub fn pythagoras_gap(&self) -> T {
        if self.norm_sq == T::zero() {
            return self.energy().abs();
        }
        (self.norm_sq - self.energy()).abs() / self.norm_sq
    }
}

/// Top-level grid cubes with positive sigma mass and their atom indices.
fn top_cubes<T: Scalar>(
    sigma: &AtomicMeasure<T>,
    grid: &ShiftedGrid<T>,
) -> Result<Vec<(Cube<T>, Vec<usize>)>> {
    let mut out: Vec<(Cube<T>, Vec<usize>)> = Vec::new();
    for i in 0..sigma.len() {
        let c = grid.locate(sigma.position(i), grid.max_level())?;
        match out.iter_mut().find(|(q, _)| *q == c) {
            Some((_, idx)) => idx.push(i),
            None => out.push((c, vec![i])),
        }
    }
    crate::geometry::sort_cubes_by(&mut out, |e| &e.0);
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct GoodProjection<T> {
    /// Values of `f_good` at the sigma atoms.
    pub values: Vec<T>,
    /// `||f - f_good||^2 / ||f||^2`.
    pub bad_fraction: T,
    pub bad_cubes: usize,
}

/// `f_good`: top averages plus the differences of good cubes. The residual
/// below the finest recorded level is kept on good finest cubes.
pub fn good_projection<T: Scalar>(
    f: &SampledFunction<'_, T>,
    sigma: &AtomicMeasure<T>,
    grid: &ShiftedGrid<T>,
    gb: &GoodBadParams<T>,
    depth: u32,
) -> Result<GoodProjection<T>> {
    f.ensure_base(sigma)?;
    let vals = f.values();
    let top = grid.max_level();
    let floor = (top - depth as i32).max(grid.min_level());
    let mut good = vec![T::zero(); sigma.len()];
    let mut bad_cubes = 0;
    for (root, idx) in top_cubes(sigma, grid)? {
        let avg = average(vals, sigma, &idx, false);
        for &i in &idx {
            good[i] += avg;
        }
        let mut stack = vec![(root, idx, avg)];
        while let Some((q, idx, avg)) = stack.pop() {
            let is_good = classify(&q, grid, gb)?.is_good();
            if !is_good {
                bad_cubes += 1;
            }
            if q.generation() <= floor {
                if is_good {
                    for &i in &idx {
                        good[i] += vals[i] - avg;
                    }
                }
                continue;
            }
            for child in q.children() {
                let sub: Vec<usize> = idx
                    .iter()
                    .copied()
                    .filter(|&i| child.contains(sigma.position(i)))
                    .collect();
                if sub.is_empty() {
                    continue;
                }
                let a = average(vals, sigma, &sub, false);
                if is_good {
                    for &i in &sub {
                        good[i] += a - avg;
                    }
                }
                stack.push((child, sub, a));
            }
        }
    }
    let norm: T = vals
        .iter()
        .zip(sigma.masses())
        .map(|(&v, &m)| v * v * m)
        .sum();
    let bad: T = vals
        .iter()
        .zip(&good)
        .zip(sigma.masses())
        .map(|((&v, &g), &m)| (v - g) * (v - g) * m)
        .sum();
    Ok(GoodProjection {
        values: good,
        bad_fraction: if norm > T::zero() {
            bad / norm
        } else {
            T::zero()
        },
        bad_cubes,
    })
}

/// Mean of the bad fraction over `samples` random shifts of `template`.
pub fn bad_fraction_estimate<T: Scalar>(
    f: &SampledFunction<'_, T>,
    sigma: &AtomicMeasure<T>,
    template: &GridTemplate,
    gb: &GoodBadParams<T>,
    depth: u32,
    samples: usize,
    seed: u64,
) -> Result<T> {
    if samples == 0 {
        return Err(domain("at least one sample is required"));
    }
    let fractions = (0..samples as u64)
        .into_par_iter()
        .map(|i| {
            let shifts = template.random_shifts(&mut stream(seed, i + 1));
            let grid = ShiftedGrid::with_shifts(*template, shifts)?;
            Ok(good_projection(f, sigma, &grid, gb, depth)?.bad_fraction)
        })
        .collect::<Result<Vec<T>>>()?;
    Ok(fractions.into_iter().sum::<T>() / T::from_usize_lossy(samples))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StopCause {
    /// A child of the root in the first generation.
    Initial,
    /// The `|f|`-average more than doubled.
    Average,
    /// The Whitney pivotal energy saturated.
    Pivotal,
}

#[derive(Clone, Debug)]
pub struct StoppingNode<T> {
    pub cube: Cube<T>,
    pub tau: T,
    pub cause: StopCause,
    pub parent: Option<usize>,
    pub generation: usize,
    pub sigma_mass: T,
}

#[derive(Clone, Debug)]
pub struct StoppingTree<T> {
    pub nodes: Vec<StoppingNode<T>>,
    /// The search reached the grid's finest level in a cube that could
    /// still have stopping descendants.
    pub truncated: bool,
    pub c0: T,
    pub pivotal_ref_sq: T,
}

#[derive(Clone, Debug, Serialize)]
pub struct NodeRecord {
    pub cube: CubeRecord,
    pub tau: f64,
    pub cause: StopCause,
    pub parent: Option<usize>,
    pub generation: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct TreeRecord {
    pub c0: f64,
    pub pivotal_ref_sq: f64,
    pub truncated: bool,
    pub nodes: Vec<NodeRecord>,
}

impl<T: Scalar> StoppingTree<T> {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn generations(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| n.generation + 1)
            .max()
            .unwrap_or(0)
    }

    /// Index of the smallest node containing `q`.
    pub fn owner(&self, q: &Cube<T>) -> Option<usize> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.cube.contains_cube(q))
            .min_by(|a, b| {
                a.1.cube
                    .side()
                    .partial_cmp(&b.1.cube.side())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .map(|(i, _)| i)
    }

    pub fn record(&self) -> TreeRecord {
        TreeRecord {
            c0: self.c0.as_f64(),
            pivotal_ref_sq: self.pivotal_ref_sq.as_f64(),
            truncated: self.truncated,
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeRecord {
                    cube: CubeRecord::from(&n.cube),
                    tau: n.tau.as_f64(),
                    cause: n.cause,
                    parent: n.parent,
                    generation: n.generation,
                })
                .collect(),
        }
    }
}

struct TreeInputs<'a, T> {
    abs: Vec<T>,
    sigma: &'a AtomicMeasure<T>,
    w: &'a AtomicMeasure<T>,
    grid: &'a ShiftedGrid<T>,
    alpha: T,
    gb: &'a GoodBadParams<T>,
    c0: T,
    p_ref_sq: T,
}

/// Stopping cube, its value, the cause and the parent's value.
type Stop<T> = (Cube<T>, T, StopCause, T);

impl<T: Scalar> TreeInputs<'_, T> {
    /// `sum_{K in W_I} P_alpha(K, 1_S sigma)^2 w(K)`.
    fn whitney_energy(&self, i: &Cube<T>, s: &Cube<T>) -> Result<T> {
        let mut acc = T::zero();
        for k in self.w.atoms_in(i) {
            if let Some(kc) = whitney_cube_of(i, self.w.position(k), self.grid, self.gb)? {
                let pt = poisson_term(&kc, self.sigma, Some(s), self.alpha)?;
                acc += pt * pt * self.w.mass(k);
            }
        }
        Ok(acc)
    }

    /// Maximal stopping cubes strictly inside node `s` with value `tau`.
    fn children_of(&self, s: &Cube<T>, tau: T, truncated: &mut bool) -> Result<Vec<Stop<T>>> {
        let mut out = Vec::new();
        let mut stack: Vec<Cube<T>> = s.children();
        while let Some(i) = stack.pop() {
            let idx = self.sigma.atoms_in(&i);
            if idx.is_empty() {
                continue;
            }
            let mass: T = idx.iter().map(|&k| self.sigma.mass(k)).sum();
            let avg = idx
                .iter()
                .map(|&k| self.abs[k] * self.sigma.mass(k))
                .sum::<T>()
                / mass;
            if avg > T::lit(2.0) * tau {
                out.push((i, avg, StopCause::Average, mass));
                continue;
            }
            let energy = self.whitney_energy(&i, s)?;
            if energy > T::zero() && energy >= self.c0 * self.p_ref_sq * mass {
                out.push((i, tau, StopCause::Pivotal, mass));
                continue;
            }
            let w_inside = !self.w.atoms_in(&i).is_empty();
            if idx.len() < 2 && !w_inside {
                continue;
            }
            if i.generation() <= self.grid.min_level() {
                *truncated = true;
                continue;
            }
            stack.extend(i.children());
        }
        crate::geometry::sort_cubes_by(&mut out, |e| &e.0);
        Ok(out)
    }
}

/// Stopping cubes of `f` inside the grid cube `root`. Condition (b) needs a
/// positive Whitney energy, so an empty `w` never triggers it.
#[allow(clippy::too_many_arguments)]
pub fn build_stopping_tree<T: Scalar>(
    f: &SampledFunction<'_, T>,
    sigma: &AtomicMeasure<T>,
    w: &AtomicMeasure<T>,
    root: &Cube<T>,
    grid: &ShiftedGrid<T>,
    p: &KernelParams<T>,
    gb: &GoodBadParams<T>,
    c0: T,
    pivotal_ref_sq: T,
) -> Result<StoppingTree<T>> {
    f.ensure_base(sigma)?;
    check_dim(grid.dim(), sigma.dim())?;
    check_dim(grid.dim(), w.dim())?;
    grid.index_of(root)?;
    if sigma.mass_on(root)? == T::zero() {
        return Err(domain("stopping tree needs sigma(root) > 0"));
    }
    let inputs = TreeInputs {
        abs: f.values().iter().map(|v| v.abs()).collect(),
        sigma,
        w,
        grid,
        alpha: p.alpha(),
        gb,
        c0,
        p_ref_sq: pivotal_ref_sq,
    };
    let mut nodes = Vec::new();
    for child in root.children() {
        let idx = sigma.atoms_in(&child);
        if idx.is_empty() {
            continue;
        }
        let mass: T = idx.iter().map(|&k| sigma.mass(k)).sum();
        let tau = idx
            .iter()
            .map(|&k| inputs.abs[k] * sigma.mass(k))
            .sum::<T>()
            / mass;
        nodes.push(StoppingNode {
            cube: child,
            tau,
            cause: StopCause::Initial,
            parent: None,
            generation: 0,
            sigma_mass: mass,
        });
    }
    let mut truncated = false;
    let mut next = 0;
    while next < nodes.len() {
        let (cube, tau, generation) = {
            let n: &StoppingNode<T> = &nodes[next];
            (n.cube.clone(), n.tau, n.generation)
        };
        if cube.generation() > grid.min_level() {
            for (c, t, cause, mass) in inputs.children_of(&cube, tau, &mut truncated)? {
                nodes.push(StoppingNode {
                    cube: c,
                    tau: t,
                    cause,
                    parent: Some(next),
                    generation: generation + 1,
                    sigma_mass: mass,
                });
            }
        }
        next += 1;
    }
    Ok(StoppingTree {
        nodes,
        truncated,
        c0,
        pivotal_ref_sq,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct QuasiOrthogonality<T> {
    /// `sum tau(S)^2 sigma(S) / ||f||^2`.
    pub ratio: T,
    /// `max |E_I f| / tau(S(I))` over grid cubes `I` with `sigma(I) > 0`.
    pub kappa: T,
    pub cubes_scanned: usize,
}

pub fn quasi_orthogonality<T: Scalar>(
    tree: &StoppingTree<T>,
    f: &SampledFunction<'_, T>,
    sigma: &AtomicMeasure<T>,
    grid: &ShiftedGrid<T>,
) -> Result<QuasiOrthogonality<T>> {
    f.ensure_base(sigma)?;
    let norm: T = f
        .values()
        .iter()
        .zip(sigma.masses())
        .map(|(&v, &m)| v * v * m)
        .sum();
    let total: T = tree
        .nodes
        .iter()
        .map(|n| n.tau * n.tau * n.sigma_mass)
        .sum();
    let mut kappa = T::zero();
    let mut scanned = 0;
    let mut stack: Vec<Cube<T>> = tree
        .nodes
        .iter()
        .filter(|n| n.parent.is_none())
        .map(|n| n.cube.clone())
        .collect();
    while let Some(q) = stack.pop() {
        let idx = sigma.atoms_in(&q);
        if idx.is_empty() {
            continue;
        }
        scanned += 1;
        let e = average(f.values(), sigma, &idx, false).abs();
        if let Some(o) = tree.owner(&q) {
            let tau = tree.nodes[o].tau;
            if tau > T::zero() {
                kappa = kappa.max(e / tau);
            }
        }
        if idx.len() > 1 && q.generation() > grid.min_level() {
            stack.extend(q.children());
        }
    }
    Ok(QuasiOrthogonality {
        ratio: if norm > T::zero() {
            total / norm
        } else {
            T::zero()
        },
        kappa,
        cubes_scanned: scanned,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(atoms: &[(f64, f64)]) -> AtomicMeasure<f64> {
        AtomicMeasure::new(1, atoms.iter().map(|&(x, m)| (vec![x], m)).collect()).unwrap()
    }

    #[test]
    fn worked_example() {
        let s = line(&[(0.25, 1.0), (0.75, 3.0)]);
        let f = SampledFunction::new(&s, vec![2.0, 6.0]).unwrap();
        let q = Cube::new(vec![0.0], 1.0).unwrap();
        assert_eq!(expectation(&f, &s, &q).unwrap(), 5.0);
        let d = difference(&f, &s, &q).unwrap();
        assert_eq!(d.values(), &[-3.0, 1.0]);
        let grid = ShiftedGrid::standard(1, -4, 0).unwrap();
        let dec = MartingaleDecomposition::new(&f, &s, &grid, 4).unwrap();
        assert_eq!(dec.norm_sq, 112.0);
        assert_eq!(dec.roots[0].1, 100.0);
        assert!(dec.pythagoras_gap() < 1e-15);
    }

    #[test]
    fn constant_function_without_w_stops_at_first_generation() {
        let s = line(&[(0.1, 1.0), (0.3, 2.0), (0.8, 1.0)]);
        let w = AtomicMeasure::empty(1);
        let f = SampledFunction::constant(&s, 2.0);
        let grid = ShiftedGrid::standard(1, -8, 0).unwrap();
        let p = KernelParams::new(1, 4.0, 1.0).unwrap();
        let gb = GoodBadParams::new(2, 0.2, 3.0).unwrap();
        let root = grid.cube_at(0, &[0]).unwrap();
        let tree = build_stopping_tree(&f, &s, &w, &root, &grid, &p, &gb, 4.0, 1.0).unwrap();
        assert_eq!(tree.len(), 2);
        assert!(tree.nodes.iter().all(|n| n.cause == StopCause::Initial));
    }
}
