//! Adaptive tensor Gauss–Legendre quadrature over regions of the upper
//! half-space `R^n x (0, inf)`.
//!
//! The `t`-range is cut into geometric slabs. Inside a slab the `y`-box is
//! split at feature coordinates and graded so that a cell's side is at most
//! `grading * (dist(cell, features) + t_lo)`. Every cell carries the rule on
//! itself and on its `2^d` children; their difference is the error estimate
//! that drives global refinement. Unbounded `y` is truncated to a box around
//! the features and the discarded part is bounded through
//! [`Integrand::tail_bound`]. Open `t`-ends are closed by slab-ratio
//! monitoring with a geometric remainder.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;

use crate::error::{check_dim, domain, Error, Result};
use crate::geometry::Cube;
use crate::kernels::KernelParams;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureSpec<T> {
    /// Target relative error of the full integral.
    pub tol: T,
    /// Geometric ratio between consecutive `t`-slab endpoints.
    pub t_ratio: T,
    /// Slabs laid out toward `t -> 0` before ratio monitoring starts.
    pub min_slabs: usize,
    pub max_slabs: usize,
    /// Truncated `y`-box half-width is this times `(feature spread + t)`.
    pub y_radius_factor: T,
    /// Bisection depth below an initial cell.
    pub max_depth: u32,
    /// Gauss–Legendre points per axis.
    pub order: usize,
    /// Cell size relative to `(distance to features + t)`.
    pub grading: T,
    pub max_cells: usize,
    pub features: Vec<Vec<T>>,
}

impl<T: Scalar> Default for QuadratureSpec<T> {
    fn default() -> Self {
        Self {
            tol: T::lit(1e-4),
            t_ratio: T::lit(0.5),
            min_slabs: 20,
            max_slabs: 400,
            y_radius_factor: T::lit(32.0),
            max_depth: 12,
            order: 4,
            grading: T::one(),
            max_cells: 400_000,
            features: Vec::new(),
        }
    }
}

impl<T: Scalar> QuadratureSpec<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > T::zero()) {
            return Err(domain("quadrature tolerance must be positive"));
        }
        if !(self.t_ratio > T::zero() && self.t_ratio < T::one()) {
            return Err(domain("t ratio must lie in (0, 1)"));
        }
        if self.max_depth < 1 {
            return Err(domain("maximum refinement depth must be at least 1"));
        }
        if self.order < 1 || self.order > 32 {
            return Err(domain("quadrature order must lie in 1..=32"));
        }
        if !(self.grading > T::zero()) || !(self.y_radius_factor > T::one()) {
            return Err(domain(
                "grading must be positive and the radius factor above 1",
            ));
        }
        if self.max_slabs < self.min_slabs.max(1) {
            return Err(domain("max_slabs must be at least min_slabs"));
        }
        Ok(())
    }

    pub fn with_tol(mut self, tol: T) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_features(mut self, features: Vec<Vec<T>>) -> Self {
        self.features = features;
        self
    }
}

/// A function on the half-space, possibly vector valued.
pub trait Integrand<T: Scalar>: Sync {
    fn outputs(&self) -> usize {
        1
    }

    /// Adds `weight * f(y, t)` to `acc`.
    fn accumulate(&self, y: &[T], t: T, weight: T, acc: &mut [T]);

    /// Size of a value, the reference for relative tolerances.
    fn magnitude(&self, v: &[T]) -> T {
        v.iter().map(|x| x.abs()).sum()
    }

    /// Distance between two estimates of the same quantity.
    fn deviation(&self, a: &[T], b: &[T]) -> T {
        a.iter().zip(b).map(|(&x, &y)| (x - y).abs()).sum()
    }

    /// Points where the integrand peaks or has a kink.
    fn features(&self) -> Vec<Vec<T>> {
        Vec::new()
    }

    /// Upper bound for the magnitude of `int f(y, t) dy` over all `y` at
    /// distance more than `rho` from every feature. `None` when unknown.
    fn tail_bound(&self, _t: T, _rho: T) -> Option<T> {
        None
    }
}

/// Scalar integrand from a closure.
pub struct FnIntegrand<F, B = fn(f64, f64) -> Option<f64>> {
    pub f: F,
    pub features: Vec<Vec<f64>>,
    pub tail: Option<B>,
}

impl<F> FnIntegrand<F> {
    pub fn new(f: F) -> Self {
        Self {
            f,
            features: Vec::new(),
            tail: None,
        }
    }
}

impl<T, F, B> Integrand<T> for FnIntegrand<F, B>
where
    T: Scalar,
    F: Fn(&[T], T) -> T + Sync,
    B: Fn(f64, f64) -> Option<f64> + Sync,
{
    fn accumulate(&self, y: &[T], t: T, weight: T, acc: &mut [T]) {
        acc[0] += weight * (self.f)(y, t);
    }

    fn features(&self) -> Vec<Vec<T>> {
        self.features
            .iter()
            .map(|p| p.iter().map(|&c| T::lit(c)).collect())
            .collect()
    }

    fn tail_bound(&self, t: T, rho: T) -> Option<T> {
        self.tail
            .as_ref()
            .and_then(|b| b(t.as_f64(), rho.as_f64()))
            .map(T::lit)
    }
}

/// Integration domain `{(y, t) : y in box (or free), t_lo < t <= t_hi}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Region<T> {
    pub dim: usize,
    pub y_box: Option<(Vec<T>, Vec<T>)>,
    pub t_lo: T,
    pub t_hi: T,
}

impl<T: Scalar> Region<T> {
    /// `W_R = R x (l(R)/2, l(R)]`.
    pub fn whitney(r: &Cube<T>) -> Self {
        Self::slab_over(r, r.side() / T::lit(2.0), r.side())
    }

    /// `t in (0, l(Q)]` with `y` free; the Carleson-box restriction of the
    /// outer variable belongs to the integrand.
    pub fn carleson(q: &Cube<T>) -> Self {
        Self::band(q.dim(), T::zero(), q.side())
    }

    pub fn slab_over(r: &Cube<T>, t_lo: T, t_hi: T) -> Self {
        let lo = r.corner().to_vec();
        let hi = (0..r.dim()).map(|i| r.upper(i)).collect();
        Self {
            dim: r.dim(),
            y_box: Some((lo, hi)),
            t_lo,
            t_hi,
        }
    }

    pub fn slab(lo: Vec<T>, hi: Vec<T>, t_lo: T, t_hi: T) -> Self {
        Self {
            dim: lo.len(),
            y_box: Some((lo, hi)),
            t_lo,
            t_hi,
        }
    }

    /// `y` free, `t in (t_lo, t_hi]`.
    pub fn band(dim: usize, t_lo: T, t_hi: T) -> Self {
        Self {
            dim,
            y_box: None,
            t_lo,
            t_hi,
        }
    }

    pub fn half_space(dim: usize) -> Self {
        Self::band(dim, T::zero(), T::infinity())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_lo >= T::zero() && self.t_hi > self.t_lo) {
            return Err(domain(format!(
                "empty t-range ({}, {}]",
                self.t_lo, self.t_hi
            )));
        }
        if let Some((lo, hi)) = &self.y_box {
            check_dim(self.dim, lo.len())?;
            check_dim(self.dim, hi.len())?;
            if lo.iter().zip(hi).any(|(&a, &b)| !(b > a)) {
                return Err(domain("y box has zero measure"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuadResult<T> {
    pub value: Vec<T>,
    /// Refinement error plus geometric remainders plus truncation tails.
    pub error: T,
    pub converged: bool,
    /// False when a truncated tail had no available bound.
    pub certified: bool,
    pub cells: usize,
    pub slabs: usize,
    pub tail: T,
}

impl<T: Scalar> QuadResult<T> {
    pub fn scalar(&self) -> T {
        self.value[0]
    }

    pub fn relative_error(&self, magnitude: T) -> T {
        if magnitude > T::zero() {
            self.error / magnitude
        } else if self.error > T::zero() {
            T::infinity()
        } else {
            T::zero()
        }
    }
}

/// Bound for `t^(-n) int_{|y| > R} (t / (t + |y|))^(n lambda) dy`, namely
/// `|S^(n-1)| / (n (lambda - 1)) * (t / (t + R))^(n (lambda - 1))`; exact for `n = 1`.
pub fn theta_tail_bound<T: Scalar>(p: &KernelParams<T>, t: T, r: T) -> Result<T> {
    if !(t > T::zero()) || !(r > T::zero()) {
        return Err(domain("theta tail bound needs t > 0 and R > 0"));
    }
    let n = p.nf();
    let exponent = n * (p.lambda() - T::one());
    Ok(sphere_area::<T>(p.n()) / exponent * (t / (t + r)).powf(exponent))
}

/// Surface area of the unit sphere in `R^n`.
pub fn sphere_area<T: Scalar>(n: usize) -> T {
    let half = T::lit(n as f64 / 2.0);
    T::lit(2.0) * T::PI().powf(half) / T::lit(gamma_fn(n as f64 / 2.0))
}

fn gamma_fn(x: f64) -> f64 {
    // x is a positive half-integer here.
    if (x - x.round()).abs() < 1e-12 {
        (1..x.round() as u64).map(|k| k as f64).product()
    } else {
        let mut acc = std::f64::consts::PI.sqrt();
        let mut k = 0.5;
        while k < x - 0.25 {
            acc *= k;
            k += 1.0;
        }
        acc
    }
}

/// Gauss–Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(q: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; q];
    let mut weights = vec![0.0; q];
    for i in 0..q {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (q as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=q {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pq = if q == 1 { x } else { p1 };
            let pm = if q == 1 { 1.0 } else { p0 };
            dp = q as f64 * (x * pq - pm) / (x * x - 1.0);
            let dx = pq / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[q - 1 - i] = 0.5 * (x + 1.0);
        weights[q - 1 - i] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Tensor rule on the unit cube `[0, 1]^d`.
struct TensorRule<T> {
    d: usize,
    points: Vec<T>,
    weights: Vec<T>,
}

impl<T: Scalar> TensorRule<T> {
    fn new(q: usize, d: usize) -> Self {
        let (x, w) = gauss_legendre(q);
        let count = q.pow(d as u32);
        let mut points = Vec::with_capacity(count * d);
        let mut weights = Vec::with_capacity(count);
        for k in 0..count {
            let mut rem = k;
            let mut wk = 1.0;
            for _ in 0..d {
                let i = rem % q;
                rem /= q;
                points.push(T::lit(x[i]));
                wk *= w[i];
            }
            weights.push(T::lit(wk));
        }
        Self { d, points, weights }
    }
}

#[derive(Clone, Copy)]
enum Mode<T> {
    /// Cells are `(y, t)` boxes.
    SpaceTime,
    /// Cells are `y` boxes at a fixed `t`.
    Space(T),
}

struct Engine<'a, T: Scalar, F: Integrand<T> + ?Sized> {
    f: &'a F,
    rule: TensorRule<T>,
    mode: Mode<T>,
    n: usize,
    outputs: usize,
}

#[derive(Clone)]
struct Cell<T> {
    lo: Vec<T>,
    hi: Vec<T>,
    depth: u32,
    slab: usize,
    coarse: Vec<T>,
    kids: Vec<Vec<T>>,
    err: T,
}

impl<T: Scalar> Cell<T> {
    fn fine(&self, outputs: usize) -> Vec<T> {
        let mut v = vec![T::zero(); outputs];
        for k in &self.kids {
            for (a, &b) in v.iter_mut().zip(k) {
                *a += b;
            }
        }
        v
    }
}

fn children_boxes<T: Scalar>(lo: &[T], hi: &[T]) -> Vec<(Vec<T>, Vec<T>)> {
    let d = lo.len();
    let mid: Vec<T> = lo
        .iter()
        .zip(hi)
        .map(|(&a, &b)| (a + b) / T::lit(2.0))
        .collect();
    (0..1usize << d)
        .map(|mask| {
            let mut l = lo.to_vec();
            let mut h = hi.to_vec();
            for i in 0..d {
                if mask >> i & 1 == 1 {
                    l[i] = mid[i];
                } else {
                    h[i] = mid[i];
                }
            }
            (l, h)
        })
        .collect()
}

impl<'a, T: Scalar, F: Integrand<T> + ?Sized> Engine<'a, T, F> {
    fn apply(&self, lo: &[T], hi: &[T]) -> Result<Vec<T>> {
        let d = self.rule.d;
        let vol: T = lo.iter().zip(hi).map(|(&a, &b)| b - a).product();
        let mut acc = vec![T::zero(); self.outputs];
        let mut point = vec![T::zero(); d];
        for (k, &w) in self.rule.weights.iter().enumerate() {
            for i in 0..d {
                point[i] = lo[i] + (hi[i] - lo[i]) * self.rule.points[k * d + i];
            }
            match self.mode {
                Mode::SpaceTime => {
                    self.f
                        .accumulate(&point[..self.n], point[self.n], w * vol, &mut acc)
                }
                Mode::Space(t) => self.f.accumulate(&point, t, w * vol, &mut acc),
            }
        }
        if acc.iter().any(|v| !v.is_finite()) {
            let center: Vec<f64> = lo
                .iter()
                .zip(hi)
                .map(|(&a, &b)| ((a + b) / T::lit(2.0)).as_f64())
                .collect();
            let (y, t) = match self.mode {
                Mode::SpaceTime => (center[..self.n].to_vec(), center[self.n]),
                Mode::Space(t) => (center, t.as_f64()),
            };
            return Err(Error::NonFinite { y, t });
        }
        Ok(acc)
    }

    fn make_cell(
        &self,
        lo: Vec<T>,
        hi: Vec<T>,
        depth: u32,
        slab: usize,
        coarse: Option<Vec<T>>,
    ) -> Result<Cell<T>> {
        let coarse = match coarse {
            Some(c) => c,
            None => self.apply(&lo, &hi)?,
        };
        let kids = children_boxes(&lo, &hi)
            .iter()
            .map(|(l, h)| self.apply(l, h))
            .collect::<Result<Vec<_>>>()?;
        let mut cell = Cell {
            lo,
            hi,
            depth,
            slab,
            coarse,
            kids,
            err: T::zero(),
        };
        let fine = cell.fine(self.outputs);
        cell.err = self.f.deviation(&cell.coarse, &fine);
        Ok(cell)
    }

    fn refine(&self, cell: &Cell<T>) -> Result<Vec<Cell<T>>> {
        children_boxes(&cell.lo, &cell.hi)
            .into_iter()
            .zip(&cell.kids)
            .map(|((l, h), c)| self.make_cell(l, h, cell.depth + 1, cell.slab, Some(c.clone())))
            .collect()
    }
}

struct HeapItem<T> {
    err: T,
    id: usize,
}

impl<T: Scalar> PartialEq for HeapItem<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<T: Scalar> Eq for HeapItem<T> {}
impl<T: Scalar> PartialOrd for HeapItem<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T: Scalar> Ord for HeapItem<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err
            .partial_cmp(&other.err)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.id.cmp(&self.id))
    }
}

/// Splits `[lo, hi]` at interior feature coordinates, then grades each
/// piece so that its largest side is at most `eta * (dist + floor)`.
fn graded_boxes<T: Scalar>(
    lo: &[T],
    hi: &[T],
    features: &[Vec<T>],
    eta: T,
    floor: T,
) -> Vec<(Vec<T>, Vec<T>)> {
    let d = lo.len();
    let cuts: Vec<Vec<T>> = (0..d)
        .map(|i| {
            let mut c = vec![lo[i]];
            let mut inner: Vec<T> = features
                .iter()
                .map(|p| p[i])
                .filter(|&x| x > lo[i] && x < hi[i])
                .collect();
            inner.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
            inner.dedup();
            c.extend(inner);
            c.push(hi[i]);
            c
        })
        .collect();
    let counts: Vec<usize> = cuts.iter().map(|c| c.len() - 1).collect();
    let total: usize = counts.iter().product();
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for k in 0..total {
        let mut rem = k;
        let mut l = Vec::with_capacity(d);
        let mut h = Vec::with_capacity(d);
        for i in 0..d {
            let j = rem % counts[i];
            rem /= counts[i];
            l.push(cuts[i][j]);
            h.push(cuts[i][j + 1]);
        }
        stack.push((l, h, 0u32));
    }
    while let Some((l, h, depth)) = stack.pop() {
        let side = l
            .iter()
            .zip(&h)
            .map(|(&a, &b)| b - a)
            .fold(T::zero(), T::max);
        let dist = features
            .iter()
            .map(|p| box_point_distance(&l, &h, p))
            .fold(T::infinity(), T::min);
        let limit = eta * (if dist.is_finite() { dist } else { T::zero() } + floor);
        if side <= limit || depth >= 200 {
            out.push((l, h));
        } else {
            // Split only the axes that are too long to keep cells near cubic.
            let mid_needed: Vec<bool> = l
                .iter()
                .zip(&h)
                .map(|(&a, &b)| (b - a) * T::lit(2.0) > side)
                .collect();
            let axes: Vec<usize> = (0..d).filter(|&i| mid_needed[i]).collect();
            for mask in 0..1usize << axes.len() {
                let mut cl = l.clone();
                let mut ch = h.clone();
                for (bit, &i) in axes.iter().enumerate() {
                    let m = (l[i] + h[i]) / T::lit(2.0);
                    if mask >> bit & 1 == 1 {
                        cl[i] = m;
                    } else {
                        ch[i] = m;
                    }
                }
                stack.push((cl, ch, depth + 1));
            }
        }
    }
    // Fixed output order regardless of the stack discipline above.
    out.sort_by(|a, b| cmp_vec(&a.0, &b.0).then_with(|| cmp_vec(&a.1, &b.1)));
    out
}

fn cmp_vec<T: Scalar>(a: &[T], b: &[T]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.partial_cmp(y).unwrap_or(Ordering::Equal))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

fn box_point_distance<T: Scalar>(lo: &[T], hi: &[T], p: &[T]) -> T {
    let mut acc = T::zero();
    for i in 0..lo.len() {
        let d = (lo[i] - p[i]).max(p[i] - hi[i]).max(T::zero());
        acc += d * d;
    }
    acc.sqrt()
}

struct Slab<T> {
    t_lo: T,
    t_hi: T,
}

struct Layout<T> {
    center: Vec<T>,
    spread: T,
    features: Vec<Vec<T>>,
}

fn layout<T: Scalar>(region: &Region<T>, features: Vec<Vec<T>>) -> Result<Layout<T>> {
    for p in &features {
        check_dim(region.dim, p.len())?;
    }
    let pts: Vec<&Vec<T>> = features.iter().collect();
    let (lo, hi) = if let Some(first) = pts.first() {
        let mut lo = (*first).clone();
        let mut hi = (*first).clone();
        for p in &pts[1..] {
            for i in 0..region.dim {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        (lo, hi)
    } else if let Some((lo, hi)) = &region.y_box {
        (lo.clone(), hi.clone())
    } else {
        return Err(domain(
            "unbounded y-region needs at least one feature point",
        ));
    };
    let center = lo
        .iter()
        .zip(&hi)
        .map(|(&a, &b)| (a + b) / T::lit(2.0))
        .collect();
    let spread = crate::scalar::dist(&lo, &hi);
    Ok(Layout {
        center,
        spread,
        features,
    })
}

/// Integrates `f` over `region`.
pub fn integrate_region<T: Scalar, F: Integrand<T> + ?Sized>(
    f: &F,
    region: &Region<T>,
    spec: &QuadratureSpec<T>,
) -> Result<QuadResult<T>> {
    spec.validate()?;
    region.validate()?;
    let mut features = spec.features.clone();
    features.extend(f.features());
    let lay = layout(region, features)?;
    let engine = Engine {
        f,
        rule: TensorRule::new(spec.order, region.dim + 1),
        mode: Mode::SpaceTime,
        n: region.dim,
        outputs: f.outputs(),
    };
    let ratio = spec.t_ratio;
    let open_below = region.t_lo == T::zero();
    let open_above = region.t_hi.is_infinite();
    let scale = {
        let s = lay.spread.max(match &region.y_box {
            Some((lo, hi)) => crate::scalar::dist(lo, hi),
            None => T::zero(),
        });
        if s > T::zero() {
            s
        } else {
            T::one()
        }
    };
    let t_ref = if open_above {
        scale.max(region.t_lo)
    } else {
        region.t_hi
    };

    // Downward slabs from t_ref, upward slabs above it.
    let mut down: Vec<Slab<T>> = Vec::new();
    let mut top = t_ref;
    loop {
        let lo = (top * ratio).max(region.t_lo);
        down.push(Slab {
            t_lo: lo,
            t_hi: top,
        });
        top = lo;
        if lo <= region.t_lo || (open_below && down.len() >= spec.min_slabs.max(1)) {
            break;
        }
        if down.len() >= spec.max_slabs {
            break;
        }
    }
    let mut up: Vec<Slab<T>> = Vec::new();
    if open_above {
        for _ in 0..2 {
            let lo = up.last().map_or(t_ref, |s: &Slab<T>| s.t_hi);
            up.push(Slab {
                t_lo: lo,
                t_hi: lo / ratio,
            });
        }
    }

    let build = |slab: &Slab<T>, id: usize| -> Result<Vec<Cell<T>>> {
        let (lo, hi) = match &region.y_box {
            Some(b) => b.clone(),
            None => {
                let half = spec.y_radius_factor * (lay.spread + slab.t_hi);
                (
                    lay.center.iter().map(|&c| c - half).collect(),
                    lay.center.iter().map(|&c| c + half).collect(),
                )
            }
        };
        let boxes = graded_boxes(&lo, &hi, &lay.features, spec.grading, slab.t_lo);
        boxes
            .into_par_iter()
            .map(|(mut l, mut h)| {
                l.push(slab.t_lo);
                h.push(slab.t_hi);
                engine.make_cell(l, h, 0, id, None)
            })
            .collect()
    };

    let mut slabs: Vec<Slab<T>> = Vec::new();
    let mut cells: Vec<Cell<T>> = Vec::new();
    let mut slab_value: Vec<Vec<T>> = Vec::new();
    let push_slab = |slab: Slab<T>,
                     slabs: &mut Vec<Slab<T>>,
                     cells: &mut Vec<Cell<T>>,
                     slab_value: &mut Vec<Vec<T>>|
     -> Result<usize> {
        let id = slabs.len();
        let new = build(&slab, id)?;
        let mut v = vec![T::zero(); engine.outputs];
        for c in &new {
            for (a, b) in v.iter_mut().zip(c.fine(engine.outputs)) {
                *a += b;
            }
        }
        slab_value.push(v);
        cells.extend(new);
        slabs.push(slab);
        Ok(id)
    };

    let mut down_ids = Vec::new();
    for s in down {
        down_ids.push(push_slab(s, &mut slabs, &mut cells, &mut slab_value)?);
    }
    let mut up_ids = Vec::new();
    for s in up {
        up_ids.push(push_slab(s, &mut slabs, &mut cells, &mut slab_value)?);
    }

    let total_mag = |slab_value: &Vec<Vec<T>>| -> T {
        let mut v = vec![T::zero(); engine.outputs];
        for s in slab_value {
            for (a, &b) in v.iter_mut().zip(s) {
                *a += b;
            }
        }
        f.magnitude(&v)
    };
    let remainder_ok = |ids: &[usize], slab_value: &Vec<Vec<T>>| -> bool {
        let k = ids.len();
        if k < 2 {
            return false;
        }
        let last = f.magnitude(&slab_value[ids[k - 1]]);
        let prev = f.magnitude(&slab_value[ids[k - 2]]);
        let total = total_mag(slab_value);
        if last == T::zero() {
            return true;
        }
        if !(last < prev) {
            return false;
        }
        let r = last / prev;
        last * r / (T::one() - r) <= spec.tol / T::lit(8.0) * total
    };

    if open_below {
        while slabs.len() < spec.max_slabs && !remainder_ok(&down_ids, &slab_value) {
            let t_hi = slabs[*down_ids.last().expect("at least one slab")].t_lo;
            let s = Slab {
                t_lo: t_hi * ratio,
                t_hi,
            };
            down_ids.push(push_slab(s, &mut slabs, &mut cells, &mut slab_value)?);
        }
    }
    if open_above {
        while slabs.len() < spec.max_slabs && !remainder_ok(&up_ids, &slab_value) {
            let t_lo = slabs[*up_ids.last().expect("at least one slab")].t_hi;
            let s = Slab {
                t_lo,
                t_hi: t_lo / ratio,
            };
            up_ids.push(push_slab(s, &mut slabs, &mut cells, &mut slab_value)?);
        }
    }

    let refined = refine_all(&engine, cells, spec)?;

    // Slab totals after refinement.
    let mut slab_value = vec![vec![T::zero(); engine.outputs]; slabs.len()];
    let mut value = vec![T::zero(); engine.outputs];
    for c in &refined.cells {
        let fine = c.fine(engine.outputs);
        for (a, &b) in slab_value[c.slab].iter_mut().zip(&fine) {
            *a += b;
        }
        for (a, &b) in value.iter_mut().zip(&fine) {
            *a += b;
        }
    }
    let mut error = refined.error;
    let mut converged = refined.converged;
    for (ids, open) in [(&down_ids, open_below), (&up_ids, open_above)] {
        if !open {
            continue;
        }
        let k = ids.len();
        let last = &slab_value[ids[k - 1]];
        let ml = f.magnitude(last);
        if ml == T::zero() {
            continue;
        }
        let mp = if k >= 2 {
            f.magnitude(&slab_value[ids[k - 2]])
        } else {
            T::zero()
        };
        if k >= 2 && ml < mp {
            let r = ml / mp;
            let factor = r / (T::one() - r);
            for (a, &b) in value.iter_mut().zip(last) {
                *a += b * factor;
            }
            error += ml * factor;
        } else {
            converged = false;
            error += ml;
        }
    }

    // Truncated y-tails.
    let mut tail = T::zero();
    let mut certified = true;
    if region.y_box.is_none() {
        let (gx, gw) = gauss_legendre(8);
        'slabs: for s in &slabs {
            let half = spec.y_radius_factor * (lay.spread + s.t_hi);
            let rho = half - lay.spread;
            for (&x, &w) in gx.iter().zip(&gw) {
                let t = s.t_lo + (s.t_hi - s.t_lo) * T::lit(x);
                match f.tail_bound(t, rho) {
                    Some(b) => tail += b * T::lit(w) * (s.t_hi - s.t_lo),
                    None => {
                        certified = false;
                        break 'slabs;
                    }
                }
            }
        }
        error += tail;
    }
    let mag = f.magnitude(&value);
    converged &= error <= spec.tol * mag || error == T::zero();
    Ok(QuadResult {
        value,
        error,
        converged,
        certified,
        cells: refined.cells.len(),
        slabs: slabs.len(),
        tail,
    })
}

/// Integrates `y -> f(y, t)` over `R^n` (truncated and tail-bounded) or over a box.
pub fn integrate_space<T: Scalar, F: Integrand<T> + ?Sized>(
    f: &F,
    dim: usize,
    t: T,
    y_box: Option<(Vec<T>, Vec<T>)>,
    spec: &QuadratureSpec<T>,
) -> Result<QuadResult<T>> {
    spec.validate()?;
    if !(t > T::zero()) {
        return Err(domain("t must be positive"));
    }
    let region = Region {
        dim,
        y_box: y_box.clone(),
        t_lo: T::zero(),
        t_hi: t,
    };
    region.validate()?;
    let mut features = spec.features.clone();
    features.extend(f.features());
    let lay = layout(&region, features)?;
    let engine = Engine {
        f,
        rule: TensorRule::new(spec.order, dim),
        mode: Mode::Space(t),
        n: dim,
        outputs: f.outputs(),
    };
    let half = spec.y_radius_factor * (lay.spread + t);
    let (lo, hi) = y_box.clone().unwrap_or_else(|| {
        (
            lay.center.iter().map(|&c| c - half).collect(),
            lay.center.iter().map(|&c| c + half).collect(),
        )
    });
    let cells = graded_boxes(&lo, &hi, &lay.features, spec.grading, t)
        .into_par_iter()
        .map(|(l, h)| engine.make_cell(l, h, 0, 0, None))
        .collect::<Result<Vec<_>>>()?;
    let refined = refine_all(&engine, cells, spec)?;
    let mut value = vec![T::zero(); engine.outputs];
    for c in &refined.cells {
        for (a, b) in value.iter_mut().zip(c.fine(engine.outputs)) {
            *a += b;
        }
    }
    let mut error = refined.error;
    let mut tail = T::zero();
    let mut certified = true;
    if y_box.is_none() {
        match f.tail_bound(t, half - lay.spread) {
            Some(b) => tail = b,
            None => certified = false,
        }
        error += tail;
    }
    let mag = f.magnitude(&value);
    Ok(QuadResult {
        converged: refined.converged && (error <= spec.tol * mag || error == T::zero()),
        value,
        error,
        certified,
        cells: refined.cells.len(),
        slabs: 1,
        tail,
    })
}

struct Refined<T> {
    cells: Vec<Cell<T>>,
    error: T,
    converged: bool,
}

fn refine_all<T: Scalar, F: Integrand<T> + ?Sized>(
    engine: &Engine<'_, T, F>,
    initial: Vec<Cell<T>>,
    spec: &QuadratureSpec<T>,
) -> Result<Refined<T>> {
    let outputs = engine.outputs;
    let mut cells: Vec<Option<Cell<T>>> = initial.into_iter().map(Some).collect();
    let mut heap: BinaryHeap<HeapItem<T>> = cells
        .iter()
        .enumerate()
        .map(|(id, c)| HeapItem {
            err: c.as_ref().expect("fresh cell").err,
            id,
        })
        .collect();
    let mut live = cells.len();
    let mut stuck_err = T::zero();
    let mut converged = true;
    let target = |cells: &[Option<Cell<T>>]| -> (T, T) {
        let mut total = vec![T::zero(); outputs];
        let mut err = T::zero();
        for c in cells.iter().flatten() {
            for (a, b) in total.iter_mut().zip(c.fine(outputs)) {
                *a += b;
            }
            err += c.err;
        }
        (err, engine.f.magnitude(&total) * spec.tol / T::lit(2.0))
    };
    // Running totals, resynchronized exactly before accepting convergence.
    let (mut err, _) = target(&cells);
    let mut total = vec![T::zero(); outputs];
    for c in cells.iter().flatten() {
        for (a, b) in total.iter_mut().zip(c.fine(outputs)) {
            *a += b;
        }
    }
    loop {
        let goal = engine.f.magnitude(&total) * spec.tol / T::lit(2.0);
        if err <= goal {
            let (exact, exact_goal) = target(&cells);
            err = exact;
            if exact <= exact_goal {
                break;
            }
        }
        if live > spec.max_cells {
            converged = false;
            break;
        }
        let batch = (live / 16).clamp(1, 512);
        let mut picked = Vec::with_capacity(batch);
        while picked.len() < batch {
            let Some(item) = heap.pop() else { break };
            let cell = cells[item.id].as_ref().expect("heap holds live cells");
            if cell.depth >= spec.max_depth {
                stuck_err += cell.err;
                continue;
            }
            picked.push(item.id);
        }
        if picked.is_empty() {
            converged = err - stuck_err <= goal;
            converged &= stuck_err == T::zero();
            break;
        }
        let parents: Vec<Cell<T>> = picked
            .iter()
            .map(|&id| cells[id].take().expect("picked cells are live"))
            .collect();
        let children: Vec<Vec<Cell<T>>> = parents
            .par_iter()
            .map(|c| engine.refine(c))
            .collect::<Result<Vec<_>>>()?;
        for (parent, group) in parents.iter().zip(children) {
            err -= parent.err;
            for (a, b) in total.iter_mut().zip(parent.fine(outputs)) {
                *a -= b;
            }
            live += group.len() - 1;
            for c in group {
                err += c.err;
                for (a, b) in total.iter_mut().zip(c.fine(outputs)) {
                    *a += b;
                }
                let id = cells.len();
                heap.push(HeapItem { err: c.err, id });
                cells.push(Some(c));
            }
        }
    }
    let (error, _) = target(&cells);
    Ok(Refined {
        cells: cells.into_iter().flatten().collect(),
        error,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        for q in 1..=10 {
            let (x, w) = gauss_legendre(q);
            assert_relative_eq!(w.iter().sum::<f64>(), 1.0, max_relative = 1e-14);
            for k in 0..2 * q {
                let s: f64 = x.iter().zip(&w).map(|(&x, &w)| w * x.powi(k as i32)).sum();
                assert_relative_eq!(s, 1.0 / (k as f64 + 1.0), max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn sphere_areas() {
        assert_relative_eq!(sphere_area::<f64>(1), 2.0);
        assert_relative_eq!(sphere_area::<f64>(2), 2.0 * std::f64::consts::PI);
        assert_relative_eq!(sphere_area::<f64>(3), 4.0 * std::f64::consts::PI);
    }

    #[test]
    fn constant_over_whitney_region() {
        let r = Cube::new(vec![0.5, -1.0], 0.25).unwrap();
        let f = FnIntegrand::new(|_: &[f64], _: f64| 3.0);
        let out = integrate_region(&f, &Region::whitney(&r), &QuadratureSpec::default()).unwrap();
        assert_relative_eq!(out.scalar(), 3.0 * 0.0625 * 0.125, max_relative = 1e-13);
        assert!(out.converged);
    }

    #[test]
    fn nan_is_a_hard_error() {
        let r = Cube::new(vec![0.0], 1.0).unwrap();
        let f = FnIntegrand::new(|_: &[f64], _: f64| f64::NAN);
        assert!(matches!(
            integrate_region(&f, &Region::whitney(&r), &QuadratureSpec::default()),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn tail_bound_monotone() {
        let p = KernelParams::kernel_only(1, 3.0, 1.0).unwrap();
        let a = theta_tail_bound(&p, 1.0, 10.0).unwrap();
        let b = theta_tail_bound(&p, 1.0, 20.0).unwrap();
        let c = theta_tail_bound(&p, 2.0, 10.0).unwrap();
        assert!(b < a && a < c);
        assert!(theta_tail_bound(&p, 1.0, 0.0).is_err());
    }
}
