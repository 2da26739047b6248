//! Half-open dyadic cubes, randomly shifted dyadic grids with a finite scale
//! range, good/bad classification and Whitney collections.
//!
//! A grid with levels `min_level..=max_level` realizes, at level `k`, the
//! lattice of cubes of side `2^k` translated by
//! `origin + sum_{min_level <= i < k} 2^i * beta_i` with `beta_i in {0,1}^n`.
//! Consecutive levels are nested because the level-`k` offset differs from
//! the level-`k-1` offset by a multiple of `2^(k-1)`.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{check_dim, domain, Error, Result};
use crate::kernels::KernelParams;
use crate::rng::stream;
use crate::scalar::{dist, Scalar};

/// A cube `prod_i [corner_i, corner_i + side)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Cube<T> {
    corner: Vec<T>,
    side: T,
    generation: i32,
}

impl<T: Scalar> Cube<T> {
    pub fn new(corner: Vec<T>, side: T) -> Result<Self> {
        if corner.is_empty() {
            return Err(domain("cube must have dimension at least 1"));
        }
        if !(side > T::zero()) || !side.is_finite() {
            return Err(domain(format!("cube side must be positive, got {side}")));
        }
        if corner.iter().any(|c| !c.is_finite()) {
            return Err(domain("cube corner must be finite"));
        }
        let generation = side.log2().floor().to_i32().unwrap_or(i32::MIN);
        Ok(Self {
            corner,
            side,
            generation,
        })
    }

    /// Cube of side `2^level`.
    pub fn dyadic(corner: Vec<T>, level: i32) -> Self {
        Self {
            corner,
            side: T::pow2(level),
            generation: level,
        }
    }

    /// The unit-scale cube `[lo, lo + side)^n`.
    pub fn uniform(dim: usize, lo: T, side: T) -> Result<Self> {
        Self::new(vec![lo; dim], side)
    }

    pub fn dim(&self) -> usize {
        self.corner.len()
    }

    pub fn corner(&self) -> &[T] {
        &self.corner
    }

    pub fn side(&self) -> T {
        self.side
    }

    pub fn generation(&self) -> i32 {
        self.generation
    }

    pub fn volume(&self) -> T {
        self.side.powi(self.dim() as i32)
    }

    pub fn upper(&self, axis: usize) -> T {
        self.corner[axis] + self.side
    }

    pub fn center(&self) -> Vec<T> {
        let h = self.side / T::lit(2.0);
        self.corner.iter().map(|&c| c + h).collect()
    }

    pub fn contains(&self, point: &[T]) -> bool {
        point.len() == self.dim()
            && point
                .iter()
                .zip(&self.corner)
                .all(|(&x, &c)| x >= c && x < c + self.side)
    }

    /// Inclusion of the half-open cubes, `other ⊆ self`.
    pub fn contains_cube(&self, other: &Cube<T>) -> bool {
        other.dim() == self.dim()
            && (0..self.dim())
                .all(|i| other.corner[i] >= self.corner[i] && other.upper(i) <= self.upper(i))
    }

    fn interiors_intersect(&self, other: &Cube<T>) -> bool {
        (0..self.dim()).all(|i| other.corner[i] < self.upper(i) && self.corner[i] < other.upper(i))
    }

    /// The `2^n` dyadic children, child `b` taking the upper half along
    /// every axis whose bit is set in `b`.
    pub fn children(&self) -> Vec<Cube<T>> {
        let n = self.dim();
        let h = self.side / T::lit(2.0);
        (0..1usize << n)
            .map(|mask| {
                let corner = (0..n)
                    .map(|i| {
                        if mask >> i & 1 == 1 {
                            self.corner[i] + h
                        } else {
                            self.corner[i]
                        }
                    })
                    .collect();
                Cube {
                    corner,
                    side: h,
                    generation: self.generation - 1,
                }
            })
            .collect()
    }

    /// Concentric dilation by `factor`.
    pub fn dilate(&self, factor: T) -> Cube<T> {
        let side = self.side * factor;
        let shift = (side - self.side) / T::lit(2.0);
        let corner = self.corner.iter().map(|&c| c - shift).collect();
        Cube::new(corner, side).expect("dilation of a valid cube")
    }

    pub fn translate(&self, v: &[T]) -> Cube<T> {
        Cube {
            corner: self.corner.iter().zip(v).map(|(&c, &d)| c + d).collect(),
            side: self.side,
            generation: self.generation,
        }
    }

    /// Euclidean distance from a point to the closed cube.
    pub fn dist_to_point(&self, point: &[T]) -> T {
        let mut acc = T::zero();
        for (i, &x) in point.iter().enumerate() {
            let lo = self.corner[i];
            let hi = lo + self.side;
            let d = if x < lo {
                lo - x
            } else if x > hi {
                x - hi
            } else {
                T::zero()
            };
            acc += d * d;
        }
        acc.sqrt()
    }

    /// Euclidean gap between the closed cubes.
    pub fn gap(&self, other: &Cube<T>) -> T {
        let mut acc = T::zero();
        for i in 0..self.dim() {
            let d = (other.corner[i] - self.upper(i))
                .max(self.corner[i] - other.upper(i))
                .max(T::zero());
            acc += d * d;
        }
        acc.sqrt()
    }

    /// `dist(self, ∂outer)` for the closed cubes.
    pub fn boundary_distance(&self, outer: &Cube<T>) -> T {
        if outer.contains_cube(self) {
            (0..self.dim())
                .map(|i| (self.corner[i] - outer.corner[i]).min(outer.upper(i) - self.upper(i)))
                .fold(T::infinity(), T::min)
        } else if self.interiors_intersect(outer) {
            T::zero()
        } else {
            self.gap(outer)
        }
    }
}

/// `D(Q, R) = l(Q) + l(R) + d(Q, R)`.
pub fn long_distance<T: Scalar>(q: &Cube<T>, r: &Cube<T>) -> Result<T> {
    check_dim(q.dim(), r.dim())?;
    Ok(q.side() + r.side() + q.gap(r))
}

/// Dimension and level range shared by a family of shifted grids.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridTemplate {
    pub dim: usize,
    pub min_level: i32,
    pub max_level: i32,
}

impl GridTemplate {
    pub fn new(dim: usize, min_level: i32, max_level: i32) -> Result<Self> {
        if dim == 0 {
            return Err(domain("grid dimension must be at least 1"));
        }
        if min_level > max_level {
            return Err(domain(format!(
                "empty scale range: min level {min_level} > max level {max_level}"
            )));
        }
        if max_level - min_level > 60 {
            return Err(domain("scale range wider than 60 levels"));
        }
        Ok(Self {
            dim,
            min_level,
            max_level,
        })
    }

    pub fn levels(&self) -> usize {
        (self.max_level - self.min_level) as usize
    }

    /// Draws `beta_i` for every level below the top.
    pub fn random_shifts<R: Rng>(&self, rng: &mut R) -> Vec<Vec<u8>> {
        (0..self.levels())
            .map(|_| (0..self.dim).map(|_| rng.gen_range(0..=1u8)).collect())
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct ShiftedGrid<T> {
    template: GridTemplate,
    shifts: Vec<Vec<u8>>,
    origin: Vec<T>,
    offsets: Vec<Vec<T>>,
    seed: Option<u64>,
}

impl<T: Scalar> ShiftedGrid<T> {
    /// The unshifted grid `D_0` restricted to the scale range.
    pub fn standard(dim: usize, min_level: i32, max_level: i32) -> Result<Self> {
        let template = GridTemplate::new(dim, min_level, max_level)?;
        Self::with_shifts(template, vec![vec![0; dim]; template.levels()])
    }

    pub fn random(dim: usize, min_level: i32, max_level: i32, seed: u64) -> Result<Self> {
        let template = GridTemplate::new(dim, min_level, max_level)?;
        let shifts = template.random_shifts(&mut stream(seed, 0));
        let mut grid = Self::with_shifts(template, shifts)?;
        grid.seed = Some(seed);
        Ok(grid)
    }

    pub fn with_shifts(template: GridTemplate, shifts: Vec<Vec<u8>>) -> Result<Self> {
        if shifts.len() != template.levels() {
            return Err(domain(format!(
                "expected {} shift vectors, got {}",
                template.levels(),
                shifts.len()
            )));
        }
        for s in &shifts {
            check_dim(template.dim, s.len())?;
            if s.iter().any(|&b| b > 1) {
                return Err(domain("shift components must be 0 or 1"));
            }
        }
        let origin = vec![T::zero(); template.dim];
        let offsets = Self::cumulative(&template, &shifts, &origin);
        Ok(Self {
            template,
            shifts,
            origin,
            offsets,
            seed: None,
        })
    }

    fn cumulative(template: &GridTemplate, shifts: &[Vec<u8>], origin: &[T]) -> Vec<Vec<T>> {
        let mut acc = origin.to_vec();
        let mut out = Vec::with_capacity(shifts.len() + 1);
        out.push(acc.clone());
        for (i, beta) in shifts.iter().enumerate() {
            let step = T::pow2(template.min_level + i as i32);
            for (a, &b) in acc.iter_mut().zip(beta) {
                if b == 1 {
                    *a += step;
                }
            }
            out.push(acc.clone());
        }
        out
    }

    /// The same grid translated by `v`.
    pub fn translated(&self, v: &[T]) -> Result<Self> {
        check_dim(self.dim(), v.len())?;
        let origin: Vec<T> = self.origin.iter().zip(v).map(|(&o, &d)| o + d).collect();
        Ok(Self {
            offsets: Self::cumulative(&self.template, &self.shifts, &origin),
            origin,
            template: self.template,
            shifts: self.shifts.clone(),
            seed: self.seed,
        })
    }

    pub fn template(&self) -> GridTemplate {
        self.template
    }

    pub fn dim(&self) -> usize {
        self.template.dim
    }

    pub fn min_level(&self) -> i32 {
        self.template.min_level
    }

    pub fn max_level(&self) -> i32 {
        self.template.max_level
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn shifts(&self) -> &[Vec<u8>] {
        &self.shifts
    }

    fn check_level(&self, level: i32) -> Result<()> {
        if level < self.min_level() || level > self.max_level() {
            Err(domain(format!(
                "level {level} outside grid range {}..={}",
                self.min_level(),
                self.max_level()
            )))
        } else {
            Ok(())
        }
    }

    pub fn offset(&self, level: i32) -> &[T] {
        &self.offsets[(level - self.min_level()) as usize]
    }

    pub fn cube_at(&self, level: i32, index: &[i64]) -> Result<Cube<T>> {
        self.check_level(level)?;
        check_dim(self.dim(), index.len())?;
        let side = T::pow2(level);
        let off = self.offset(level);
        let corner = index
            .iter()
            .zip(off)
            .map(|(&k, &o)| o + side * T::from_i64(k).expect("index fits"))
            .collect();
        Ok(Cube::dyadic(corner, level))
    }

    pub fn index_of_point(&self, point: &[T], level: i32) -> Result<Vec<i64>> {
        self.check_level(level)?;
        check_dim(self.dim(), point.len())?;
        let side = T::pow2(level);
        Ok(point
            .iter()
            .zip(self.offset(level))
            .map(|(&x, &o)| ((x - o) / side).floor().to_i64().unwrap_or(i64::MIN))
            .collect())
    }

    /// The level-`level` grid cube containing `point`.
    pub fn locate(&self, point: &[T], level: i32) -> Result<Cube<T>> {
        let idx = self.index_of_point(point, level)?;
        self.cube_at(level, &idx)
    }

    /// Level and lattice index of a grid cube; errors when `cube` is not one.
    pub fn index_of(&self, cube: &Cube<T>) -> Result<(i32, Vec<i64>)> {
        check_dim(self.dim(), cube.dim())?;
        let not_in_grid = || Error::NotInGrid {
            corner: cube.corner().iter().map(|c| c.as_f64()).collect(),
            side: cube.side().as_f64(),
        };
        let level = cube
            .side()
            .log2()
            .round()
            .to_i32()
            .ok_or_else(not_in_grid)?;
        if level < self.min_level() || level > self.max_level() {
            return Err(not_in_grid());
        }
        let side = T::pow2(level);
        let tol = T::lit(1e-9);
        if ((cube.side() - side) / side).abs() > tol {
            return Err(not_in_grid());
        }
        let mut index = Vec::with_capacity(self.dim());
        for (&c, &o) in cube.corner().iter().zip(self.offset(level)) {
            let q = (c - o) / side;
            let r = q.round();
            if (q - r).abs() > tol {
                return Err(not_in_grid());
            }
            index.push(r.to_i64().ok_or_else(not_in_grid)?);
        }
        Ok((level, index))
    }

    pub fn contains_cube(&self, cube: &Cube<T>) -> bool {
        self.index_of(cube).is_ok()
    }

    /// The grid cube at `level` containing `cube` (level must not be finer).
    pub fn ancestor(&self, cube: &Cube<T>, level: i32) -> Result<Cube<T>> {
        let (own, _) = self.index_of(cube)?;
        if level < own {
            return Err(domain(format!(
                "ancestor level {level} finer than cube level {own}"
            )));
        }
        self.locate(&cube.center(), level)
    }

    pub fn children(&self, cube: &Cube<T>) -> Result<Vec<Cube<T>>> {
        let (level, _) = self.index_of(cube)?;
        if level <= self.min_level() {
            return Ok(Vec::new());
        }
        Ok(cube.children())
    }

    /// The `3^n - 1` same-level grid cubes touching `cube`.
    pub fn neighbors(&self, cube: &Cube<T>) -> Result<Vec<Cube<T>>> {
        let (level, index) = self.index_of(cube)?;
        let n = self.dim();
        let total = 3usize.pow(n as u32);
        let mut out = Vec::with_capacity(total - 1);
        for code in 0..total {
            let mut c = code;
            let mut idx = index.clone();
            let mut zero = true;
            for k in idx.iter_mut() {
                let d = (c % 3) as i64 - 1;
                c /= 3;
                *k += d;
                zero &= d == 0;
            }
            if !zero {
                out.push(self.cube_at(level, &idx)?);
            }
        }
        Ok(out)
    }

    /// All level-`level` grid cubes contained in the grid cube `within`.
    pub fn descendants(&self, within: &Cube<T>, level: i32) -> Result<Vec<Cube<T>>> {
        let (top, _) = self.index_of(within)?;
        self.check_level(level)?;
        if level > top {
            return Err(domain("descendant level coarser than the cube"));
        }
        let mut layer = vec![within.clone()];
        for _ in level..top {
            layer = layer.iter().flat_map(|c| c.children()).collect();
        }
        Ok(layer)
    }

    /// Top-level grid cubes meeting the closed box `[lo, hi]`.
    pub fn top_cubes_covering(&self, lo: &[T], hi: &[T]) -> Result<Vec<Cube<T>>> {
        check_dim(self.dim(), lo.len())?;
        check_dim(self.dim(), hi.len())?;
        let level = self.max_level();
        let a = self.index_of_point(lo, level)?;
        let b = self.index_of_point(hi, level)?;
        let mut out = Vec::new();
        let mut idx = a.clone();
        loop {
            out.push(self.cube_at(level, &idx)?);
            let mut axis = 0;
            loop {
                if axis == idx.len() {
                    return Ok(out);
                }
                if idx[axis] < b[axis] {
                    idx[axis] += 1;
                    break;
                }
                idx[axis] = a[axis];
                axis += 1;
            }
        }
    }
}

/// Parameters of the good/bad decomposition and of the Whitney overlap bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GoodBadParams<T> {
    pub r: u32,
    pub gamma: T,
    pub overlap_c: T,
}

impl<T: Scalar> GoodBadParams<T> {
    pub fn new(r: u32, gamma: T, overlap_c: T) -> Result<Self> {
        if r < 1 {
            return Err(domain("r must be at least 1"));
        }
        if !(gamma > T::zero() && gamma < T::lit(0.5)) {
            return Err(domain(format!("gamma must lie in (0, 1/2), got {gamma}")));
        }
        if !(overlap_c > T::one()) {
            return Err(domain(format!(
                "overlap dilation must exceed 1, got {overlap_c}"
            )));
        }
        Ok(Self {
            r,
            gamma,
            overlap_c,
        })
    }

    /// Uses `gamma = alpha / (2 (n + alpha))`.
    pub fn for_kernel(r: u32, p: &KernelParams<T>, overlap_c: T) -> Result<Self> {
        Self::new(r, default_gamma(p), overlap_c)
    }

    /// Smallest dilation with `alpha/2 >= n (2/(C-1))^2`.
    pub fn min_overlap_c(p: &KernelParams<T>) -> T {
        let n = T::from_usize_lossy(p.n());
        T::one() + T::lit(2.0) * (T::lit(2.0) * n / p.alpha()).sqrt()
    }

    pub fn satisfies_overlap_constraint(&self, p: &KernelParams<T>) -> bool {
        let n = T::from_usize_lossy(p.n());
        let q = T::lit(2.0) / (self.overlap_c - T::one());
        p.alpha() / T::lit(2.0) >= n * q * q
    }

    /// `l(I)^gamma l(J)^(1-gamma)`.
    pub fn threshold(&self, small: T, large: T) -> T {
        small.powf(self.gamma) * large.powf(T::one() - self.gamma)
    }

    pub fn scale_factor(&self) -> T {
        T::pow2(self.r as i32)
    }
}

pub fn default_gamma<T: Scalar>(p: &KernelParams<T>) -> T {
    p.alpha() / (T::lit(2.0) * (T::from_usize_lossy(p.n()) + p.alpha()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Goodness {
    Good,
    Bad,
}

impl Goodness {
    pub fn is_good(self) -> bool {
        self == Goodness::Good
    }
}

/// Classifies a grid cube: bad iff some grid cube `J` in range with
/// `l(J) >= 2^r l(I)` has `dist(I, ∂J) <= l(I)^gamma l(J)^(1-gamma)`.
///
/// Since the threshold is below `l(J)`, only the ancestor of `I` at each
/// admissible level and its same-level neighbours can qualify.
pub fn classify<T: Scalar>(
    cube: &Cube<T>,
    grid: &ShiftedGrid<T>,
    p: &GoodBadParams<T>,
) -> Result<Goodness> {
    let (level, _) = grid.index_of(cube)?;
    let first = level + p.r as i32;
    for k in first..=grid.max_level() {
        let ancestor = grid.ancestor(cube, k)?;
        let threshold = p.threshold(cube.side(), ancestor.side());
        if cube.boundary_distance(&ancestor) <= threshold {
            return Ok(Goodness::Bad);
        }
        for j in grid.neighbors(&ancestor)? {
            if cube.boundary_distance(&j) <= threshold {
                return Ok(Goodness::Bad);
            }
        }
    }
    Ok(Goodness::Good)
}

#[derive(Clone, Debug)]
pub struct WhitneyCollection<T> {
    pub cubes: Vec<Cube<T>>,
    /// Set when the grid's minimum scale admits no candidate at all.
    pub warning: bool,
}

/// Maximal dyadic `K ⊂ I` with `2^r l(K) <= l(I)` and
/// `dist(K, ∂I) >= l(K)^gamma l(I)^(1-gamma)`, by recursive descent to the
/// grid's minimum scale.
pub fn whitney<T: Scalar>(
    cube: &Cube<T>,
    grid: &ShiftedGrid<T>,
    p: &GoodBadParams<T>,
) -> Result<WhitneyCollection<T>> {
    let (level, _) = grid.index_of(cube)?;
    if grid.min_level() > level - p.r as i32 {
        log::warn!(
            "grid minimum level {} too coarse for Whitney cubes of a level-{level} cube (r = {})",
            grid.min_level(),
            p.r
        );
        return Ok(WhitneyCollection {
            cubes: Vec::new(),
            warning: true,
        });
    }
    let mut cubes = Vec::new();
    let mut stack: Vec<Cube<T>> = cube.children();
    let max_side = cube.side() / p.scale_factor();
    while let Some(k) = stack.pop() {
        let scale_ok = k.side() <= max_side;
        if scale_ok && k.boundary_distance(cube) >= p.threshold(k.side(), cube.side()) {
            cubes.push(k);
        } else if k.generation() > grid.min_level() {
            stack.extend(k.children());
        }
    }
    sort_cubes(&mut cubes);
    let warning = cubes.is_empty();
    Ok(WhitneyCollection { cubes, warning })
}

/// Orders cubes by decreasing side, then lexicographically by corner.
pub fn sort_cubes<T: Scalar>(cubes: &mut [Cube<T>]) {
    sort_cubes_by(cubes, |c| c);
}

/// [`sort_cubes`] for items carrying a cube.
pub fn sort_cubes_by<T: Scalar, E>(items: &mut [E], key: impl Fn(&E) -> &Cube<T>) {
    items.sort_by(|a, b| {
        let (a, b) = (key(a), key(b));
        b.side()
            .partial_cmp(&a.side())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| {
                a.corner()
                    .iter()
                    .zip(b.corner())
                    .map(|(x, y)| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
    });
}

/// Number of dilated cubes `C K` containing `point`.
pub fn dilated_multiplicity<T: Scalar>(cubes: &[Cube<T>], c: T, point: &[T]) -> usize {
    cubes.iter().filter(|k| k.dilate(c).contains(point)).count()
}

/// Reference cube of the unshifted grid, by level and lattice index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReferenceCube {
    pub level: i32,
    pub index: Vec<i64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PiGoodEstimate {
    pub probability: f64,
    pub halfwidth: f64,
    pub samples: usize,
}

/// Monte-Carlo estimate of `P_beta(Q +̇ beta is good)` with a 95% normal
/// confidence halfwidth. Sample `i` draws its shifts from stream `i` of
/// `seed`, so the result does not depend on the thread count.
pub fn estimate_pi_good<T: Scalar>(
    template: &GridTemplate,
    reference: &ReferenceCube,
    p: &GoodBadParams<T>,
    samples: usize,
    seed: u64,
) -> Result<PiGoodEstimate> {
    if samples == 0 {
        return Err(domain("at least one sample is required"));
    }
    check_dim(template.dim, reference.index.len())?;
    if reference.level < template.min_level || reference.level > template.max_level {
        return Err(domain("reference cube level outside the scale range"));
    }
    let good: usize = (0..samples as u64)
        .into_par_iter()
        .map(|i| -> Result<usize> {
            let shifts = template.random_shifts(&mut stream(seed, i + 1));
            let grid = ShiftedGrid::<T>::with_shifts(*template, shifts)?;
            let q = grid.cube_at(reference.level, &reference.index)?;
            Ok(classify(&q, &grid, p)?.is_good() as usize)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum();
    let n = samples as f64;
    let prob = good as f64 / n;
    let halfwidth = 1.96 * (prob * (1.0 - prob) / n).sqrt();
    Ok(PiGoodEstimate {
        probability: prob,
        halfwidth,
        samples,
    })
}

/// Closed-cube distance between centers, used by instance generators.
pub fn center_distance<T: Scalar>(a: &Cube<T>, b: &Cube<T>) -> T {
    dist(&a.center(), &b.center())
}
