//! Lower-bound estimators for the two-weight constants over explicit cube
//! and partition families, and the assembled equivalence report.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{check_dim, domain, Result};
use crate::geometry::{Cube, GoodBadParams, ShiftedGrid};
use crate::kernels::KernelParams;
use crate::measures::{poisson_term, AtomicMeasure, SampledFunction, WeightPair};
use crate::operators::{energy_integral, gram_matrix, params_hash, Energy, EnergyForm, GramMatrix};
use crate::quadrature::{QuadratureSpec, Region};
use crate::rng::stream;
use crate::scalar::Scalar;

/// Default dilations applied to cubes spanned by pairs of atoms.
pub const DEFAULT_DILATIONS: [f64; 3] = [1.0, 1.001, 2.0];

/// Finite list of candidate cubes for a supremum over all cubes.
#[derive(Clone, Debug, Default)]
pub struct CubeFamily<T> {
    cubes: Vec<Cube<T>>,
}

impl<T: Scalar> CubeFamily<T> {
    pub fn new(cubes: Vec<Cube<T>>) -> Self {
        Self { cubes }
    }

    /// Grid cubes containing some atom at every level of the grid, plus the
    /// cubes spanned by each pair of atom positions, dilated by `dilations`.
    pub fn generated(pair: &WeightPair<T>, grid: &ShiftedGrid<T>, dilations: &[T]) -> Result<Self> {
        check_dim(grid.dim(), pair.dim())?;
        let mut points: Vec<&Vec<T>> = pair
            .sigma
            .positions()
            .iter()
            .chain(pair.w.positions())
            .collect();
        points.sort_by(|a, b| cmp_slices(a, b));
        points.dedup();
        let mut cubes = Vec::new();
        for level in grid.min_level()..=grid.max_level() {
            let mut layer: Vec<Cube<T>> = Vec::new();
            for p in &points {
                let c = grid.locate(p, level)?;
                if !layer.contains(&c) {
                    layer.push(c);
                }
            }
            cubes.extend(layer);
        }
        for (i, a) in points.iter().enumerate() {
            for b in &points[i + 1..] {
                let corner: Vec<T> = a.iter().zip(b.iter()).map(|(&x, &y)| x.min(y)).collect();
                let side = a
                    .iter()
                    .zip(b.iter())
                    .map(|(&x, &y)| (x - y).abs())
                    .fold(T::zero(), T::max);
                let base = Cube::new(corner, side)?;
                for &d in dilations {
                    cubes.push(base.dilate(d));
                }
            }
        }
        Ok(Self { cubes })
    }

    pub fn cubes(&self) -> &[Cube<T>] {
        &self.cubes
    }

    pub fn len(&self) -> usize {
        self.cubes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cubes.is_empty()
    }

    pub fn extend(&mut self, other: &CubeFamily<T>) {
        self.cubes.extend(other.cubes.iter().cloned());
    }

    /// One cube per distinct `(sigma atoms, w atoms)` content, the largest.
    fn by_content(&self, pair: &WeightPair<T>) -> Vec<Cube<T>> {
        let mut best: BTreeMap<(Vec<usize>, Vec<usize>), Cube<T>> = BTreeMap::new();
        for q in &self.cubes {
            let key = (pair.sigma.atoms_in(q), pair.w.atoms_in(q));
            if key.0.is_empty() || key.1.is_empty() {
                continue;
            }
            match best.get(&key) {
                Some(c) if c.side() >= q.side() => {}
                _ => {
                    best.insert(key, q.clone());
                }
            }
        }
        best.into_values().collect()
    }
}

fn cmp_slices<T: Scalar>(a: &[T], b: &[T]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

/// Cube as plain numbers for reports.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CubeRecord {
    pub corner: Vec<f64>,
    pub side: f64,
}

impl<T: Scalar> From<&Cube<T>> for CubeRecord {
    fn from(c: &Cube<T>) -> Self {
        Self {
            corner: c.corner().iter().map(|x| x.as_f64()).collect(),
            side: c.side().as_f64(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct A2Estimate<T> {
    /// `sup sigma(Q) w(Q) / |Q|^2` over the family.
    pub a2_sq: T,
    pub a2: T,
    pub argmax: Option<Cube<T>>,
    /// Coincident sigma and w atoms make the true supremum infinite.
    pub coincident: bool,
}

/// `sigma(Q) w(Q) / |Q|^2`.
pub fn a2_term<T: Scalar>(pair: &WeightPair<T>, q: &Cube<T>) -> Result<T> {
    let s = pair.sigma.mass_on(q)?;
    let w = pair.w.mass_on(q)?;
    let v = q.volume();
    Ok(s * w / (v * v))
}

pub fn estimate_a2<T: Scalar>(
    pair: &WeightPair<T>,
    family: &CubeFamily<T>,
) -> Result<A2Estimate<T>> {
    if !pair.disjoint_support && pair.has_coincident_atoms() {
        log::warn!("a sigma atom coincides with a w atom: the A2 supremum is infinite");
        return Ok(A2Estimate {
            a2_sq: T::infinity(),
            a2: T::infinity(),
            argmax: None,
            coincident: true,
        });
    }
    let mut best = T::zero();
    let mut argmax = None;
    for q in family.cubes() {
        let v = a2_term(pair, q)?;
        if v > best {
            best = v;
            argmax = Some(q.clone());
        }
    }
    Ok(A2Estimate {
        a2_sq: best,
        a2: best.sqrt(),
        argmax,
        coincident: false,
    })
}

/// Testing quotient of one cube.
#[derive(Clone, Debug)]
pub struct TestingTerm<T> {
    pub cube: Cube<T>,
    pub sigma_mass: T,
    pub w_mass: T,
    /// `B(Q)`, the Carleson-box energy of `1_Q sigma` per unit `sigma(Q)`.
    pub value: T,
    pub error: T,
    pub converged: bool,
}

/// `B(Q) = sigma(Q)^-1 sum_{x_k in Q} w_k int_{t <= l(Q)} Theta |grad P_t(1_Q sigma)|^2 dy dt / t^(n-1)`.
pub fn testing_term<T: Scalar>(
    pair: &WeightPair<T>,
    q: &Cube<T>,
    p: &KernelParams<T>,
    spec: &QuadratureSpec<T>,
) -> Result<TestingTerm<T>> {
    check_dim(p.n(), pair.dim())?;
    let sigma_q = pair.sigma.restrict(q);
    let w_q = pair.w.restrict(q);
    let sigma_mass = sigma_q.total_mass();
    let w_mass = w_q.total_mass();
    let mut term = TestingTerm {
        cube: q.clone(),
        sigma_mass,
        w_mass,
        value: T::zero(),
        error: T::zero(),
        converged: true,
    };
    if sigma_q.is_empty() || w_q.is_empty() {
        return Ok(term);
    }
    if WeightPair::new(sigma_q.clone(), w_q.clone(), false)?.has_coincident_atoms() {
        term.value = T::infinity();
        return Ok(term);
    }
    let f = SampledFunction::constant(&sigma_q, T::one());
    let e = Energy::of_function(*p, &f, &w_q, EnergyForm::Gradient)?;
    let r = energy_integral(&e, &Region::carleson(q), spec)?;
    term.value = r.scalar() / sigma_mass;
    term.error = r.error / sigma_mass;
    term.converged = r.converged;
    Ok(term)
}

#[derive(Clone, Debug)]
pub struct TestingEstimate<T> {
    pub b: T,
    pub sqrt_b: T,
    pub argmax: Option<Cube<T>>,
    pub terms: Vec<TestingTerm<T>>,
    /// Cubes whose quadrature did not converge.
    pub unconverged: usize,
}

/// Supremum of [`testing_term`] over the family. Cubes with equal atom
/// content are represented by the largest one, which dominates the rest
/// since the Carleson box grows with the side.
pub fn estimate_testing_b<T: Scalar>(
    pair: &WeightPair<T>,
    family: &CubeFamily<T>,
    p: &KernelParams<T>,
    spec: &QuadratureSpec<T>,
) -> Result<TestingEstimate<T>> {
    let cubes = family.by_content(pair);
    let terms = cubes
        .par_iter()
        .map(|q| testing_term(pair, q, p, spec))
        .collect::<Result<Vec<_>>>()?;
    let mut b = T::zero();
    let mut argmax = None;
    for t in &terms {
        if t.value > b {
            b = t.value;
            argmax = Some(t.cube.clone());
        }
    }
    let unconverged = terms.iter().filter(|t| !t.converged).count();
    Ok(TestingEstimate {
        b,
        sqrt_b: b.sqrt(),
        argmax,
        terms,
        unconverged,
    })
}

/// Finite dyadic partition of a root cube.
#[derive(Clone, Debug, PartialEq)]
pub struct Partition<T> {
    pub cubes: Vec<Cube<T>>,
}

/// All grid descendants of `root` `depth` levels down.
pub fn uniform_partition<T: Scalar>(
    grid: &ShiftedGrid<T>,
    root: &Cube<T>,
    depth: u32,
) -> Result<Partition<T>> {
    let (level, _) = grid.index_of(root)?;
    Ok(Partition {
        cubes: grid.descendants(root, level - depth as i32)?,
    })
}

/// Splits each cube with probability 1/2 down to `max_depth` levels.
pub fn random_partition<T: Scalar>(
    grid: &ShiftedGrid<T>,
    root: &Cube<T>,
    max_depth: u32,
    seed: u64,
) -> Result<Partition<T>> {
    let (level, _) = grid.index_of(root)?;
    let floor = (level - max_depth as i32).max(grid.min_level());
    let mut rng = stream(seed, 0x9a27);
    let mut out = Vec::new();
    let mut stack = vec![root.clone()];
    while let Some(c) = stack.pop() {
        if c.generation() > floor && rng.gen_bool(0.5) {
            stack.extend(c.children());
        } else {
            out.push(c);
        }
    }
    crate::geometry::sort_cubes(&mut out);
    Ok(Partition { cubes: out })
}

/// Uniform partitions at depths `0..=max_depth` (clipped to the grid) plus
/// one random partition.
pub fn default_partitions<T: Scalar>(
    grid: &ShiftedGrid<T>,
    root: &Cube<T>,
    max_depth: u32,
    seed: u64,
) -> Result<Vec<Partition<T>>> {
    let (level, _) = grid.index_of(root)?;
    let reach = (level - grid.min_level()).max(0) as u32;
    let mut out = Vec::new();
    for d in 0..=max_depth.min(reach) {
        out.push(uniform_partition(grid, root, d)?);
    }
    out.push(random_partition(grid, root, max_depth.min(reach), seed)?);
    Ok(out)
}

/// The cube of `W_I` containing `point`, found by descending from `I`.
pub fn whitney_cube_of<T: Scalar>(
    i: &Cube<T>,
    point: &[T],
    grid: &ShiftedGrid<T>,
    gb: &GoodBadParams<T>,
) -> Result<Option<Cube<T>>> {
    grid.index_of(i)?;
    if !i.contains(point) {
        return Ok(None);
    }
    let max_side = i.side() / gb.scale_factor();
    let mut k = i.clone();
    while k.generation() > grid.min_level() {
        k = k
            .children()
            .into_iter()
            .find(|c| c.contains(point))
            .expect("children partition the parent");
        if k.side() <= max_side && k.boundary_distance(i) >= gb.threshold(k.side(), i.side()) {
            return Ok(Some(k));
        }
    }
    Ok(None)
}

/// `sum_{I_j} sum_{K in W_{I_j}} P_alpha(K, 1_root sigma)^2 w(K)`.
pub fn pivotal_sum<T: Scalar>(
    pair: &WeightPair<T>,
    root: &Cube<T>,
    partition: &Partition<T>,
    grid: &ShiftedGrid<T>,
    alpha: T,
    gb: &GoodBadParams<T>,
) -> Result<T> {
    let mut acc = T::zero();
    for ij in &partition.cubes {
        for k in pair.w.atoms_in(ij) {
            if let Some(kc) = whitney_cube_of(ij, pair.w.position(k), grid, gb)? {
                let pt = poisson_term(&kc, &pair.sigma, Some(root), alpha)?;
                acc += pt * pt * pair.w.mass(k);
            }
        }
    }
    Ok(acc)
}

#[derive(Clone, Debug)]
pub struct PivotalEstimate<T> {
    /// `max_partitions pivotal_sum / sigma(root)`; `None` when `sigma(root) = 0`.
    pub pivotal_sq: Option<T>,
    pub per_partition: Vec<T>,
}

impl<T: Scalar> PivotalEstimate<T> {
    pub fn pivotal(&self) -> Option<T> {
        self.pivotal_sq.map(|v| v.sqrt())
    }
}

pub fn estimate_pivotal<T: Scalar>(
    pair: &WeightPair<T>,
    root: &Cube<T>,
    partitions: &[Partition<T>],
    grid: &ShiftedGrid<T>,
    p: &KernelParams<T>,
    gb: &GoodBadParams<T>,
) -> Result<PivotalEstimate<T>> {
    let s = pair.sigma.mass_on(root)?;
    let per_partition = partitions
        .iter()
        .map(|part| pivotal_sum(pair, root, part, grid, p.alpha(), gb))
        .collect::<Result<Vec<_>>>()?;
    if s == T::zero() {
        return Ok(PivotalEstimate {
            pivotal_sq: None,
            per_partition,
        });
    }
    let best = per_partition.iter().fold(T::zero(), |a, &b| a.max(b));
    Ok(PivotalEstimate {
        pivotal_sq: Some(best / s),
        per_partition: per_partition.into_iter().map(|v| v / s).collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormMethod {
    Dense,
    Power,
}

#[derive(Clone, Debug)]
pub struct NormEstimate<T> {
    /// `sqrt(lambda_max)` of `M f = lambda diag(sigma) f`.
    pub value: T,
    pub eigenvalue: T,
    pub method: NormMethod,
    pub iterations: usize,
    /// Power iteration failed and the dense solver was used instead.
    pub fallback: bool,
}

pub const POWER_TOL: f64 = 1e-10;
pub const POWER_MAX_ITER: usize = 10_000;

/// Largest eigenvalue of `D^-1/2 M D^-1/2` by a dense symmetric solver.
pub fn dense_top_eigenvalue(m: &[f64], masses: &[f64]) -> f64 {
    let k = masses.len();
    let scale: Vec<f64> = masses.iter().map(|s| 1.0 / s.sqrt()).collect();
    let a = DMatrix::from_fn(k, k, |i, j| {
        0.5 * (m[i * k + j] + m[j * k + i]) * scale[i] * scale[j]
    });
    SymmetricEigen::new(a)
        .eigenvalues
        .iter()
        .fold(f64::NEG_INFINITY, |a, &b| a.max(b))
}

/// Power iteration in the `diag(masses)` inner product. Stops once the
/// Rayleigh quotient changes by at most `tol` relative and the residual
/// `|M v - rho D v|_{D^-1}` is at most `sqrt(tol) rho`.
pub fn power_top_eigenvalue(
    m: &[f64],
    masses: &[f64],
    tol: f64,
    max_iter: usize,
) -> Option<(f64, usize)> {
    let k = masses.len();
    let apply = |v: &[f64]| -> Vec<f64> {
        (0..k)
            .map(|i| (0..k).map(|j| m[i * k + j] * v[j]).sum())
            .collect()
    };
    let dnorm = |v: &[f64]| -> f64 {
        v.iter()
            .zip(masses)
            .map(|(x, s)| x * x * s)
            .sum::<f64>()
            .sqrt()
    };
    let mut v: Vec<f64> = (0..k)
        .map(|i| 1.0 + 1e-3 * (i as f64 + 1.0).sin())
        .collect();
    let norm = dnorm(&v);
    v.iter_mut().for_each(|x| *x /= norm);
    let mut rho_prev = f64::NAN;
    for it in 1..=max_iter {
        let mv = apply(&v);
        let rho: f64 = v.iter().zip(&mv).map(|(a, b)| a * b).sum();
        if rho == 0.0 && mv.iter().all(|&x| x == 0.0) {
            return Some((0.0, it));
        }
        let residual = mv
            .iter()
            .zip(&v)
            .zip(masses)
            .map(|((&a, &b), &s)| {
                let r = a - rho * s * b;
                r * r / s
            })
            .sum::<f64>()
            .sqrt();
        if (rho - rho_prev).abs() <= tol * rho.abs() && residual <= tol.sqrt() * rho.abs() {
            return Some((rho, it));
        }
        rho_prev = rho;
        let mut next: Vec<f64> = mv.iter().zip(masses).map(|(a, s)| a / s).collect();
        let norm = dnorm(&next);
        if norm == 0.0 || !norm.is_finite() {
            return None;
        }
        next.iter_mut().for_each(|x| *x /= norm);
        v = next;
    }
    None
}

/// Top generalized eigenvalue of a Gram matrix against `diag(sigma)`.
pub fn gram_norm<T: Scalar>(
    gram: &GramMatrix<T>,
    masses: &[T],
    method: NormMethod,
) -> Result<NormEstimate<T>> {
    if masses.len() != gram.size() {
        return Err(domain("mass count differs from Gram size"));
    }
    if masses.iter().any(|&s| !(s > T::zero())) {
        return Err(domain("sigma masses must be positive"));
    }
    let m: Vec<f64> = gram.entries().iter().map(|x| x.as_f64()).collect();
    let s: Vec<f64> = masses.iter().map(|x| x.as_f64()).collect();
    let (lambda, method, iterations, fallback) = match method {
        NormMethod::Dense => (dense_top_eigenvalue(&m, &s), NormMethod::Dense, 0, false),
        NormMethod::Power => match power_top_eigenvalue(&m, &s, POWER_TOL, POWER_MAX_ITER) {
            Some((l, it)) => (l, NormMethod::Power, it, false),
            None => {
                log::warn!("power iteration did not converge; using the dense solver");
                (
                    dense_top_eigenvalue(&m, &s),
                    NormMethod::Dense,
                    POWER_MAX_ITER,
                    true,
                )
            }
        },
    };
    let lambda = T::lit(lambda.max(0.0));
    Ok(NormEstimate {
        value: lambda.sqrt(),
        eigenvalue: lambda,
        method,
        iterations,
        fallback,
    })
}

/// `N = sqrt(lambda_max(M, diag(sigma)))`, with the Gram matrix it came from.
/// Coincident sigma and w atoms give an infinite norm and no matrix.
pub fn estimate_operator_norm<T: Scalar>(
    pair: &WeightPair<T>,
    p: &KernelParams<T>,
    spec: &QuadratureSpec<T>,
    method: NormMethod,
    cap: usize,
) -> Result<(NormEstimate<T>, Option<GramMatrix<T>>)> {
    let zero = |value: T| NormEstimate {
        value,
        eigenvalue: value,
        method,
        iterations: 0,
        fallback: false,
    };
    if pair.sigma.is_empty() || pair.w.is_empty() {
        return Ok((zero(T::zero()), None));
    }
    if pair.has_coincident_atoms() {
        log::warn!("a sigma atom coincides with a w atom: the operator norm is infinite");
        return Ok((zero(T::infinity()), None));
    }
    let gram = gram_matrix(pair, p, spec, cap)?;
    let est = gram_norm(&gram, pair.sigma.masses(), method)?;
    Ok((est, Some(gram)))
}

/// Inputs of [`equivalence_report`].
#[derive(Clone, Debug)]
pub struct ConstantsConfig {
    pub kernel: KernelParams<f64>,
    pub quadrature: QuadratureSpec<f64>,
    pub grid: ShiftedGrid<f64>,
    pub goodbad: GoodBadParams<f64>,
    pub dilations: Vec<f64>,
    pub method: NormMethod,
    pub gram_cap: usize,
    pub partition_depth: u32,
    pub partition_seed: u64,
    /// Necessity constant `C_nec` for the `A2 <= C_nec N` certainty.
    pub c_nec: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ParamsRecord {
    pub n: usize,
    pub lambda: f64,
    pub alpha: f64,
    pub tolerance: f64,
    pub hash: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Ratios {
    pub n_over_a2_plus_sqrt_b: Option<f64>,
    pub a2_over_n: Option<f64>,
    pub b_over_n_sq: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CubeRow {
    pub cube: CubeRecord,
    pub sigma: f64,
    pub w: f64,
    pub b: f64,
    pub error: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ErrorBudget {
    pub gram_error: f64,
    pub testing_max_error: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct Certainties {
    /// `sqrt(B) <= N (1 + 3 tol)`.
    pub testing_below_norm: bool,
    /// `A2 <= C_nec N`, when `C_nec` is configured.
    pub a2_below_norm: Option<bool>,
}

/// Report of all four constants. Infinite values serialize as `null` and
/// come with a warning.
#[derive(Clone, Debug, Serialize)]
pub struct ConstantsReport {
    pub params: ParamsRecord,
    pub a2: f64,
    pub a2_sq: f64,
    pub a2_cube: Option<CubeRecord>,
    pub b: f64,
    pub sqrt_b: f64,
    pub b_cube: Option<CubeRecord>,
    pub pivotal: Option<f64>,
    pub pivotal_sq: Option<f64>,
    pub n_norm: f64,
    pub norm_method: NormMethod,
    pub ratios: Ratios,
    pub certainties: Certainties,
    pub per_cube: Vec<CubeRow>,
    pub error_budget: ErrorBudget,
    pub warnings: Vec<String>,
}

fn ratio(a: f64, b: f64) -> Option<f64> {
    (b > 0.0 && a.is_finite() && b.is_finite()).then(|| a / b)
}

/// Assembles `A2`, `B`, the pivotal constant and `N` for one pair.
pub fn equivalence_report(
    pair: &WeightPair<f64>,
    cfg: &ConstantsConfig,
) -> Result<ConstantsReport> {
    let p = &cfg.kernel;
    let spec = &cfg.quadrature;
    check_dim(p.n(), pair.dim())?;
    let mut warnings = Vec::new();
    if pair.sigma.is_empty() && pair.w.is_empty() {
        return Err(domain("both measures are empty"));
    }
    let family = CubeFamily::generated(pair, &cfg.grid, &cfg.dilations)?;
    let a2 = estimate_a2(pair, &family)?;
    if a2.coincident {
        warnings.push("coincident sigma and w atoms: A2, B and N are infinite".to_string());
    }
    let testing = estimate_testing_b(pair, &family, p, spec)?;
    if testing.unconverged > 0 {
        warnings.push(format!(
            "{} testing cubes did not converge",
            testing.unconverged
        ));
    }
    let (norm, gram) = estimate_operator_norm(pair, p, spec, cfg.method, cfg.gram_cap)?;
    if norm.fallback {
        warnings.push("power iteration did not converge; dense solver used".to_string());
    }
    if gram.as_ref().is_some_and(|g| !g.converged) {
        warnings.push("Gram quadrature did not converge".to_string());
    }

    let mut pivotal_sq: Option<f64> = None;
    if let Some((lo, hi)) = pair.bounding_box() {
        for root in cfg.grid.top_cubes_covering(&lo, &hi)? {
            if pair.sigma.mass_on(&root)? == 0.0 {
                continue;
            }
            let parts =
                default_partitions(&cfg.grid, &root, cfg.partition_depth, cfg.partition_seed)?;
            let est = estimate_pivotal(pair, &root, &parts, &cfg.grid, p, &cfg.goodbad)?;
            if let Some(v) = est.pivotal_sq {
                pivotal_sq = Some(pivotal_sq.map_or(v, |b: f64| b.max(v)));
            }
        }
    }
    if pivotal_sq.is_none() {
        warnings
            .push("no grid root with positive sigma mass: pivotal constant undefined".to_string());
    }

    let n_norm = norm.value;
    let testing_below_norm = if testing.sqrt_b.is_finite() && n_norm.is_finite() {
        testing.sqrt_b <= n_norm * (1.0 + 3.0 * spec.tol)
    } else {
        true
    };
    if !testing_below_norm {
        warnings.push(format!(
            "sqrt(B) = {} exceeds N = {} beyond the quadrature allowance",
            testing.sqrt_b, n_norm
        ));
    }
    let a2_below_norm = cfg
        .c_nec
        .map(|c| !(a2.a2.is_finite() && n_norm.is_finite()) || a2.a2 <= c * n_norm);
    if a2_below_norm == Some(false) {
        warnings.push("A2 exceeds C_nec N".to_string());
    }
    let testing_max_error = testing.terms.iter().fold(0.0f64, |a, t| a.max(t.error));
    let per_cube = testing
        .terms
        .iter()
        .map(|t| CubeRow {
            cube: CubeRecord::from(&t.cube),
            sigma: t.sigma_mass,
            w: t.w_mass,
            b: t.value,
            error: t.error,
            converged: t.converged,
        })
        .collect();
    Ok(ConstantsReport {
        params: ParamsRecord {
            n: p.n(),
            lambda: p.lambda(),
            alpha: p.alpha(),
            tolerance: spec.tol,
            hash: params_hash(p, spec, pair),
        },
        a2: a2.a2,
        a2_sq: a2.a2_sq,
        a2_cube: a2.argmax.as_ref().map(CubeRecord::from),
        b: testing.b,
        sqrt_b: testing.sqrt_b,
        b_cube: testing.argmax.as_ref().map(CubeRecord::from),
        pivotal: pivotal_sq.map(f64::sqrt),
        pivotal_sq,
        n_norm,
        norm_method: norm.method,
        ratios: Ratios {
            n_over_a2_plus_sqrt_b: ratio(n_norm, a2.a2 + testing.sqrt_b),
            a2_over_n: ratio(a2.a2, n_norm),
            b_over_n_sq: ratio(testing.b, n_norm * n_norm),
        },
        certainties: Certainties {
            testing_below_norm,
            a2_below_norm,
        },
        per_cube,
        error_budget: ErrorBudget {
            gram_error: gram.as_ref().map_or(0.0, |g| g.error),
            testing_max_error,
            converged: gram.as_ref().is_none_or(|g| g.converged) && testing.unconverged == 0,
        },
        warnings,
    })
}

/// `sigma` with every mass multiplied by `c`, or the empty measure for `c = 0`.
pub fn scale_masses<T: Scalar>(m: &AtomicMeasure<T>, c: T) -> Result<AtomicMeasure<T>> {
    if c == T::zero() {
        Ok(AtomicMeasure::empty(m.dim()))
    } else {
        m.scaled(c)
    }
}
