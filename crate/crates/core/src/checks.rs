//! Registry of numerical checks. Each check draws random desk-scale
//! instances, computes both sides of an estimate and reports the ratios.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::config::{CheckSpec, KernelConfig, RunConfig};
use crate::constants::{
    default_partitions, estimate_a2, estimate_pivotal, estimate_testing_b, CubeFamily,
};
use crate::error::{domain, Error, Result};
use crate::geometry::{
    dilated_multiplicity, estimate_pi_good, long_distance, whitney, Cube, GoodBadParams,
    ReferenceCube, ShiftedGrid,
};
use crate::kernels::{ComponentKernel, KernelParams};
use crate::martingale::difference;
use crate::measures::{poisson_term_weighted, AtomicMeasure, SampledFunction, WeightPair};
use crate::operators::{energy_integral, g_psi_pointwise, g_star_pointwise, Energy, EnergyForm};
use crate::quadrature::{integrate_space, QuadratureSpec, Region};
use crate::rng::{log_uniform, stream};

/// Everything a check needs besides its instance stream.
#[derive(Clone, Debug)]
pub struct CheckContext {
    pub kernel: KernelParams<f64>,
    pub quadrature: QuadratureSpec<f64>,
    pub grid: ShiftedGrid<f64>,
    pub goodbad: GoodBadParams<f64>,
    pub dilations: Vec<f64>,
    pub partition_depth: u32,
}

impl CheckContext {
    /// Context for `cfg`, with the kernel replaced by `kernel` when given.
    pub fn from_config(cfg: &RunConfig, kernel: Option<&KernelConfig>) -> Result<Self> {
        let k = kernel.unwrap_or(&cfg.kernel);
        let kernel = k.params()?;
        let grid = cfg.grid.grid(kernel.n())?;
        if grid.max_level() < 0 {
            return Err(Error::Config(
                "checks need grid.max_level >= 0 to hold the unit cube".into(),
            ));
        }
        Ok(Self {
            kernel,
            quadrature: cfg.quadrature.spec()?,
            goodbad: cfg.grid.goodbad(&kernel)?,
            grid,
            dilations: cfg.constants.dilations.clone(),
            partition_depth: cfg.constants.partition_depth,
        })
    }

    fn n(&self) -> usize {
        self.kernel.n()
    }

    fn alpha(&self) -> f64 {
        self.kernel.alpha()
    }

    fn root(&self) -> Cube<f64> {
        Cube::dyadic(vec![0.0; self.n()], 0)
    }
}

#[derive(Clone, Copy, Debug)]
enum Agg {
    Max,
    Min,
    Sum,
}

/// Result of one instance; `ratio` is `None` when the instance was skipped.
#[derive(Clone, Debug)]
struct Outcome {
    ratio: Option<f64>,
    metrics: Vec<(&'static str, Agg, f64)>,
}

impl Outcome {
    fn ratio(r: f64) -> Self {
        Self {
            ratio: Some(r),
            metrics: Vec::new(),
        }
    }

    fn skipped() -> Self {
        Self {
            ratio: None,
            metrics: Vec::new(),
        }
    }

    fn with(mut self, name: &'static str, agg: Agg, v: f64) -> Self {
        self.metrics.push((name, agg, v));
        self
    }
}

type Runner = fn(&CheckContext, &mut ChaCha8Rng) -> Result<Outcome>;
type Extra = fn(&BTreeMap<String, f64>, &CheckContext) -> Vec<String>;

struct CheckDef {
    id: &'static str,
    description: &'static str,
    instances: usize,
    cap: Option<f64>,
    run: Runner,
    extra: Option<Extra>,
}

/// Default caps of the comparison checks are ten times the median ratio of
/// a default-size run at [`CALIBRATION_SEED`] (see [`calibrate_cap`]). TILE
/// and COMP ratios are in units of the quadrature tolerance.
const REGISTRY: [CheckDef; 12] = [
    CheckDef {
        id: "E41",
        description: "size estimate of the inner square function of a martingale difference",
        instances: 100,
        cap: Some(0.805),
        run: run_e41,
        extra: None,
    },
    CheckDef {
        id: "E42",
        description: "cancellation estimate for a smaller cube",
        instances: 100,
        cap: Some(1.22),
        run: run_e42,
        extra: Some(extra_e42),
    },
    CheckDef {
        id: "L42",
        description: "Whitney-region energy of a function supported off S",
        instances: 100,
        cap: Some(0.435),
        run: run_l42,
        extra: None,
    },
    CheckDef {
        id: "I44",
        description: "Poisson quotients of nested cubes",
        instances: 200,
        cap: Some(1.9),
        run: run_i44,
        extra: None,
    },
    CheckDef {
        id: "SCHUR",
        description: "bilinear long-distance sum against the A2 constant",
        instances: 200,
        cap: Some(3.85),
        run: run_schur,
        extra: None,
    },
    CheckDef {
        id: "ELLD",
        description: "separated-cube kernel bound by the long distance",
        instances: 200,
        cap: Some(7.05),
        run: run_elld,
        extra: None,
    },
    CheckDef {
        id: "NEC",
        description: "band lower bound of g* on the indicator of a cube",
        instances: 200,
        cap: None,
        run: run_nec,
        extra: None,
    },
    CheckDef {
        id: "PIV",
        description: "pivotal constant against A2 plus the testing constant",
        instances: 200,
        cap: Some(0.678),
        run: run_piv,
        extra: None,
    },
    CheckDef {
        id: "OVERLAP",
        description: "bounded overlap of dilated Whitney cubes",
        instances: 200,
        cap: Some(50.0),
        run: run_overlap,
        extra: Some(extra_overlap),
    },
    CheckDef {
        id: "TILE",
        description: "Whitney regions tile the slab",
        instances: 20,
        cap: Some(2.0),
        run: run_tile,
        extra: None,
    },
    CheckDef {
        id: "PIGOOD",
        description: "good-cube probability does not depend on the reference cube",
        instances: 50,
        cap: Some(5.07),
        run: run_pigood,
        extra: None,
    },
    CheckDef {
        id: "COMP",
        description: "component-kernel square function equals g*",
        instances: 50,
        cap: Some(2.0),
        run: run_comp,
        extra: None,
    },
];

/// Identifiers of every registered check, in registry order.
pub fn check_ids() -> Vec<&'static str> {
    REGISTRY.iter().map(|d| d.id).collect()
}

/// `(id, description, default instances, default cap)` for every check.
pub fn registry() -> Vec<(&'static str, &'static str, usize, Option<f64>)> {
    REGISTRY
        .iter()
        .map(|d| (d.id, d.description, d.instances, d.cap))
        .collect()
}

fn lookup(id: &str) -> Result<&'static CheckDef> {
    REGISTRY
        .iter()
        .find(|d| d.id.eq_ignore_ascii_case(id))
        .ok_or_else(|| Error::UnknownCheck {
            id: id.to_string(),
            valid: check_ids().join(", "),
        })
}

/// Fails with [`Error::UnknownCheck`] unless `id` is registered.
pub fn validate_id(id: &str) -> Result<&'static str> {
    lookup(id).map(|d| d.id)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckReport {
    pub id: String,
    pub instances: usize,
    pub evaluated: usize,
    pub skipped: usize,
    /// Per-instance LHS/RHS in instance order; `null` marks a skipped instance.
    #[serde(serialize_with = "ser_ratios")]
    pub ratios: Vec<Option<f64>>,
    #[serde(serialize_with = "ser_opt")]
    pub max_ratio: Option<f64>,
    #[serde(serialize_with = "ser_opt")]
    pub median_ratio: Option<f64>,
    #[serde(serialize_with = "ser_opt")]
    pub empirical_constant: Option<f64>,
    pub cap: Option<f64>,
    pub pass: bool,
    pub seed: u64,
    #[serde(serialize_with = "ser_map")]
    pub details: BTreeMap<String, f64>,
    pub failures: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub runtime_ms: Option<u64>,
}

/// Non-finite values become the strings `"inf"`, `"-inf"` and `"nan"`.
fn real(v: f64) -> serde_json::Value {
    if v.is_finite() {
        serde_json::json!(v)
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn ser_opt<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    v.map(real).serialize(s)
}

fn ser_ratios<S: Serializer>(v: &[Option<f64>], s: S) -> std::result::Result<S::Ok, S::Error> {
    v.iter()
        .map(|r| r.map(real))
        .collect::<Vec<_>>()
        .serialize(s)
}

fn ser_map<S: Serializer>(v: &BTreeMap<String, f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    v.iter()
        .map(|(k, &x)| (k, real(x)))
        .collect::<BTreeMap<_, _>>()
        .serialize(s)
}

/// Runs `instances` instances of check `id`; instance `i` draws from
/// `stream(seed, i)`.
pub fn run_check(
    id: &str,
    ctx: &CheckContext,
    instances: Option<usize>,
    seed: u64,
    cap: Option<f64>,
    timing: bool,
) -> Result<CheckReport> {
    let def = lookup(id)?;
    let instances = instances.unwrap_or(def.instances);
    let cap = cap.or(def.cap);
    let start = Instant::now();
    let outcomes = (0..instances as u64)
        .into_par_iter()
        .map(|i| (def.run)(ctx, &mut stream(seed, i)))
        .collect::<Result<Vec<_>>>()?;

    let ratios: Vec<Option<f64>> = outcomes.iter().map(|o| o.ratio).collect();
    let mut values: Vec<f64> = ratios.iter().flatten().copied().collect();
    values.sort_by(f64::total_cmp);
    let evaluated = values.len();
    let max_ratio = values.last().copied();
    let median_ratio = (!values.is_empty()).then(|| {
        let m = values.len() / 2;
        if values.len() % 2 == 1 {
            values[m]
        } else {
            0.5 * (values[m - 1] + values[m])
        }
    });

    let mut details = BTreeMap::new();
    for o in &outcomes {
        for &(name, agg, v) in &o.metrics {
            details
                .entry(name.to_string())
                .and_modify(|acc: &mut f64| {
                    *acc = match agg {
                        Agg::Max => acc.max(v),
                        Agg::Min => acc.min(v),
                        Agg::Sum => *acc + v,
                    }
                })
                .or_insert(v);
        }
    }

    let mut failures = Vec::new();
    if evaluated == 0 {
        failures.push("no instance was evaluated".to_string());
    }
    if values.iter().any(|v| !v.is_finite()) {
        failures.push("non-finite ratio".to_string());
    }
    if let (Some(c), Some(m)) = (cap, max_ratio) {
        if m > c {
            failures.push(format!("max ratio {m:.6e} exceeds cap {c}"));
        }
    }
    if let Some(extra) = def.extra {
        failures.extend(extra(&details, ctx));
    }

    let mut empirical_constant = max_ratio;
    if def.id == "NEC" {
        if let Some(&c) = details.get("min_c") {
            details.insert("c_nec".into(), 1.0 / c.sqrt());
            empirical_constant = Some(1.0 / c.sqrt());
        }
    }

    Ok(CheckReport {
        id: def.id.to_string(),
        instances,
        evaluated,
        skipped: instances - evaluated,
        ratios,
        max_ratio,
        median_ratio,
        empirical_constant,
        cap,
        pass: failures.is_empty(),
        seed,
        details,
        failures,
        runtime_ms: timing.then(|| start.elapsed().as_millis() as u64),
    })
}

/// Seed of the run that fixed the default caps.
pub const CALIBRATION_SEED: u64 = 1000;

/// Ten times the median ratio of a default-size run at [`CALIBRATION_SEED`].
pub fn calibrate_cap(id: &str, ctx: &CheckContext) -> Result<Option<f64>> {
    let r = run_check(id, ctx, None, CALIBRATION_SEED, None, false)?;
    Ok(r.median_ratio.map(|m| 10.0 * m))
}

/// Default seed of a check without an explicit one.
pub const DEFAULT_SEED: u64 = 42;

/// Runs the configured checks (every registered check when the config lists
/// none), restricted to `only` and with `seed` overriding configured seeds.
pub fn run_configured(
    cfg: &RunConfig,
    only: Option<&[String]>,
    seed: Option<u64>,
    timing: bool,
) -> Result<Vec<CheckReport>> {
    let mut specs: Vec<CheckSpec> = if cfg.checks.is_empty() {
        check_ids()
            .into_iter()
            .map(|id| CheckSpec {
                id: id.to_string(),
                instances: None,
                seed: None,
                cap: None,
                kernel: None,
            })
            .collect()
    } else {
        cfg.checks.clone()
    };
    for s in &specs {
        validate_id(&s.id)?;
    }
    if let Some(ids) = only {
        let mut picked = Vec::new();
        for id in ids {
            let id = validate_id(id)?;
            match specs.iter().find(|s| s.id.eq_ignore_ascii_case(id)) {
                Some(s) => picked.push(s.clone()),
                None => picked.push(CheckSpec {
                    id: id.to_string(),
                    instances: None,
                    seed: None,
                    cap: None,
                    kernel: None,
                }),
            }
        }
        specs = picked;
    }
    specs
        .iter()
        .map(|s| {
            let ctx = CheckContext::from_config(cfg, s.kernel.as_ref())?;
            let seed = seed.or(s.seed).unwrap_or(DEFAULT_SEED);
            let cap = match validate_id(&s.id)? {
                "OVERLAP" => s.cap.or(cfg.grid.overlap_cap),
                _ => s.cap,
            };
            run_check(&s.id, &ctx, s.instances, seed, cap, timing)
        })
        .collect()
}

fn random_cube(rng: &mut ChaCha8Rng, n: usize, level: i32) -> Cube<f64> {
    let count = 1i64 << (-level).max(0);
    let side = 2f64.powi(level);
    let corner = (0..n)
        .map(|_| rng.gen_range(0..count) as f64 * side)
        .collect();
    Cube::dyadic(corner, level)
}

fn point_in(rng: &mut ChaCha8Rng, q: &Cube<f64>) -> Vec<f64> {
    q.corner()
        .iter()
        .map(|&c| c + rng.gen_range(0.0..1.0) * q.side())
        .collect()
}

fn mass(rng: &mut ChaCha8Rng) -> f64 {
    log_uniform(rng, 1.0 / 16.0, 16.0)
}

fn measure_in(rng: &mut ChaCha8Rng, q: &Cube<f64>, k: usize) -> Result<AtomicMeasure<f64>> {
    let atoms = (0..k).map(|_| (point_in(rng, q), mass(rng))).collect();
    AtomicMeasure::new(q.dim(), atoms)
}

fn signed_values(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn unit_atom(x: &[f64]) -> Result<AtomicMeasure<f64>> {
    AtomicMeasure::new(x.len(), vec![(x.to_vec(), 1.0)])
}

fn l2_norm(f: &SampledFunction<'_, f64>) -> f64 {
    f.values()
        .iter()
        .zip(f.base().masses())
        .map(|(v, m)| v * v * m)
        .sum::<f64>()
        .sqrt()
}

struct DifferenceInstance {
    lhs: f64,
    rhs41: f64,
    rhs42: f64,
    l_q: f64,
    l_r: f64,
}

/// Inner square function of `Delta_Q f` at a random `(x, t)` in `W_R`.
fn difference_instance(
    ctx: &CheckContext,
    rng: &mut ChaCha8Rng,
    smaller_q: bool,
) -> Result<Option<DifferenceInstance>> {
    let n = ctx.n();
    let p = &ctx.kernel;
    let a = ctx.alpha();
    let lr = rng.gen_range(1..=5);
    let lq = if smaller_q {
        rng.gen_range(lr + 1..=lr + 4)
    } else {
        rng.gen_range(1..=6)
    };
    let q = random_cube(rng, n, -lq);
    let r = random_cube(rng, n, -lr);
    let k = rng.gen_range(2..=8);
    let children = q.children();
    let mut atoms = vec![
        (point_in(rng, &children[0]), mass(rng)),
        (
            point_in(rng, children.last().expect("cube has children")),
            mass(rng),
        ),
    ];
    for _ in 2..k {
        atoms.push((point_in(rng, &q), mass(rng)));
    }
    let sigma = AtomicMeasure::new(n, atoms)?;
    let f = SampledFunction::new(&sigma, signed_values(rng, k))?;
    let delta = difference(&f, &sigma, &q)?;
    let norm = l2_norm(&delta);
    if norm == 0.0 {
        return Ok(None);
    }
    let x = point_in(rng, &r);
    let t = r.side() * rng.gen_range(0.5..1.0);
    let e = Energy::of_function(*p, &delta, &unit_atom(&x)?, EnergyForm::Gradient)?;
    let res = integrate_space(&e, n, t, None, &ctx.quadrature)?;
    if !res.converged {
        return Ok(None);
    }
    let lhs = (t * res.scalar().max(0.0)).sqrt();
    let d = q.gap(&r);
    let (sq, sr) = (q.side(), r.side());
    let common = sigma.total_mass().sqrt() * norm / (sr + d).powf(n as f64 + a);
    Ok(Some(DifferenceInstance {
        lhs,
        rhs41: sr.powf(a) * common,
        rhs42: sq.powf(a / 2.0) * sr.powf(a / 2.0) * common,
        l_q: sq,
        l_r: sr,
    }))
}

fn run_e41(ctx: &CheckContext, rng: &mut ChaCha8Rng) -> Result<Outcome> {
    Ok(match difference_instance(ctx, rng, false)? {
        Some(d) => Outcome::ratio(d.lhs / d.rhs41),
        None => Outcome::skipped(),
    })
}

fn run_e42(ctx: &CheckContext, rng: &mut ChaCha8Rng) -> Result<Outcome> {
    Ok(match difference_instance(ctx, rng, true)? {
        Some(d) => {
            let scaled = d.rhs41 * (d.l_q / d.l_r).powf(ctx.alpha() / 2.0);
            let gap = (d.rhs42 - scaled).abs() / d.rhs42;
            Outcome::ratio(d.lhs / d.rhs42)
                .with("scaling_error", Agg::Max, gap)
                .with("e41_ratio", Agg::Max, d.lhs / d.rhs41)
        }
        None => Outcome::skipped(),
    })
}

/// Largest admissible relative error of the exact rescaling between the two
/// right-hand sides.
pub const SCALING_TOL: f64 = 1e-12;

fn extra_e42(details: &BTreeMap<String, f64>, _: &CheckContext) -> Vec<String> {
    match details.get("scaling_error") {
        Some(&g) if g > SCALING_TOL => vec![format!("rescaling error {g:e} above {SCALING_TOL:e}")],
        _ => Vec::new(),
    }
}

/// `R ⊂ K ⊂ S` with `dist(R, ∂K) >= l(R)^gamma l(K)^(1-gamma)`.
struct Nest {
    r: Cube<f64>,
    k: Cube<f64>,
    s: Cube<f64>,
}

fn nested_cubes(ctx: &CheckContext, rng: &mut ChaCha8Rng) -> Result<Nest> {
    let n = ctx.n();
    let gb = &ctx.goodbad;
    let kk = rng.gen_range(0..=2);
    let k = random_cube(rng, n, -kk);
    let lk = k.side();
    let range = |m: i32| {
        let lr = lk * 2f64.powi(-m);
        let thr = gb.threshold(lr, lk);
        let lo = (thr / lr).ceil() as i64;
        let hi = ((lk - lr - thr) / lr).floor() as i64;
        (lr, lo, hi)
    };
    let mut m_min = 1;
    while range(m_min).1 > range(m_min).2 {
        m_min += 1;
        if m_min > 40 {
            return Err(domain("no admissible inner cube for this gamma"));
        }
    }
    let m = rng.gen_range(m_min..=m_min + 3);
    let (lr, lo, hi) = range(m);
    let corner = k
        .corner()
        .iter()
        .map(|&c| c + rng.gen_range(lo..=hi) as f64 * lr)
        .collect();
    let r = Cube::dyadic(corner, -kk - m);
    let ls = lk * 2f64.powi(rng.gen_range(0..=2));
    let s_corner = k.corner().iter().map(|&c| (c / ls).floor() * ls).collect();
    let s = Cube::new(s_corner, ls)?;
    debug_assert!(r.boundary_distance(&k) >= gb.threshold(lr, lk));
    Ok(Nest { r, k, s })
}

fn point_outside(rng: &mut ChaCha8Rng, s: &Cube<f64>, reach: f64) -> Vec<f64> {
    let ls = s.side();
    loop {
        let z: Vec<f64> = s
            .corner()
            .iter()
            .map(|&c| rng.gen_range(c - reach * ls..c + (1.0 + reach) * ls))
            .collect();
        if s.dist_to_point(&z) > 0.0 {
            return z;
        }
    }
}

fn run_l42(ctx: &CheckContext, rng: &mut ChaCha8Rng) -> Result<Outcome> {
    let n = ctx.n();
    let p = &ctx.kernel;
    let Nest { r, k, s } = nested_cubes(ctx, rng)?;
    let ks = rng.gen_range(2..=8);
    let atoms = (0..ks)
        .map(|_| (point_outside(rng, &s, 0.125), mass(rng)))
        .collect();
    let sigma = AtomicMeasure::new(n, atoms)?;
    // Nonnegative values: the bound is stated for |f|.
    let values = (0..ks).map(|_| rng.gen_range(0.1..1.0)).collect();
    let f = SampledFunction::new(&sigma, values)?;
    let kw = rng.gen_range(1..=4);
    let w = measure_in(rng, &r, kw)?;
    let e = Energy::of_function(*p, &f, &w, EnergyForm::Gradient)?;
    let res = energy_integral(
        &e,
        &Region::band(n, r.side() / 2.0, r.side()),
        &ctx.quadrature,
    )?;
    if !res.converged {
        return Ok(Outcome::skipped());
    }
    let abs_f: Vec<f64> = f.values().iter().map(|v| v.abs()).collect();
    let pk = poisson_term_weighted(&k, &sigma, Some(&abs_f), None, ctx.alpha())?;
    let rhs = (r.side() / k.side()).powf(ctx.alpha()) * pk * pk * w.total_mass();
    Ok(Outcome::ratio(res.scalar() / rhs))
}

fn run_i44(ctx: &CheckContext, rng: &mut ChaCha8Rng) -> Result<Outcome> {
    let Nest { r, k, s } = nested_cubes(ctx, rng)?;
    let reach = [0.05, 1.0, 8.0][rng.gen_range(0..3)];
    let z = point_outside(rng, &s, reach);
    let a = ctx.alpha();
    let e = ctx.n() as f64 + a;
    let (lr, lk) = (r.side(), k.side());
    let lhs = lr.powf(a) / (lr + r.dist_to_point(&z)).powf(e);
    let rhs = (lr / lk).powf(a / 2.0) * lk.powf(a) / (lk + k.dist_to_point(&z)).powf(e);
    Ok(Outcome::ratio(lhs / rhs))
}

fn run_schur(ctx: &CheckContext, rng: &mut ChaCha8Rng) -> Result<Outcome> {
    let n = ctx.n();
    let a = ctx.alpha();
    let root = ctx.root();
    let ks = rng.gen_range(4..=12);
    let kw = rng.gen_range(4..=12);
    let pair = WeightPair::new(
        measure_in(rng, &root, ks)?,
        measure_in(rng, &root, kw)?,
        false,
    )?;
    // Every grid cube down to level -6 that holds an atom; cubes without
    // mass contribute nothing to the sum.
    let mut cubes: Vec<Cube<f64>> = Vec::new();
    for z in pair.sigma.positions().iter().chain(pair.w.positions()) {
        for level in -6..=0 {
            let q = ctx.grid.locate(z, level)?;
            if !cubes.contains(&q) {
                cubes.push(q);
            }
        }
    }
    // The cube attaining A2 is always a member.
    let family = CubeFamily::generated(&pair, &ctx.grid, &ctx.dilations)?;
    let a2 = estimate_a2(&pair, &family)?;
    cubes.push(
        a2.argmax
            .clone()
            .ok_or_else(|| domain("A2 has no maximising cube"))?,
    );
    let m = cubes.len();
    let x: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..1.0)).collect();
    let y: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..1.0)).collect();
    let sig = cubes
        .iter()
        .map(|q| pair.sigma.mass_on(q))
        .collect::<Result<Vec<_>>>()?;
    let wm = cubes
        .iter()
        .map(|q| pair.w.mass_on(q))
        .collect::<Result<Vec<_>>>()?;
    let mut amat = nalgebra::DMatrix::<f64>::zeros(m, m);
    for (i, q) in cubes.iter().enumerate() {
        for (j, r) in cubes.iter().enumerate() {
            let d = long_distance(q, r)?;
            amat[(i, j)] = (q.side() * r.side()).powf(a / 2.0) / d.powf(n as f64 + a)
                * (sig[i] * wm[j]).sqrt();
        }
    }
    let bilinear = |x: &[f64], y: &[f64]| {
        let xv = nalgebra::DVector::from_column_slice(x);
        let yv = nalgebra::DVector::from_column_slice(y);
        let s = xv.dot(&(&amat * &yv));
        s * s / (a2.a2_sq * xv.norm_squared() * yv.norm_squared())
    };
    let random = bilinear(&x, &y);
    // The entries are nonnegative, so the top singular pair is the
    // nonnegative maximiser of the bilinear quotient.
    let top = amat.singular_values().max();
    let worst = top * top / a2.a2_sq;
    Ok(Outcome::ratio(random.max(worst)).with("random_xy_max", Agg::Max, random))
}

fn run_elld(ctx: &CheckContext, rng: &mut ChaCha8Rng) -> Result<Outcome> {
    let n = ctx.n();
    let a = ctx.alpha();
    let e = n as f64 + a;
    let la = rng.gen_range(0..=4);
    let lb = la + rng.gen_range(0..=4);
    let q = random_cube(rng, n, -la);
    let thr = ctx.goodbad.threshold(2f64.powi(-lb), q.side());
    let span = 8i64 << lb;
    let r = loop {
        let corner: Vec<f64> = (0..n)
            .map(|_| (rng.gen_range(0..span) - span / 2) as f64 * 2f64.powi(-lb))
            .collect();
        let r = Cube::dyadic(corner, -lb);
        if q.gap(&r) > thr {
            break r;
        }
    };
    let d = q.gap(&r);
    let (lq, lr) = (q.side(), r.side());
    let lhs = lr.powf(a) / (lr + d).powf(e);
    let rhs = (lq * lr).powf(a / 2.0) / long_distance(&q, &r)?.powf(e);
    Ok(Outcome::ratio(lhs / rhs))
}

fn run_nec(ctx: &CheckContext, rng: &mut ChaCha8Rng) -> Result<Outcome> {
    let n = ctx.n();
    let level = -rng.gen_range(0..=6);
    let q = random_cube(rng, n, level);
    let k = rng.gen_range(1..=8);
    let sigma = measure_in(rng, &q, k)?;
    let x = point_in(rng, &q);
    let f = SampledFunction::constant(&sigma, 1.0);
    let e = Energy::of_function(ctx.kernel, &f, &unit_atom(&x)?, EnergyForm::Gradient)?
        .with_components(&[0])?;
    let l = q.side();
    let res = energy_integral(
        &e,
        &Region::slab_over(&q, 2.0 * l, 3.0 * l),
        &ctx.quadrature,
    )?;
    if !res.converged {
        return Ok(Outcome::skipped());
    }
    let s = sigma.total_mass();
    let c = res.scalar() / (s * s / (q.volume() * q.volume()));
    Ok(Outcome::ratio(1.0 / c).with("min_c", Agg::Min, c))
}

fn run_piv(ctx: &CheckContext, rng: &mut ChaCha8Rng) -> Result<Outcome> {
    let root = ctx.root();
    let ks = rng.gen_range(2..=5);
    let kw = rng.gen_range(2..=5);
    let pair = WeightPair::new(
        measure_in(rng, &root, ks)?,
        measure_in(rng, &root, kw)?,
        false,
    )?;
    let a2 = estimate_a2(
        &pair,
        &CubeFamily::generated(&pair, &ctx.grid, &ctx.dilations)?,
    )?;
    let grid_only = CubeFamily::generated(&pair, &ctx.grid, &[])?;
    let b = estimate_testing_b(&pair, &grid_only, &ctx.kernel, &ctx.quadrature)?;
    if b.unconverged > 0 {
        return Ok(Outcome::skipped());
    }
    let root = ctx.grid.cube_at(0, &vec![0; ctx.n()])?;
    let parts = default_partitions(&ctx.grid, &root, ctx.partition_depth, rng.gen())?;
    let piv = estimate_pivotal(&pair, &root, &parts, &ctx.grid, &ctx.kernel, &ctx.goodbad)?;
    let Some(pv) = piv.pivotal() else {
        return Ok(Outcome::skipped());
    };
    Ok(Outcome::ratio(pv / (a2.a2_sq.sqrt() + b.sqrt_b)))
}

fn run_overlap(ctx: &CheckContext, rng: &mut ChaCha8Rng) -> Result<Outcome> {
    let n = ctx.n();
    let level = -rng.gen_range(0..=3);
    let i = random_cube(rng, n, level);
    let wc = whitney(&i, &ctx.grid, &ctx.goodbad)?;
    if wc.cubes.is_empty() {
        return Ok(Outcome::skipped());
    }
    let c = ctx.goodbad.overlap_c;
    let l = i.side();
    let mut points: Vec<Vec<f64>> = (0..48).map(|_| point_in(rng, &i)).collect();
    for _ in 0..16 {
        let mut x = point_in(rng, &i);
        let axis = rng.gen_range(0..n);
        let eps = l * 10f64.powi(-rng.gen_range(1..=6));
        x[axis] = if rng.gen_bool(0.5) {
            i.corner()[axis] + eps
        } else {
            i.upper(axis) - eps
        };
        points.push(x);
    }
    let outer = i.dilate(1.5);
    points.extend((0..16).map(|_| point_in(rng, &outer)));
    let mut max = 0usize;
    let mut outside = 0usize;
    for x in &points {
        let m = dilated_multiplicity(&wc.cubes, c, x);
        if i.contains(x) {
            max = max.max(m);
        } else if m > 0 {
            outside += 1;
        }
    }
    Ok(Outcome::ratio(max as f64).with("outside_hits", Agg::Sum, outside as f64))
}

fn extra_overlap(details: &BTreeMap<String, f64>, _: &CheckContext) -> Vec<String> {
    match details.get("outside_hits") {
        Some(&h) if h > 0.0 => vec![format!(
            "{h} sample points outside I meet a dilated Whitney cube"
        )],
        _ => Vec::new(),
    }
}

fn run_tile(ctx: &CheckContext, rng: &mut ChaCha8Rng) -> Result<Outcome> {
    let n = ctx.n();
    let top = -rng.gen_range(0..=2);
    let depth = 3;
    let root = ctx.grid.cube_at(top, &vec![0; n])?;
    let ks = rng.gen_range(2..=6);
    let sigma = measure_in(rng, &root.dilate(2.0), ks)?;
    let f = SampledFunction::new(&sigma, signed_values(rng, ks))?;
    let kw = rng.gen_range(1..=4);
    let w = measure_in(rng, &root, kw)?;
    let e = Energy::of_function(ctx.kernel, &f, &w, EnergyForm::Gradient)?;
    let mut sum = 0.0;
    for level in top - depth..=top {
        for r in ctx.grid.descendants(&root, level)? {
            let res = energy_integral(&e, &Region::whitney(&r), &ctx.quadrature)?;
            if !res.converged {
                return Ok(Outcome::skipped());
            }
            sum += res.scalar();
        }
    }
    let lo = root.corner().to_vec();
    let hi = (0..n).map(|a| root.upper(a)).collect();
    let slab = Region::slab(lo, hi, 2f64.powi(top - depth - 1), 2f64.powi(top));
    let res = energy_integral(&e, &slab, &ctx.quadrature)?;
    if !res.converged || res.scalar() == 0.0 {
        return Ok(Outcome::skipped());
    }
    let gap = (sum - res.scalar()).abs() / res.scalar().abs();
    Ok(Outcome::ratio(gap / ctx.quadrature.tol).with("max_relative_gap", Agg::Max, gap))
}

/// Monte-Carlo samples per reference cube in the independence check.
pub const PIGOOD_SAMPLES: usize = 256;

/// Smallest `r` at which a single scale leaves room for good cubes:
/// `2^(-r gamma) <= 1/4`. Below it `pi_good` is identically zero or one.
pub fn pigood_r(gb: &GoodBadParams<f64>) -> u32 {
    gb.r.max((2.0 / gb.gamma).ceil() as u32)
}

fn run_pigood(ctx: &CheckContext, rng: &mut ChaCha8Rng) -> Result<Outcome> {
    let template = ctx.grid.template();
    let gb = GoodBadParams::new(
        pigood_r(&ctx.goodbad),
        ctx.goodbad.gamma,
        ctx.goodbad.overlap_c,
    )?;
    let top = template.max_level - gb.r as i32;
    if top - 1 < template.min_level {
        return Ok(Outcome::skipped());
    }
    let level = top - rng.gen_range(1..=4.min(top - template.min_level));
    let span = 1i64 << (template.max_level - level).min(20);
    let mut est = Vec::new();
    for _ in 0..4 {
        let index = (0..template.dim).map(|_| rng.gen_range(0..span)).collect();
        let reference = ReferenceCube { level, index };
        est.push(estimate_pi_good::<f64>(
            &template,
            &reference,
            &gb,
            PIGOOD_SAMPLES,
            rng.gen(),
        )?);
    }
    let mut worst = 0.0f64;
    for (i, a) in est.iter().enumerate() {
        for b in &est[i + 1..] {
            let diff = (a.probability - b.probability).abs();
            let width = a.halfwidth + b.halfwidth;
            let r = if diff == 0.0 {
                0.0
            } else if width > 0.0 {
                diff / width
            } else {
                f64::INFINITY
            };
            worst = worst.max(r);
        }
    }
    let mean = est.iter().map(|e| e.probability).sum::<f64>() / est.len() as f64;
    Ok(Outcome::ratio(worst).with("min_pi_good", Agg::Min, mean))
}

fn run_comp(ctx: &CheckContext, rng: &mut ChaCha8Rng) -> Result<Outcome> {
    let n = ctx.n();
    let p = &ctx.kernel;
    let root = ctx.root();
    let k = rng.gen_range(1..=6);
    let sigma = measure_in(rng, &root, k)?;
    let f = SampledFunction::new(&sigma, signed_values(rng, k))?;
    let x = point_in(rng, &root.dilate(2.0));
    let gs = g_star_pointwise(&x, &f, &sigma, p, &ctx.quadrature)?;
    let gp = g_psi_pointwise(
        &x,
        &f,
        &sigma,
        &ComponentKernel::full_set(*p),
        p,
        &ctx.quadrature,
    )?;
    if !gs.converged || !gp.converged || gs.value == 0.0 {
        return Ok(Outcome::skipped());
    }
    debug_assert_eq!(n, x.len());
    let rel = (gp.value - gs.value).abs() / gs.value;
    Ok(Outcome::ratio(rel / ctx.quadrature.tol).with("max_relative_gap", Agg::Max, rel))
}
