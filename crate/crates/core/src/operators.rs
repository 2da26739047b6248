//! Pointwise `g*_{lambda,alpha}`, its component form, the intrinsic
//! dictionary, and the Gram matrix of the two-weight quadratic form.

use sha2::{Digest, Sha256};

use crate::error::{check_dim, domain, Error, Result};
use crate::kernels::{psi_unchecked, ComponentKernel, KernelParams};
use crate::measures::{AtomicMeasure, SampledFunction, WeightPair};
use crate::quadrature::{
    integrate_region, theta_tail_bound, Integrand, QuadResult, QuadratureSpec, Region,
};
use crate::scalar::{norm_sq, Scalar};

/// `grad_{y,t} P_t^alpha(f sigma)(y, t)`, ordered `[d/dy_1, .., d/dy_n, d/dt]`.
pub fn poisson_field<T: Scalar>(
    f: &SampledFunction<'_, T>,
    sigma: &AtomicMeasure<T>,
    y: &[T],
    t: T,
    p: &KernelParams<T>,
) -> Result<Vec<T>> {
    f.ensure_base(sigma)?;
    check_dim(p.n(), y.len())?;
    check_dim(p.n(), sigma.dim())?;
    if !(t > T::zero()) {
        return Err(domain(format!("t must be positive, got {t}")));
    }
    let n = p.n();
    let tf = p.time_factors(t);
    let mut out = vec![T::zero(); n + 1];
    let mut g = vec![T::zero(); n + 1];
    let mut u = vec![T::zero(); n];
    for (z, c) in sigma.positions().iter().zip(f.weighted()) {
        for i in 0..n {
            u[i] = y[i] - z[i];
        }
        p.grad_with(&tf, &u, &mut g);
        for (o, &gi) in out.iter_mut().zip(&g) {
            *o += c * gi;
        }
    }
    Ok(out)
}

/// How the energy density is formed from the sources.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnergyForm {
    /// `|grad P_t(f sigma)|^2 t^(1-n)`.
    Gradient,
    /// `sum_j |psi^(j)_t * (f sigma)|^2 t^(-n-1)` with `psi_t = t^(-n) psi(./t)`.
    Psi,
    /// All pairwise products `<m_i grad p_t(y - z_i), m_j grad p_t(y - z_j)> t^(1-n)`.
    Gram,
}

/// Energy density `sum_k w_k Theta(x_k, y, t) * density(y, t)`.
#[derive(Clone, Debug)]
pub struct Energy<T> {
    params: KernelParams<T>,
    sources: Vec<Vec<T>>,
    coef: Vec<T>,
    targets: Vec<Vec<T>>,
    weights: Vec<T>,
    /// Component mask indexed like [`ComponentKernel::index`]: 0 is `t`.
    components: Vec<bool>,
    form: EnergyForm,
}

const MAX_N: usize = 3;

impl<T: Scalar> Energy<T> {
    pub fn new(
        params: KernelParams<T>,
        sources: Vec<Vec<T>>,
        coef: Vec<T>,
        targets: Vec<Vec<T>>,
        weights: Vec<T>,
        form: EnergyForm,
    ) -> Result<Self> {
        let n = params.n();
        if n > MAX_N {
            return Err(domain(format!(
                "dimension {n} above the supported maximum {MAX_N}"
            )));
        }
        if sources.len() != coef.len() || targets.len() != weights.len() {
            return Err(domain("positions and coefficients differ in length"));
        }
        for z in sources.iter().chain(&targets) {
            check_dim(n, z.len())?;
        }
        Ok(Self {
            params,
            sources,
            coef,
            targets,
            weights,
            components: vec![true; n + 1],
            form,
        })
    }

    /// Energy of `f sigma` seen from the atoms of `w`.
    pub fn of_function(
        params: KernelParams<T>,
        f: &SampledFunction<'_, T>,
        w: &AtomicMeasure<T>,
        form: EnergyForm,
    ) -> Result<Self> {
        Self::new(
            params,
            f.base().positions().to_vec(),
            f.weighted(),
            w.positions().to_vec(),
            w.masses().to_vec(),
            form,
        )
    }

    pub fn with_components(mut self, kernels: &[usize]) -> Result<Self> {
        if kernels.is_empty() {
            return Err(domain("at least one component kernel is required"));
        }
        let mut mask = vec![false; self.params.n() + 1];
        for &j in kernels {
            if j > self.params.n() {
                return Err(Error::IndexOutOfRange {
                    index: j,
                    max: self.params.n(),
                });
            }
            mask[j] = true;
        }
        self.components = mask;
        Ok(self)
    }

    pub fn is_trivial(&self) -> bool {
        self.coef.iter().all(|&c| c == T::zero()) || self.weights.iter().all(|&w| w == T::zero())
    }

    fn m(&self) -> usize {
        self.sources.len()
    }

    fn angular(&self, y: &[T], t: T) -> T {
        self.targets
            .iter()
            .zip(&self.weights)
            .map(|(x, &w)| w * self.params.theta_at(x, y, t))
            .sum()
    }

    /// Index of gradient entry for component `j` (0 is `t`).
    #[inline]
    fn slot(&self, j: usize) -> usize {
        if j == 0 {
            self.params.n()
        } else {
            j - 1
        }
    }

    /// `sup_{|u| >= rho} |grad p_t(u)|`.
    fn gradient_sup(&self, t: T, rho: T) -> T {
        let p = &self.params;
        let r2 = t * t + rho * rho;
        let time = p.nf().max(p.alpha()) * t.powf(p.alpha() - T::one());
        let space = p.decay() * t.powf(p.alpha()) / r2.sqrt();
        (time * time + space * space).sqrt() * r2.powf(-p.decay() / T::lit(2.0))
    }
}

impl<T: Scalar> Integrand<T> for Energy<T> {
    fn outputs(&self) -> usize {
        match self.form {
            EnergyForm::Gram => self.m() * (self.m() + 1) / 2,
            _ => 1,
        }
    }

    fn accumulate(&self, y: &[T], t: T, weight: T, acc: &mut [T]) {
        let w = self.angular(y, t);
        if w == T::zero() {
            return;
        }
        let p = &self.params;
        let n = p.n();
        let mut u = [T::zero(); MAX_N];
        match self.form {
            EnergyForm::Gradient => {
                let tf = p.time_factors(t);
                let mut field = [T::zero(); MAX_N + 1];
                let mut g = [T::zero(); MAX_N + 1];
                for (z, &c) in self.sources.iter().zip(&self.coef) {
                    for i in 0..n {
                        u[i] = y[i] - z[i];
                    }
                    p.grad_with(&tf, &u[..n], &mut g[..=n]);
                    for i in 0..=n {
                        field[i] += c * g[i];
                    }
                }
                let e: T = (0..=n)
                    .filter(|&j| self.components[j])
                    .map(|j| field[self.slot(j)] * field[self.slot(j)])
                    .sum();
                acc[0] += weight * w * e * t.powi(1 - n as i32);
            }
            EnergyForm::Psi => {
                let scale = t.powi(-(n as i32));
                let mut e = T::zero();
                for j in (0..=n).filter(|&j| self.components[j]) {
                    let mut s = T::zero();
                    for (z, &c) in self.sources.iter().zip(&self.coef) {
                        for i in 0..n {
                            u[i] = (y[i] - z[i]) / t;
                        }
                        s += c * scale * psi_unchecked(j, &u[..n], p);
                    }
                    e += s * s;
                }
                acc[0] += weight * w * e * t.powi(-(n as i32) - 1);
            }
            EnergyForm::Gram => {
                let tf = p.time_factors(t);
                let m = self.m();
                let mut grads = vec![T::zero(); m * (n + 1)];
                for (k, (z, &c)) in self.sources.iter().zip(&self.coef).enumerate() {
                    for i in 0..n {
                        u[i] = y[i] - z[i];
                    }
                    let g = &mut grads[k * (n + 1)..(k + 1) * (n + 1)];
                    p.grad_with(&tf, &u[..n], g);
                    for v in g.iter_mut() {
                        *v *= c;
                    }
                }
                let factor = weight * w * t.powi(1 - n as i32);
                let mut idx = 0;
                for i in 0..m {
                    let gi = &grads[i * (n + 1)..(i + 1) * (n + 1)];
                    for j in i..m {
                        let gj = &grads[j * (n + 1)..(j + 1) * (n + 1)];
                        let dot: T = (0..=n)
                            .filter(|&c| self.components[c])
                            .map(|c| gi[self.slot(c)] * gj[self.slot(c)])
                            .sum();
                        acc[idx] += factor * dot;
                        idx += 1;
                    }
                }
            }
        }
    }

    fn magnitude(&self, v: &[T]) -> T {
        match self.form {
            EnergyForm::Gram => {
                let m = self.m();
                let mut idx = 0;
                let mut trace = T::zero();
                for i in 0..m {
                    trace += v[idx].abs();
                    idx += m - i;
                }
                trace
            }
            _ => v[0].abs(),
        }
    }

    fn deviation(&self, a: &[T], b: &[T]) -> T {
        match self.form {
            EnergyForm::Gram => {
                let m = self.m();
                let mut idx = 0;
                let mut acc = T::zero();
                for i in 0..m {
                    for j in i..m {
                        let d = a[idx] - b[idx];
                        acc += if i == j { d * d } else { T::lit(2.0) * d * d };
                        idx += 1;
                    }
                }
                acc.sqrt()
            }
            _ => (a[0] - b[0]).abs(),
        }
    }

    fn features(&self) -> Vec<Vec<T>> {
        let mut out: Vec<Vec<T>> = Vec::new();
        for z in self.sources.iter().chain(&self.targets) {
            if !out.contains(z) {
                out.push(z.clone());
            }
        }
        out
    }

    fn tail_bound(&self, t: T, rho: T) -> Option<T> {
        if !(rho > T::zero()) {
            return None;
        }
        let p = &self.params;
        let theta_mass = theta_tail_bound(p, t, rho).ok()? * t.powi(p.n() as i32);
        let total_w: T = self.weights.iter().map(|w| w.abs()).sum();
        let sup = match self.form {
            EnergyForm::Gram => self.coef.iter().map(|&c| c * c).sum::<T>(),
            _ => {
                let s: T = self.coef.iter().map(|c| c.abs()).sum();
                s * s
            }
        } * self.gradient_sup(t, rho).powi(2);
        Some(total_w * theta_mass * sup * t.powi(1 - p.n() as i32))
    }
}

/// Square root of a quadrature value with first-order error propagation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RootValue<T> {
    pub value: T,
    pub squared: T,
    pub error: T,
    pub converged: bool,
}

impl<T: Scalar> RootValue<T> {
    fn from_quad(q: &QuadResult<T>) -> Self {
        let squared = q.scalar().max(T::zero());
        let value = squared.sqrt();
        let error = if value > T::zero() {
            q.error / (T::lit(2.0) * value)
        } else {
            q.error.sqrt()
        };
        Self {
            value,
            squared,
            error,
            converged: q.converged,
        }
    }

    fn zero() -> Self {
        Self {
            value: T::zero(),
            squared: T::zero(),
            error: T::zero(),
            converged: true,
        }
    }
}

/// Integral of an energy density over a region; zero for trivial data.
pub fn energy_integral<T: Scalar>(
    energy: &Energy<T>,
    region: &Region<T>,
    spec: &QuadratureSpec<T>,
) -> Result<QuadResult<T>> {
    if energy.is_trivial() {
        return Ok(QuadResult {
            value: vec![T::zero(); energy.outputs()],
            error: T::zero(),
            converged: true,
            certified: true,
            cells: 0,
            slabs: 0,
            tail: T::zero(),
        });
    }
    integrate_region(energy, region, spec)
}

fn point_target<T: Scalar>(x: &[T]) -> AtomicMeasure<T> {
    AtomicMeasure::new(x.len(), vec![(x.to_vec(), T::one())]).expect("single unit atom")
}

/// `g*_{lambda,alpha}(f sigma)(x)` over the half-space.
pub fn g_star_pointwise<T: Scalar>(
    x: &[T],
    f: &SampledFunction<'_, T>,
    sigma: &AtomicMeasure<T>,
    p: &KernelParams<T>,
    spec: &QuadratureSpec<T>,
) -> Result<RootValue<T>> {
    f.ensure_base(sigma)?;
    check_dim(p.n(), x.len())?;
    if sigma.is_empty() {
        return Ok(RootValue::zero());
    }
    let e = Energy::of_function(*p, f, &point_target(x), EnergyForm::Gradient)?;
    let q = energy_integral(&e, &Region::half_space(p.n()), spec)?;
    Ok(RootValue::from_quad(&q))
}

/// `g*_{psi,lambda}(f sigma)(x)` for the given component kernels.
pub fn g_psi_pointwise<T: Scalar>(
    x: &[T],
    f: &SampledFunction<'_, T>,
    sigma: &AtomicMeasure<T>,
    kernels: &[ComponentKernel<T>],
    p: &KernelParams<T>,
    spec: &QuadratureSpec<T>,
) -> Result<RootValue<T>> {
    f.ensure_base(sigma)?;
    check_dim(p.n(), x.len())?;
    let idx: Vec<usize> = kernels.iter().map(|k| k.index).collect();
    let e = Energy::of_function(*p, f, &point_target(x), EnergyForm::Psi)?.with_components(&idx)?;
    if sigma.is_empty() {
        return Ok(RootValue::zero());
    }
    let q = energy_integral(&e, &Region::half_space(p.n()), spec)?;
    Ok(RootValue::from_quad(&q))
}

/// Symmetric matrix with `f^T M f = ||g*(f sigma)||^2_{L^2(w)}`.
#[derive(Clone, Debug, PartialEq)]
pub struct GramMatrix<T> {
    m: usize,
    entries: Vec<T>,
    pub error: T,
    pub converged: bool,
    pub params_hash: String,
}

impl<T: Scalar> GramMatrix<T> {
    pub fn from_entries(m: usize, entries: Vec<T>) -> Result<Self> {
        if entries.len() != m * m {
            return Err(domain("Gram entries must be m * m"));
        }
        Ok(Self {
            m,
            entries,
            error: T::zero(),
            converged: true,
            params_hash: String::new(),
        })
    }

    pub fn size(&self) -> usize {
        self.m
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.entries[i * self.m + j]
    }

    pub fn entries(&self) -> &[T] {
        &self.entries
    }

    pub fn max_abs(&self) -> T {
        self.entries.iter().fold(T::zero(), |a, &b| a.max(b.abs()))
    }

    pub fn quadratic_form(&self, f: &[T]) -> Result<T> {
        if f.len() != self.m {
            return Err(domain("vector length differs from Gram size"));
        }
        let mut acc = T::zero();
        for i in 0..self.m {
            for j in 0..self.m {
                acc += f[i] * self.get(i, j) * f[j];
            }
        }
        Ok(acc)
    }

    /// Row-major CSV preceded by a header naming `m` and the parameter hash.
    pub fn to_csv(&self) -> String {
        let mut out = format!("# m={} params={}\n", self.m, self.params_hash);
        for i in 0..self.m {
            let row: Vec<String> = (0..self.m)
                .map(|j| format!("{:e}", self.get(i, j).as_f64()))
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// SHA-256 over the kernel, quadrature and measure data of a computation.
pub fn params_hash<T: Scalar>(
    p: &KernelParams<T>,
    spec: &QuadratureSpec<T>,
    pair: &WeightPair<T>,
) -> String {
    let mut h = Sha256::new();
    h.update(format!(
        "n={};lambda={:e};alpha={:e};tol={:e};ratio={:e};slabs={};radius={:e};depth={};order={};grading={:e};",
        p.n(),
        p.lambda().as_f64(),
        p.alpha().as_f64(),
        spec.tol.as_f64(),
        spec.t_ratio.as_f64(),
        spec.min_slabs,
        spec.y_radius_factor.as_f64(),
        spec.max_depth,
        spec.order,
        spec.grading.as_f64()
    ));
    h.update(pair.sigma.to_csv());
    h.update("|");
    h.update(pair.w.to_csv());
    hex::encode(h.finalize())
}

/// Gram matrix over the half-space; rejects more than `cap` sigma atoms.
pub fn gram_matrix<T: Scalar>(
    pair: &WeightPair<T>,
    p: &KernelParams<T>,
    spec: &QuadratureSpec<T>,
    cap: usize,
) -> Result<GramMatrix<T>> {
    let m = pair.sigma.len();
    if m == 0 {
        return Err(domain("Gram matrix needs at least one sigma atom"));
    }
    if m > cap {
        return Err(Error::TooLarge {
            what: "sigma",
            count: m,
            cap,
        });
    }
    check_dim(p.n(), pair.dim())?;
    let energy = Energy::new(
        *p,
        pair.sigma.positions().to_vec(),
        pair.sigma.masses().to_vec(),
        pair.w.positions().to_vec(),
        pair.w.masses().to_vec(),
        EnergyForm::Gram,
    )?;
    let q = energy_integral(&energy, &Region::half_space(p.n()), spec)?;
    let mut entries = vec![T::zero(); m * m];
    let mut idx = 0;
    for i in 0..m {
        for j in i..m {
            entries[i * m + j] = q.value[idx];
            entries[j * m + i] = q.value[idx];
            idx += 1;
        }
    }
    Ok(GramMatrix {
        m,
        entries,
        error: q.error,
        converged: q.converged,
        params_hash: params_hash(p, spec, pair),
    })
}

/// `||g*(f sigma)||^2_{L^2(w)}` by direct quadrature.
pub fn energy_norm_sq<T: Scalar>(
    f: &SampledFunction<'_, T>,
    w: &AtomicMeasure<T>,
    p: &KernelParams<T>,
    spec: &QuadratureSpec<T>,
) -> Result<QuadResult<T>> {
    let e = Energy::of_function(*p, f, w, EnergyForm::Gradient)?;
    energy_integral(&e, &Region::half_space(p.n()), spec)
}

/// `phi(x) = (cap(x - a) - cap(x + a)) / 2` with `cap(v) = (rho - |v|)_+^alpha`.
#[derive(Clone, Debug, PartialEq)]
pub struct DictionaryMember<T> {
    pub name: String,
    pub rho: T,
    pub offset: Vec<T>,
}

impl<T: Scalar> DictionaryMember<T> {
    pub fn eval(&self, x: &[T], alpha: T) -> T {
        let cap = |sign: T| {
            let d2: T = x
                .iter()
                .zip(&self.offset)
                .map(|(&xi, &ai)| (xi - sign * ai) * (xi - sign * ai))
                .sum();
            let r = self.rho - d2.sqrt();
            if r > T::zero() {
                r.powf(alpha)
            } else {
                T::zero()
            }
        };
        (cap(T::one()) - cap(-T::one())) / T::lit(2.0)
    }
}

/// Finite family of admissible test functions for the intrinsic square function.
#[derive(Clone, Debug, PartialEq)]
pub struct Dictionary<T> {
    n: usize,
    alpha: T,
    members: Vec<DictionaryMember<T>>,
}

impl<T: Scalar> Dictionary<T> {
    /// Validates support in the unit ball and the Hölder-alpha seminorm by
    /// sampling; mean zero holds by antisymmetry.
    pub fn new(n: usize, alpha: T, members: Vec<DictionaryMember<T>>) -> Result<Self> {
        if !(alpha > T::zero() && alpha <= T::one()) {
            return Err(domain("dictionary exponent must lie in (0, 1]"));
        }
        for m in &members {
            let invalid = |reason: String| Error::InvalidDictionary {
                name: m.name.clone(),
                reason,
            };
            if m.offset.len() != n {
                return Err(invalid(format!(
                    "offset has {} coordinates, expected {n}",
                    m.offset.len()
                )));
            }
            if !(m.rho > T::zero()) {
                return Err(invalid("cap radius must be positive".into()));
            }
            let reach = norm_sq(&m.offset).sqrt() + m.rho;
            if reach > T::one() + T::lit(1e-12) {
                return Err(invalid(format!("support reaches radius {reach} > 1")));
            }
            let seminorm = sampled_holder(m, n, alpha);
            if seminorm > T::one() + T::lit(1e-9) {
                return Err(invalid(format!("Hölder seminorm {seminorm} exceeds 1")));
            }
        }
        Ok(Self { n, alpha, members })
    }

    /// Antisymmetric cap differences at four radii and eight offsets.
    pub fn default_for(n: usize, alpha: T) -> Result<Self> {
        let mut members = Vec::new();
        for (ri, rho) in [0.125, 0.25, 0.375, 0.5].into_iter().enumerate() {
            for k in 0..8 {
                let offset: Vec<T> = if n == 1 {
                    vec![T::lit((1.0 - rho) * (k + 1) as f64 / 8.0)]
                } else {
                    let angle = std::f64::consts::PI * k as f64 / 8.0;
                    let mut v = vec![T::zero(); n];
                    v[0] = T::lit((1.0 - rho) * angle.cos());
                    v[1] = T::lit((1.0 - rho) * angle.sin());
                    v
                };
                members.push(DictionaryMember {
                    name: format!("cap{ri}-{k}"),
                    rho: T::lit(rho),
                    offset,
                });
            }
        }
        Self::new(n, alpha, members)
    }

    pub fn members(&self) -> &[DictionaryMember<T>] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn extended(&self, extra: Vec<DictionaryMember<T>>) -> Result<Self> {
        let mut members = self.members.clone();
        members.extend(extra);
        Self::new(self.n, self.alpha, members)
    }
}

fn sampled_holder<T: Scalar>(m: &DictionaryMember<T>, n: usize, alpha: T) -> T {
    use rand::Rng;
    let mut rng = crate::rng::stream(0x5eed, 0);
    let mut sup = T::zero();
    for _ in 0..2000 {
        let x: Vec<T> = (0..n).map(|_| T::lit(rng.gen_range(-1.2..1.2))).collect();
        let h = rng.gen_range(1e-6f64..1.0).powi(2);
        let y: Vec<T> = x
            .iter()
            .map(|&xi| xi + T::lit(rng.gen_range(-h..h)))
            .collect();
        let d = crate::scalar::dist(&x, &y);
        if d > T::zero() {
            sup = sup.max((m.eval(&x, alpha) - m.eval(&y, alpha)).abs() / d.powf(alpha));
        }
    }
    sup
}

/// `max_phi |(f sigma) * phi_t(y)|` over the dictionary, with
/// `phi_t = t^(-n) phi(./t)`: a lower bound of the intrinsic `A_alpha`.
pub fn intrinsic_a_alpha<T: Scalar>(
    f: &SampledFunction<'_, T>,
    sigma: &AtomicMeasure<T>,
    y: &[T],
    t: T,
    dict: &Dictionary<T>,
) -> Result<T> {
    f.ensure_base(sigma)?;
    check_dim(dict.n, y.len())?;
    if !(t > T::zero()) {
        return Err(domain("t must be positive"));
    }
    let coef = f.weighted();
    let scale = t.powi(-(dict.n as i32));
    let mut best = T::zero();
    let mut v = vec![T::zero(); dict.n];
    for m in &dict.members {
        let mut s = T::zero();
        for (z, &c) in sigma.positions().iter().zip(&coef) {
            for i in 0..dict.n {
                v[i] = (y[i] - z[i]) / t;
            }
            s += c * scale * m.eval(&v, dict.alpha);
        }
        best = best.max(s.abs());
    }
    Ok(best)
}
