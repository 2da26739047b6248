//! Fractional Poisson kernels, their space-time gradient, the component
//! kernels `psi^(j)` realizing `t * grad P_t`, and the angular factor.

use rand::Rng;

use crate::error::{check_dim, domain, Error, Result};
use crate::rng::stream;
use crate::scalar::{norm_sq, Scalar};

/// `(n, lambda, alpha)` with `lambda > 2` and `0 < alpha <= min(1, n(lambda-2)/2)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelParams<T> {
    n: usize,
    lambda: T,
    alpha: T,
}

impl<T: Scalar> KernelParams<T> {
    /// Parameters admissible for the characterization, including `alpha <= n(lambda-2)/2`.
    pub fn new(n: usize, lambda: T, alpha: T) -> Result<Self> {
        let p = Self::kernel_only(n, lambda, alpha)?;
        let cap = Self::lambda_cap(n, lambda);
        if alpha > cap {
            return Err(Error::InvalidKernel(format!(
                "alpha = {alpha} exceeds n(lambda-2)/2 = {cap}"
            )));
        }
        Ok(p)
    }

    /// Parameters for which the kernels and `g*` are defined: `lambda > 2`,
    /// `0 < alpha <= 1`, without the coupling between `alpha` and `lambda`.
    pub fn kernel_only(n: usize, lambda: T, alpha: T) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidKernel(
                "dimension n must be at least 1".into(),
            ));
        }
        if !lambda.is_finite() || !alpha.is_finite() {
            return Err(Error::InvalidKernel(
                "lambda and alpha must be finite".into(),
            ));
        }
        if !(lambda > T::lit(2.0)) {
            return Err(Error::InvalidKernel(format!(
                "lambda must exceed 2, got {lambda}"
            )));
        }
        if !(alpha > T::zero()) {
            return Err(Error::InvalidKernel(format!(
                "alpha must be positive, got {alpha}"
            )));
        }
        if alpha > T::one() {
            return Err(Error::InvalidKernel(format!(
                "alpha must not exceed 1, got {alpha}"
            )));
        }
        Ok(Self { n, lambda, alpha })
    }

    pub fn satisfies_coupling(&self) -> bool {
        self.alpha <= Self::lambda_cap(self.n, self.lambda)
    }

    fn lambda_cap(n: usize, lambda: T) -> T {
        T::from_usize_lossy(n) * (lambda - T::lit(2.0)) / T::lit(2.0)
    }

    /// Largest admissible alpha for `(n, lambda)`.
    pub fn max_alpha(n: usize, lambda: T) -> T {
        T::one().min(Self::lambda_cap(n, lambda))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    pub(crate) fn nf(&self) -> T {
        T::from_usize_lossy(self.n)
    }

    /// `n + alpha`.
    pub fn decay(&self) -> T {
        self.nf() + self.alpha
    }

    /// `n * lambda`.
    pub fn theta_exponent(&self) -> T {
        self.nf() * self.lambda
    }

    pub fn time_factors(&self, t: T) -> TimeFactors<T> {
        TimeFactors {
            t2: t * t,
            ta: t.powf(self.alpha),
            tam1: t.powf(self.alpha - T::one()),
        }
    }

    /// Gradient `[d/du_1 .. d/du_n, d/dt]` of `p_t(u)` with per-`t` factors precomputed.
    #[inline]
    pub fn grad_with(&self, tf: &TimeFactors<T>, u: &[T], out: &mut [T]) {
        let u2 = norm_sq(u);
        let base = (u2 + tf.t2).powf(-(self.decay() / T::lit(2.0) + T::one()));
        let spatial = -self.decay() * tf.ta * base;
        for (o, &uj) in out.iter_mut().zip(u) {
            *o = spatial * uj;
        }
        out[self.n] = tf.tam1 * (self.alpha * u2 - self.nf() * tf.t2) * base;
    }

    /// Angular factor without the `t > 0` check.
    #[inline]
    pub fn theta_at(&self, x: &[T], y: &[T], t: T) -> T {
        let d = crate::scalar::dist(x, y);
        (t / (t + d)).powf(self.theta_exponent())
    }
}

/// Powers of `t` shared by every gradient evaluation at that `t`.
#[derive(Clone, Copy, Debug)]
pub struct TimeFactors<T> {
    pub t2: T,
    pub ta: T,
    pub tam1: T,
}

fn check_t<T: Scalar>(t: T) -> Result<()> {
    if t > T::zero() && t.is_finite() {
        Ok(())
    } else {
        Err(domain(format!("t must be positive, got {t}")))
    }
}

/// `p^alpha(x) = (1 + |x|^2)^(-(n+alpha)/2)`.
pub fn fractional_poisson<T: Scalar>(x: &[T], p: &KernelParams<T>) -> T {
    (T::one() + norm_sq(x)).powf(-p.decay() / T::lit(2.0))
}

/// `p_t^alpha(y) = t^alpha (t^2 + |y|^2)^(-(n+alpha)/2)`.
pub fn scaled_poisson<T: Scalar>(y: &[T], t: T, p: &KernelParams<T>) -> Result<T> {
    check_t(t)?;
    check_dim(p.n(), y.len())?;
    Ok(t.powf(p.alpha()) * (t * t + norm_sq(y)).powf(-p.decay() / T::lit(2.0)))
}

/// `grad_{u,t} p_t^alpha(u)` ordered as `[d/du_1, .., d/du_n, d/dt]`.
///
/// The time component is
/// `t^(alpha-1) (alpha |u|^2 - n t^2) / (t^2 + |u|^2)^((n+alpha)/2 + 1)`.
pub fn grad_poisson<T: Scalar>(u: &[T], t: T, p: &KernelParams<T>) -> Result<Vec<T>> {
    check_t(t)?;
    check_dim(p.n(), u.len())?;
    let mut out = vec![T::zero(); p.n() + 1];
    p.grad_with(&p.time_factors(t), u, &mut out);
    Ok(out)
}

/// `d_j p^alpha(v) = -(n+alpha) v_j (1 + |v|^2)^(-(n+alpha)/2 - 1)`.
fn partial_poisson<T: Scalar>(j: usize, v: &[T], p: &KernelParams<T>) -> T {
    -p.decay() * v[j] * (T::one() + norm_sq(v)).powf(-(p.decay() / T::lit(2.0) + T::one()))
}

/// Component kernel `psi^(j)`: `psi^(0) = -n p - v . grad p` and
/// `psi^(j) = d_j p` for `1 <= j <= n`.
pub fn component_psi<T: Scalar>(j: usize, v: &[T], p: &KernelParams<T>) -> Result<T> {
    if j > p.n() {
        return Err(Error::IndexOutOfRange {
            index: j,
            max: p.n(),
        });
    }
    check_dim(p.n(), v.len())?;
    Ok(psi_unchecked(j, v, p))
}

#[inline]
pub(crate) fn psi_unchecked<T: Scalar>(j: usize, v: &[T], p: &KernelParams<T>) -> T {
    if j == 0 {
        let radial: T = (0..p.n()).map(|i| v[i] * partial_poisson(i, v, p)).sum();
        -p.nf() * fractional_poisson(v, p) - radial
    } else {
        partial_poisson(j - 1, v, p)
    }
}

/// `(t / (t + |x - y|))^(n lambda)`.
pub fn theta<T: Scalar>(x: &[T], y: &[T], t: T, p: &KernelParams<T>) -> Result<T> {
    check_t(t)?;
    check_dim(p.n(), x.len())?;
    check_dim(p.n(), y.len())?;
    Ok(p.theta_at(x, y, t))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ComponentKernel<T> {
    pub index: usize,
    pub params: KernelParams<T>,
}

impl<T: Scalar> ComponentKernel<T> {
    pub fn new(index: usize, params: KernelParams<T>) -> Result<Self> {
        if index > params.n() {
            return Err(Error::IndexOutOfRange {
                index,
                max: params.n(),
            });
        }
        Ok(Self { index, params })
    }

    /// All `n + 1` components.
    pub fn full_set(params: KernelParams<T>) -> Vec<Self> {
        (0..=params.n())
            .map(|index| Self { index, params })
            .collect()
    }

    pub fn eval(&self, v: &[T]) -> T {
        psi_unchecked(self.index, v, &self.params)
    }

    pub fn check(&self, spec: &SampleSpec, seed: u64) -> Result<KernelConditionReport<T>> {
        check_kernel_conditions(
            |v| self.eval(v),
            self.params.n(),
            self.params.alpha(),
            spec,
            seed,
        )
    }
}

/// Sampling plan for the size and Hölder conditions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleSpec {
    pub samples: usize,
    pub radius_min: f64,
    pub radius_max: f64,
    /// Largest pair offset `|x - y|`, at most 1.
    pub max_offset: f64,
}

impl Default for SampleSpec {
    fn default() -> Self {
        Self {
            samples: 4000,
            radius_min: 1e-3,
            radius_max: 1e3,
            max_offset: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelConditionReport<T> {
    /// `sup |psi(x)| (1 + |x|)^(n + alpha)`.
    pub size: T,
    /// `sup |psi(x) - psi(y)| (1 + max(|x|,|y|))^(n + alpha) / |x - y|^alpha`.
    pub holder: T,
}

fn random_unit<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if r > 1e-3 && r <= 1.0 {
            return v.into_iter().map(|x| x / r).collect();
        }
    }
}

/// Samples the size and Hölder-alpha constants of `kernel`. The Hölder
/// quotient is evaluated with both orderings of each pair and only for
/// `|x - y| <= max_offset <= 1`.
pub fn check_kernel_conditions<T: Scalar, F: Fn(&[T]) -> T>(
    kernel: F,
    n: usize,
    alpha: T,
    spec: &SampleSpec,
    seed: u64,
) -> Result<KernelConditionReport<T>> {
    if spec.samples == 0 || !(spec.radius_min > 0.0 && spec.radius_min <= spec.radius_max) {
        return Err(domain("invalid kernel sample specification"));
    }
    if !(spec.max_offset > 0.0 && spec.max_offset <= 1.0) {
        return Err(domain("pair offsets must lie in (0, 1]"));
    }
    let mut rng = stream(seed, 0);
    let decay = T::from_usize_lossy(n) + alpha;
    let weight = |x: &[T]| (T::one() + norm_sq(x).sqrt()).powf(decay);
    let mut size = T::zero();
    let mut holder = T::zero();
    for i in 0..spec.samples {
        let r = if i == 0 {
            0.0
        } else {
            crate::rng::log_uniform(&mut rng, spec.radius_min, spec.radius_max)
        };
        let x: Vec<T> = random_unit(&mut rng, n)
            .iter()
            .map(|&d| T::lit(d * r))
            .collect();
        let h = rng.gen_range(0.0..spec.max_offset).max(1e-9);
        let y: Vec<T> = random_unit(&mut rng, n)
            .iter()
            .zip(&x)
            .map(|(&d, &xi)| xi + T::lit(d * h))
            .collect();
        let kx = kernel(&x);
        let ky = kernel(&y);
        size = size.max(kx.abs() * weight(&x)).max(ky.abs() * weight(&y));
        let gap = crate::scalar::dist(&x, &y);
        let w = weight(&x).max(weight(&y));
        holder = holder.max((kx - ky).abs() * w / gap.powf(alpha));
    }
    Ok(KernelConditionReport { size, holder })
}
