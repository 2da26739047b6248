//! Atomic measures, functions sampled at their atoms, and Poisson terms.

use std::path::Path;

use crate::error::{check_dim, domain, Error, Result};
use crate::geometry::Cube;
use crate::scalar::{dist_sq, Scalar};

/// Finite sum of point masses `sum_i m_i delta_{z_i}`.
#[derive(Clone, Debug, PartialEq)]
pub struct AtomicMeasure<T> {
    dim: usize,
    positions: Vec<Vec<T>>,
    masses: Vec<T>,
}

impl<T: Scalar> AtomicMeasure<T> {
    pub fn new(dim: usize, atoms: Vec<(Vec<T>, T)>) -> Result<Self> {
        if dim == 0 {
            return Err(domain("measure dimension must be at least 1"));
        }
        let mut positions = Vec::with_capacity(atoms.len());
        let mut masses = Vec::with_capacity(atoms.len());
        for (i, (z, m)) in atoms.into_iter().enumerate() {
            check_dim(dim, z.len())?;
            if z.iter().any(|c| !c.is_finite()) {
                return Err(domain(format!("atom {i} has a non-finite position")));
            }
            if !(m > T::zero()) || !m.is_finite() {
                return Err(domain(format!("atom {i} has non-positive mass {m}")));
            }
            if positions.iter().any(|p: &Vec<T>| p == &z) {
                return Err(domain(format!("atom {i} repeats an earlier position")));
            }
            positions.push(z);
            masses.push(m);
        }
        Ok(Self {
            dim,
            positions,
            masses,
        })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            positions: Vec::new(),
            masses: Vec::new(),
        }
    }

    /// Parses the `x1,...,xn,mass` CSV format; `#` lines are comments.
    pub fn parse_csv(text: &str, source: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(text.as_bytes());
        let mut atoms = Vec::new();
        let mut dim = None;
        for record in reader.records() {
            let record = record.map_err(|e| Error::Parse {
                path: source.to_string(),
                line: e.position().map_or(0, |p| p.line() as usize),
                msg: e.to_string(),
            })?;
            let line = record.position().map_or(0, |p| p.line() as usize);
            let parse_err = |msg: String| Error::Parse {
                path: source.to_string(),
                line,
                msg,
            };
            if record.iter().all(|f| f.is_empty()) {
                continue;
            }
            let values = record
                .iter()
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|e| parse_err(format!("`{f}`: {e}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            if values.len() < 2 {
                return Err(parse_err(
                    "expected at least one coordinate and a mass".into(),
                ));
            }
            let n = values.len() - 1;
            match dim {
                None => dim = Some(n),
                Some(d) if d != n => {
                    return Err(parse_err(format!("expected {d} coordinates, found {n}")))
                }
                _ => {}
            }
            let mass = values[n];
            if !(mass > 0.0) || !mass.is_finite() {
                return Err(parse_err(format!("mass must be positive, got {mass}")));
            }
            atoms.push((
                values[..n].iter().map(|&x| T::lit(x)).collect(),
                T::lit(mass),
            ));
        }
        let dim = dim.ok_or_else(|| Error::Parse {
            path: source.to_string(),
            line: 0,
            msg: "no atoms".into(),
        })?;
        Self::new(dim, atoms).map_err(|e| Error::Parse {
            path: source.to_string(),
            line: 0,
            msg: e.to_string(),
        })
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse_csv(&text, &path.display().to_string())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (z, m) in self.positions.iter().zip(&self.masses) {
            for c in z {
                out.push_str(&format!("{},", c.as_f64()));
            }
            out.push_str(&format!("{}\n", m.as_f64()));
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn positions(&self) -> &[Vec<T>] {
        &self.positions
    }

    pub fn masses(&self) -> &[T] {
        &self.masses
    }

    pub fn position(&self, i: usize) -> &[T] {
        &self.positions[i]
    }

    pub fn mass(&self, i: usize) -> T {
        self.masses[i]
    }

    pub fn total_mass(&self) -> T {
        self.masses.iter().copied().sum()
    }

    /// Indices of atoms inside the half-open cube.
    pub fn atoms_in(&self, q: &Cube<T>) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| q.contains(&self.positions[i]))
            .collect()
    }

    /// Exact `m(Q)`.
    pub fn mass_on(&self, q: &Cube<T>) -> Result<T> {
        check_dim(self.dim, q.dim())?;
        Ok(self
            .positions
            .iter()
            .zip(&self.masses)
            .filter(|(z, _)| q.contains(z))
            .map(|(_, &m)| m)
            .sum())
    }

    /// `1_Q m`.
    pub fn restrict(&self, q: &Cube<T>) -> Self {
        let keep = self.atoms_in(q);
        Self {
            dim: self.dim,
            positions: keep.iter().map(|&i| self.positions[i].clone()).collect(),
            masses: keep.iter().map(|&i| self.masses[i]).collect(),
        }
    }

    pub fn scaled(&self, c: T) -> Result<Self> {
        if !(c > T::zero()) {
            return Err(domain("mass scale must be positive"));
        }
        Ok(Self {
            dim: self.dim,
            positions: self.positions.clone(),
            masses: self.masses.iter().map(|&m| m * c).collect(),
        })
    }

    pub fn translated(&self, v: &[T]) -> Result<Self> {
        check_dim(self.dim, v.len())?;
        Ok(Self {
            dim: self.dim,
            positions: self
                .positions
                .iter()
                .map(|z| z.iter().zip(v).map(|(&a, &b)| a + b).collect())
                .collect(),
            masses: self.masses.clone(),
        })
    }

    /// Componentwise bounds of the atom positions, if any.
    pub fn bounding_box(&self) -> Option<(Vec<T>, Vec<T>)> {
        let first = self.positions.first()?;
        let mut lo = first.clone();
        let mut hi = first.clone();
        for z in &self.positions[1..] {
            for i in 0..self.dim {
                lo[i] = lo[i].min(z[i]);
                hi[i] = hi[i].max(z[i]);
            }
        }
        Some((lo, hi))
    }
}

/// Values of a function at the atoms of its base measure.
#[derive(Clone, Debug)]
pub struct SampledFunction<'a, T> {
    base: &'a AtomicMeasure<T>,
    values: Vec<T>,
}

impl<'a, T: Scalar> SampledFunction<'a, T> {
    pub fn new(base: &'a AtomicMeasure<T>, values: Vec<T>) -> Result<Self> {
        if values.len() != base.len() {
            return Err(domain(format!(
                "function has {} values for a measure with {} atoms",
                values.len(),
                base.len()
            )));
        }
        Ok(Self { base, values })
    }

    pub fn constant(base: &'a AtomicMeasure<T>, c: T) -> Self {
        Self {
            base,
            values: vec![c; base.len()],
        }
    }

    pub fn base(&self) -> &'a AtomicMeasure<T> {
        self.base
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn is_based_on(&self, m: &AtomicMeasure<T>) -> bool {
        std::ptr::eq(self.base, m) || self.base == m
    }

    pub fn ensure_base(&self, m: &AtomicMeasure<T>) -> Result<()> {
        if self.is_based_on(m) {
            Ok(())
        } else {
            Err(domain(
                "function is not defined on the atoms of this measure",
            ))
        }
    }

    /// `a f + b g`.
    pub fn combine(&self, a: T, other: &SampledFunction<'a, T>, b: T) -> Result<Self> {
        other.ensure_base(self.base)?;
        Ok(Self {
            base: self.base,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&x, &y)| a * x + b * y)
                .collect(),
        })
    }

    /// Coefficients `f_i m_i` of the signed measure `f m`.
    pub fn weighted(&self) -> Vec<T> {
        self.values
            .iter()
            .zip(self.base.masses())
            .map(|(&f, &m)| f * m)
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Integrals<T> {
    pub integral: T,
    pub square: T,
    pub abs: T,
}

/// `(int f dm, int f^2 dm, int |f| dm)` as exact sums.
pub fn expectation_integrals<T: Scalar>(
    f: &SampledFunction<'_, T>,
    m: &AtomicMeasure<T>,
) -> Result<Integrals<T>> {
    f.ensure_base(m)?;
    let mut out = Integrals {
        integral: T::zero(),
        square: T::zero(),
        abs: T::zero(),
    };
    for (&v, &w) in f.values().iter().zip(m.masses()) {
        out.integral += v * w;
        out.square += v * v * w;
        out.abs += v.abs() * w;
    }
    Ok(out)
}

/// Squared distance from a point to the closed cube.
fn cube_dist_sq<T: Scalar>(q: &Cube<T>, z: &[T]) -> T {
    let d = q.dist_to_point(z);
    d * d
}

/// `P_alpha(I, 1_S m) = sum_{z in S} m_z l(I)^alpha / (l(I) + dist(z, I))^(n+alpha)`.
pub fn poisson_term<T: Scalar>(
    i: &Cube<T>,
    m: &AtomicMeasure<T>,
    restriction: Option<&Cube<T>>,
    alpha: T,
) -> Result<T> {
    poisson_term_weighted(i, m, None, restriction, alpha)
}

/// Poisson term of `g m` for nonnegative weights `g` at the atoms.
pub fn poisson_term_weighted<T: Scalar>(
    i: &Cube<T>,
    m: &AtomicMeasure<T>,
    weights: Option<&[T]>,
    restriction: Option<&Cube<T>>,
    alpha: T,
) -> Result<T> {
    if !(alpha > T::zero() && alpha <= T::one()) {
        return Err(domain(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    check_dim(m.dim(), i.dim())?;
    if let Some(r) = restriction {
        check_dim(m.dim(), r.dim())?;
    }
    if let Some(w) = weights {
        if w.len() != m.len() {
            return Err(domain("weight count differs from atom count"));
        }
    }
    let l = i.side();
    let num = l.powf(alpha);
    let decay = T::from_usize_lossy(m.dim()) + alpha;
    let mut acc = T::zero();
    for (k, (z, &mass)) in m.positions().iter().zip(m.masses()).enumerate() {
        if restriction.is_some_and(|r| !r.contains(z)) {
            continue;
        }
        let g = weights.map_or(T::one(), |w| w[k].abs());
        acc += g * mass * num / (l + cube_dist_sq(i, z).sqrt()).powf(decay);
    }
    Ok(acc)
}

/// A pair `(sigma, w)` of atomic weights on the same space.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightPair<T> {
    pub sigma: AtomicMeasure<T>,
    pub w: AtomicMeasure<T>,
    pub disjoint_support: bool,
}

impl<T: Scalar> WeightPair<T> {
    pub fn new(
        sigma: AtomicMeasure<T>,
        w: AtomicMeasure<T>,
        disjoint_support: bool,
    ) -> Result<Self> {
        check_dim(sigma.dim(), w.dim())?;
        let pair = Self {
            sigma,
            w,
            disjoint_support,
        };
        if disjoint_support && pair.has_coincident_atoms() {
            return Err(domain(
                "disjoint support requested but a sigma atom coincides with a w atom",
            ));
        }
        Ok(pair)
    }

    pub fn dim(&self) -> usize {
        self.sigma.dim()
    }

    pub fn has_coincident_atoms(&self) -> bool {
        self.sigma.positions().iter().any(|z| {
            self.w
                .positions()
                .iter()
                .any(|x| dist_sq(x, z) == T::zero())
        })
    }

    pub fn with_w(&self, w: AtomicMeasure<T>) -> Result<Self> {
        Self::new(self.sigma.clone(), w, self.disjoint_support)
    }

    /// Bounding box of all atoms of both measures.
    pub fn bounding_box(&self) -> Option<(Vec<T>, Vec<T>)> {
        match (self.sigma.bounding_box(), self.w.bounding_box()) {
            (Some((a, b)), Some((c, d))) => Some((
                a.iter().zip(&c).map(|(&x, &y)| x.min(y)).collect(),
                b.iter().zip(&d).map(|(&x, &y)| x.max(y)).collect(),
            )),
            (s, w) => s.or(w),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn line(atoms: &[(f64, f64)]) -> AtomicMeasure<f64> {
        AtomicMeasure::new(1, atoms.iter().map(|&(x, m)| (vec![x], m)).collect()).unwrap()
    }

    fn cube(lo: f64, side: f64) -> Cube<f64> {
        Cube::new(vec![lo], side).unwrap()
    }

    #[test]
    fn mass_on_half_open_cubes() {
        let m = line(&[(0.25, 1.0), (0.75, 3.0)]);
        assert_eq!(m.mass_on(&cube(0.0, 1.0)).unwrap(), 4.0);
        assert_eq!(m.mass_on(&cube(0.5, 0.5)).unwrap(), 3.0);
        let edge = line(&[(1.0, 2.0)]);
        assert_eq!(edge.mass_on(&cube(0.0, 1.0)).unwrap(), 0.0);
        let q2 = Cube::new(vec![0.0, 0.0], 1.0).unwrap();
        assert!(m.mass_on(&q2).is_err());
    }

    #[test]
    fn integrals_examples() {
        let m = line(&[(0.25, 1.0), (0.75, 3.0)]);
        let f = SampledFunction::new(&m, vec![2.0, 6.0]).unwrap();
        let r = expectation_integrals(&f, &m).unwrap();
        assert_eq!(r.integral, 20.0);
        assert_eq!(r.square, 112.0);
        assert_eq!(r.abs, 20.0);
        let e = AtomicMeasure::<f64>::empty(1);
        let g = SampledFunction::new(&e, vec![]).unwrap();
        let z = expectation_integrals(&g, &e).unwrap();
        assert_eq!((z.integral, z.square, z.abs), (0.0, 0.0, 0.0));
        let other = line(&[(0.5, 1.0), (0.6, 1.0)]);
        assert!(expectation_integrals(&f, &other).is_err());
    }

    #[test]
    fn poisson_term_examples() {
        let i = cube(0.0, 1.0);
        let far = line(&[(3.0, 1.0)]);
        assert_relative_eq!(poisson_term(&i, &far, None, 1.0).unwrap(), 1.0 / 9.0);
        let big = Cube::new(vec![0.0], 2.0).unwrap();
        let inside = line(&[(0.5, 5.0)]);
        assert_relative_eq!(poisson_term(&big, &inside, None, 0.5).unwrap(), 2.5);
        let both = line(&[(3.0, 1.0), (0.5, 5.0)]);
        let sum = poisson_term(&i, &far, None, 1.0).unwrap()
            + poisson_term(&i, &line(&[(0.5, 5.0)]), None, 1.0).unwrap();
        assert_relative_eq!(poisson_term(&i, &both, None, 1.0).unwrap(), sum);
        assert_relative_eq!(
            poisson_term(&i, &both, Some(&cube(2.0, 2.0)), 1.0).unwrap(),
            1.0 / 9.0
        );
        assert!(poisson_term(&i, &far, None, 1.5).is_err());
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let text = "# sigma\n0.25, 1\n0.75,3\n\n";
        let m = AtomicMeasure::<f64>::parse_csv(text, "mem").unwrap();
        assert_eq!(m, line(&[(0.25, 1.0), (0.75, 3.0)]));
        let again = AtomicMeasure::<f64>::parse_csv(&m.to_csv(), "mem").unwrap();
        assert_eq!(again, m);
        let bad = AtomicMeasure::<f64>::parse_csv("0.1,1\n0.2,-1\n", "bad.csv").unwrap_err();
        assert!(bad.to_string().contains("bad.csv:2"), "{bad}");
        assert!(AtomicMeasure::<f64>::parse_csv("0.1,0.2,1\n0.3,1\n", "x").is_err());
    }

    #[test]
    fn coincident_atoms_rejected_when_disjoint() {
        let s = line(&[(0.0, 1.0)]);
        let w = line(&[(0.0, 2.0)]);
        assert!(WeightPair::new(s.clone(), w.clone(), true).is_err());
        let pair = WeightPair::new(s, w, false).unwrap();
        assert!(pair.has_coincident_atoms());
    }
}
