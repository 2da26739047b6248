//! JSON run configuration. Every section is optional; unknown keys are
//! rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::constants::{ConstantsConfig, NormMethod, DEFAULT_DILATIONS};
use crate::error::{Error, Result};
use crate::geometry::{GoodBadParams, ShiftedGrid};
use crate::kernels::KernelParams;
use crate::measures::{AtomicMeasure, WeightPair};
use crate::quadrature::QuadratureSpec;

/// Largest supported dimension.
pub const MAX_DIM: usize = 3;

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub kernel: KernelConfig,
    pub grid: GridConfig,
    pub quadrature: QuadratureConfig,
    pub sigma_file: Option<PathBuf>,
    pub w_file: Option<PathBuf>,
    pub checks: Vec<CheckSpec>,
    pub stopping: StoppingConfig,
    pub sweep: Option<SweepConfig>,
    pub constants: ConstantsOptions,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelConfig {
    pub n: usize,
    pub lambda: f64,
    pub alpha: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            n: 1,
            lambda: 4.0,
            alpha: 1.0,
        }
    }
}

impl KernelConfig {
    pub fn params(&self) -> Result<KernelParams<f64>> {
        if self.n > MAX_DIM {
            return Err(Error::Config(format!(
                "kernel.n = {} exceeds the supported maximum {MAX_DIM}",
                self.n
            )));
        }
        KernelParams::new(self.n, self.lambda, self.alpha)
            .map_err(|e| Error::Config(format!("kernel: {e}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// Must equal `kernel.n` when given.
    pub n: Option<usize>,
    pub r: u32,
    /// Defaults to `alpha / (2 (n + alpha))`.
    pub gamma: Option<f64>,
    /// Finest cube side is `2^scale_min_exp`.
    pub scale_min_exp: i32,
    pub scale_max_exp: i32,
    /// Random dyadic shifts from this seed; the standard grid when absent.
    pub seed: Option<u64>,
    /// Defaults to the smallest dilation allowed by the overlap constraint.
    #[serde(rename = "overlap_C")]
    pub overlap_c: Option<f64>,
    /// Cap of the OVERLAP check unless the check sets its own.
    pub overlap_cap: Option<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            n: None,
            r: 3,
            gamma: None,
            scale_min_exp: -12,
            scale_max_exp: 0,
            seed: None,
            overlap_c: None,
            overlap_cap: None,
        }
    }
}

impl GridConfig {
    pub fn grid(&self, n: usize) -> Result<ShiftedGrid<f64>> {
        if let Some(m) = self.n {
            if m != n {
                return Err(Error::Config(format!(
                    "grid.n = {m} differs from kernel.n = {n}"
                )));
            }
        }
        let g = match self.seed {
            Some(seed) => ShiftedGrid::random(n, self.scale_min_exp, self.scale_max_exp, seed),
            None => ShiftedGrid::standard(n, self.scale_min_exp, self.scale_max_exp),
        };
        g.map_err(|e| Error::Config(format!("grid: {e}")))
    }

    pub fn goodbad(&self, p: &KernelParams<f64>) -> Result<GoodBadParams<f64>> {
        let gamma = self
            .gamma
            .unwrap_or_else(|| crate::geometry::default_gamma(p));
        let c = self
            .overlap_c
            .unwrap_or_else(|| GoodBadParams::min_overlap_c(p) * (1.0 + 1e-12));
        GoodBadParams::new(self.r, gamma, c).map_err(|e| Error::Config(format!("grid: {e}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadratureConfig {
    pub tol: f64,
    pub t_ratio: f64,
    pub min_slabs: usize,
    pub max_slabs: usize,
    pub y_radius_factor: f64,
    pub max_depth: u32,
    pub order: usize,
    pub grading: f64,
    pub max_cells: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        let s = QuadratureSpec::<f64>::default();
        Self {
            tol: s.tol,
            t_ratio: s.t_ratio,
            min_slabs: s.min_slabs,
            max_slabs: s.max_slabs,
            y_radius_factor: s.y_radius_factor,
            max_depth: s.max_depth,
            order: s.order,
            grading: s.grading,
            max_cells: s.max_cells,
        }
    }
}

impl QuadratureConfig {
    pub fn spec(&self) -> Result<QuadratureSpec<f64>> {
        let s = QuadratureSpec {
            tol: self.tol,
            t_ratio: self.t_ratio,
            min_slabs: self.min_slabs,
            max_slabs: self.max_slabs,
            y_radius_factor: self.y_radius_factor,
            max_depth: self.max_depth,
            order: self.order,
            grading: self.grading,
            max_cells: self.max_cells,
            features: Vec::new(),
        };
        s.validate()
            .map_err(|e| Error::Config(format!("quadrature: {e}")))?;
        Ok(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckSpec {
    pub id: String,
    #[serde(default)]
    pub instances: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Upper bound on the largest per-instance ratio; `None` keeps the default.
    #[serde(default)]
    pub cap: Option<f64>,
    /// Kernel for this check only.
    #[serde(default)]
    pub kernel: Option<KernelConfig>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StoppingConfig {
    pub c0: f64,
}

impl Default for StoppingConfig {
    fn default() -> Self {
        Self { c0: 4.0 }
    }
}

/// Empty lists stand for the kernel's value (a zero shift for `w_shifts`).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub lambdas: Vec<f64>,
    pub alphas: Vec<f64>,
    /// Translations of the w atoms along the first axis.
    pub w_shifts: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstantsOptions {
    pub dilations: Vec<f64>,
    pub method: NormMethod,
    pub gram_cap: usize,
    pub partition_depth: u32,
    pub partition_seed: u64,
    pub c_nec: Option<f64>,
    /// Reject pairs where a sigma atom coincides with a w atom.
    pub disjoint_support: bool,
}

impl Default for ConstantsOptions {
    fn default() -> Self {
        Self {
            dilations: DEFAULT_DILATIONS.to_vec(),
            method: NormMethod::Dense,
            gram_cap: 200,
            partition_depth: 4,
            partition_seed: 0,
            c_nec: None,
            disjoint_support: false,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file; relative measure paths are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_json(&text)?;
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        for p in [&mut cfg.sigma_file, &mut cfg.w_file].into_iter().flatten() {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Checks every section that can be checked without running anything.
    pub fn validate(&self) -> Result<()> {
        let p = self.kernel.params()?;
        self.grid.grid(p.n())?;
        self.grid.goodbad(&p)?;
        self.quadrature.spec()?;
        for c in &self.checks {
            if let Some(k) = c.kernel {
                k.params()?;
            }
            if c.cap.is_some_and(|v| !(v > 0.0)) {
                return Err(Error::Config(format!(
                    "check {}: cap must be positive",
                    c.id
                )));
            }
        }
        if !(self.stopping.c0 > 0.0) {
            return Err(Error::Config("stopping.c0 must be positive".into()));
        }
        if self.constants.dilations.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::Config("constants.dilations must be positive".into()));
        }
        Ok(())
    }

    /// The pair named by `sigma_file` and `w_file`.
    pub fn weight_pair(&self) -> Result<WeightPair<f64>> {
        let (Some(s), Some(w)) = (&self.sigma_file, &self.w_file) else {
            return Err(Error::Config("sigma_file and w_file are required".into()));
        };
        let sigma = AtomicMeasure::read_csv(s)?;
        let w = AtomicMeasure::read_csv(w)?;
        let n = self.kernel.n;
        if sigma.dim() != n || w.dim() != n {
            return Err(Error::Config(format!(
                "measure dimension ({}, {}) differs from kernel.n = {n}",
                sigma.dim(),
                w.dim()
            )));
        }
        WeightPair::new(sigma, w, self.constants.disjoint_support)
    }

    pub fn constants_config(&self) -> Result<ConstantsConfig> {
        let kernel = self.kernel.params()?;
        Ok(ConstantsConfig {
            kernel,
            quadrature: self.quadrature.spec()?,
            grid: self.grid.grid(kernel.n())?,
            goodbad: self.grid.goodbad(&kernel)?,
            dilations: self.constants.dilations.clone(),
            method: self.constants.method,
            gram_cap: self.constants.gram_cap,
            partition_depth: self.constants.partition_depth,
            partition_seed: self.constants.partition_seed,
            c_nec: self.constants.c_nec,
        })
    }
}
