//! Parameter sweeps of the constants and the good-cube probability table.

use serde::Serialize;

use crate::config::{RunConfig, SweepConfig};
use crate::constants::equivalence_report;
use crate::error::Result;
use crate::geometry::{estimate_pi_good, GoodBadParams, GridTemplate, ReferenceCube};
use crate::kernels::KernelParams;
use crate::measures::WeightPair;

/// One `(lambda, alpha, shift)` point of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub alpha: f64,
    pub shift: f64,
    pub a2: Option<f64>,
    pub sqrt_b: Option<f64>,
    pub pivotal: Option<f64>,
    pub n_norm: Option<f64>,
    pub ratio: Option<f64>,
    pub status: String,
}

fn values_or(v: &[f64], fallback: f64) -> Vec<f64> {
    if v.is_empty() {
        vec![fallback]
    } else {
        v.to_vec()
    }
}

/// Constants of `pair` over the sweep grid. Invalid kernel parameters give a
/// row whose status names the violated constraint.
pub fn sweep(pair: &WeightPair<f64>, cfg: &RunConfig, sw: &SweepConfig) -> Result<Vec<SweepRow>> {
    let n = cfg.kernel.n;
    let mut rows = Vec::new();
    for &lambda in &values_or(&sw.lambdas, cfg.kernel.lambda) {
        for &alpha in &values_or(&sw.alphas, cfg.kernel.alpha) {
            for &shift in &values_or(&sw.w_shifts, 0.0) {
                let mut row = SweepRow {
                    lambda,
                    alpha,
                    shift,
                    a2: None,
                    sqrt_b: None,
                    pivotal: None,
                    n_norm: None,
                    ratio: None,
                    status: "ok".into(),
                };
                if let Err(e) = KernelParams::new(n, lambda, alpha) {
                    row.status = format!("invalid: {e}");
                    rows.push(row);
                    continue;
                }
                let mut local = cfg.clone();
                local.kernel.lambda = lambda;
                local.kernel.alpha = alpha;
                let mut v = vec![0.0; n];
                v[0] = shift;
                let shifted = pair.with_w(pair.w.translated(&v)?)?;
                let report = equivalence_report(&shifted, &local.constants_config()?)?;
                row.a2 = Some(report.a2);
                row.sqrt_b = Some(report.sqrt_b);
                row.pivotal = report.pivotal;
                row.n_norm = report.n_norm.is_finite().then_some(report.n_norm);
                row.ratio = report.ratios.n_over_a2_plus_sqrt_b;
                if !report.warnings.is_empty() {
                    row.status = report.warnings.join("; ");
                }
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

/// Good-cube probability of one reference cube.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PiGoodRow {
    pub level: i32,
    pub index: String,
    pub probability: f64,
    pub halfwidth: f64,
    pub samples: usize,
}

/// `pi_good` for the origin cube and one offset cube at every level that
/// admits a bad ancestor.
pub fn grid_stats(
    template: &GridTemplate,
    gb: &GoodBadParams<f64>,
    samples: usize,
    seed: u64,
) -> Result<Vec<PiGoodRow>> {
    let mut rows = Vec::new();
    let mut stream_id = 0u64;
    for level in template.min_level..=template.max_level {
        for offset in [0i64, 3] {
            let index = vec![offset; template.dim];
            let reference = ReferenceCube {
                level,
                index: index.clone(),
            };
            let est = estimate_pi_good::<f64>(
                template,
                &reference,
                gb,
                samples,
                seed.wrapping_add(stream_id),
            )?;
            stream_id += 1;
            rows.push(PiGoodRow {
                level,
                index: index
                    .iter()
                    .map(|i| i.to_string())
                    .collect::<Vec<_>>()
                    .join(" "),
                probability: est.probability,
                halfwidth: est.halfwidth,
                samples: est.samples,
            });
        }
    }
    Ok(rows)
}

/// Serializes rows as CSV with a header line.
pub fn to_csv<R: Serialize>(rows: &[R]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)
            .map_err(|e| crate::Error::Config(format!("csv: {e}")))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| crate::Error::Config(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
