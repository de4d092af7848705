//! Machine-readable documents and CSV output.
//!
//! Complex numbers are written as `[re, im]` pairs. Floats use Rust's
//! shortest round-trip formatting, so identical inputs give identical bytes.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::characteristics::{AssumptionSums, StarCharacteristic, TailCertificate};
use crate::constants::{CertifiedSum, NormalizationCase, TheoreticalConstants};
use crate::linalg::{CMat, CRow, C64};
use crate::model::ValidationReport;
use crate::simulator::ReplicateResult;
use crate::spectral::{EigenClass, Residuals, SpectralData};
use crate::stats::{mean, variance};

pub const REPORT_SCHEMA: u32 = 1;
pub const CSV_HEADER: &str = "index,survived,w_hat,zphi_re,zphi_im,t_re,t_im";

pub fn pair(z: C64) -> [f64; 2] {
    [z.re, z.im]
}

pub fn row_pairs(r: &CRow) -> Vec<[f64; 2]> {
    r.iter().map(|z| pair(*z)).collect()
}

pub fn matrix_pairs(m: &CMat) -> Vec<Vec<[f64; 2]>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| pair(m[(i, j)])).collect())
        .collect()
}

#[derive(Debug, Serialize)]
pub struct EigenvalueEntry {
    pub value: [f64; 2],
    pub modulus: f64,
    pub multiplicity: usize,
    pub nilpotent_index: usize,
    pub class: EigenClass,
    pub margin: f64,
}

#[derive(Debug, Serialize)]
pub struct AnalyzeReport {
    pub schema: u32,
    pub rho: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub eigenvalues: Vec<EigenvalueEntry>,
    pub classes: Vec<EigenClass>,
    pub theta: f64,
    pub theta_constant: f64,
    pub delta: f64,
    pub delta_constant: f64,
    pub tolerance: f64,
    pub residuals: Residuals,
    pub assumptions: ValidationReport,
    pub characteristic: Option<AssumptionSums>,
    pub assumptions_hold: bool,
}

impl AnalyzeReport {
    pub fn new(
        spectral: &SpectralData,
        assumptions: ValidationReport,
        sums: Option<AssumptionSums>,
    ) -> Self {
        let eigenvalues: Vec<EigenvalueEntry> = spectral
            .clusters
            .iter()
            .map(|c| EigenvalueEntry {
                value: pair(c.value),
                modulus: c.value.norm(),
                multiplicity: c.multiplicity,
                nilpotent_index: c.nilpotent_index,
                class: c.class,
                margin: c.margin,
            })
            .collect();
        let mut classes: Vec<EigenClass> = eigenvalues.iter().map(|e| e.class).collect();
        classes.dedup();
        Self {
            schema: REPORT_SCHEMA,
            rho: spectral.rho,
            u: spectral.u.clone(),
            v: spectral.v.clone(),
            eigenvalues,
            classes,
            theta: spectral.theta,
            theta_constant: spectral.theta_constant,
            delta: spectral.delta,
            delta_constant: spectral.delta_constant,
            tolerance: spectral.tol,
            residuals: spectral.residuals.clone(),
            assumptions_hold: assumptions.all_hold(),
            assumptions,
            characteristic: sums,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct ConstantsReport {
    pub schema: u32,
    pub case: String,
    pub rate: String,
    pub x1: Vec<[f64; 2]>,
    pub x2: Vec<[f64; 2]>,
    /// `sigma_l^2` for `l = 0..=J`.
    pub sigma_l: Vec<f64>,
    pub l_star: Option<usize>,
    pub sigma2: CertifiedSum,
    pub sigma_star2: Option<CertifiedSum>,
    pub b_table: BTreeMap<i64, Vec<[f64; 2]>>,
    /// `sum_k E Phi(k) rho^-k u`.
    pub lln_constant: [f64; 2],
    pub assumption_sums: AssumptionSums,
}

impl ConstantsReport {
    pub fn new(constants: &TheoreticalConstants, lln: C64, sums: AssumptionSums) -> Self {
        let rate = match constants.case {
            NormalizationCase::Critical { l_star } => format!("n^({l_star}+1/2) rho^(n/2)"),
            _ => "rho^(n/2)".into(),
        };
        Self {
            schema: REPORT_SCHEMA,
            case: constants.case.label(),
            rate,
            x1: row_pairs(&constants.x1),
            x2: row_pairs(&constants.x2),
            sigma_l: constants.sigma_l.clone(),
            l_star: constants.l_star,
            sigma2: constants.sigma2.clone(),
            sigma_star2: constants.sigma_star2.clone(),
            b_table: constants
                .b_table
                .iter()
                .map(|(k, r)| (*k, row_pairs(r)))
                .collect(),
            lln_constant: pair(lln),
            assumption_sums: sums,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct SimulationSummary {
    pub schema: u32,
    pub case: String,
    pub n: u32,
    pub horizon: u32,
    pub replicates: usize,
    pub seed: u64,
    pub aborted: usize,
    pub abort_rate: f64,
    pub abort_warning: bool,
    pub survivors: usize,
    pub w_min: f64,
    pub mean_w_hat: f64,
    pub se_w_hat: f64,
    pub expected_w: f64,
}

impl SimulationSummary {
    pub fn new(
        results: &[ReplicateResult],
        constants: &TheoreticalConstants,
        spectral: &SpectralData,
        initial_type: usize,
        seed: u64,
        n: u32,
        horizon: u32,
        w_min: f64,
    ) -> Self {
        let aborted = results.iter().filter(|r| r.aborted.is_some()).count();
        let ws: Vec<f64> = results
            .iter()
            .filter(|r| r.aborted.is_none())
            .map(|r| r.w_hat)
            .collect();
        let (mean_w_hat, se_w_hat) = if ws.len() >= 2 {
            (mean(&ws), (variance(&ws) / ws.len() as f64).sqrt())
        } else {
            (f64::NAN, f64::NAN)
        };
        let abort_rate = aborted as f64 / results.len().max(1) as f64;
        Self {
            schema: REPORT_SCHEMA,
            case: constants.case.label(),
            n,
            horizon,
            replicates: results.len(),
            seed,
            aborted,
            abort_rate,
            abort_warning: abort_rate > 0.01,
            survivors: crate::stats::survivors(results, w_min).len(),
            w_min,
            mean_w_hat,
            se_w_hat,
            expected_w: spectral.v[initial_type],
        }
    }
}

/// Writes one CSV record per replicate.
pub fn write_replicates_csv<W: Write>(
    out: &mut W,
    results: &[ReplicateResult],
) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in results {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.index,
            u8::from(r.survived),
            r.w_hat,
            r.zphi.re,
            r.zphi.im,
            r.t_stat.re,
            r.t_stat.im
        )?;
    }
    Ok(())
}

/// Histogram of residuals on `bins` equal-width bins over `[-range, range]`.
pub fn write_histogram_csv<W: Write>(
    out: &mut W,
    residuals: &[f64],
    bins: usize,
    range: f64,
) -> std::io::Result<()> {
    let width = 2.0 * range / bins as f64;
    let mut counts = vec![0u64; bins];
    let mut outside = 0u64;
    for &x in residuals {
        let idx = ((x + range) / width).floor();
        if idx >= 0.0 && (idx as usize) < bins {
            counts[idx as usize] += 1;
        } else {
            outside += 1;
        }
    }
    writeln!(out, "lower,upper,count,density")?;
    let total = residuals.len().max(1) as f64;
    for (i, c) in counts.iter().enumerate() {
        let lower = -range + i as f64 * width;
        writeln!(
            out,
            "{},{},{},{}",
            lower,
            lower + width,
            c,
            *c as f64 / (total * width)
        )?;
    }
    writeln!(out, "# outside range: {outside}")?;
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct StarCheckEntry {
    pub name: String,
    pub paths: usize,
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Serialize)]
pub struct StarSummary {
    pub selector: crate::characteristics::ProjectionSelector,
    pub tail: TailCertificate,
    pub square_sum: Option<f64>,
    pub rows: usize,
}

impl StarSummary {
    pub fn new(star: &StarCharacteristic) -> Self {
        Self {
            selector: star.selector,
            tail: star.tail.clone(),
            square_sum: star.square_sum,
            rows: star.rows.len(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct StarCheckReport {
    pub schema: u32,
    pub checks: Vec<StarCheckEntry>,
    pub transforms: Vec<StarSummary>,
    pub passed: bool,
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}
