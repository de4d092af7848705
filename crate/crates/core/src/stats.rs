//! Statistical verdicts on replicate batches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::characteristics::Characteristic;
use crate::constants::{lln_constant, NormalizationCase, TheoreticalConstants};
use crate::error::{Error, Result};
use crate::simulator::ReplicateResult;
use crate::spectral::SpectralData;

pub const MIN_KS_SAMPLE: usize = 50;
const KOLMOGOROV_TERMS: usize = 100;
/// Two-sided 99% normal quantile used for correlation intervals.
const CI_Z: f64 = 2.576;

#[derive(Clone, Copy, Debug, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// `P(K > lambda)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let p = if lambda < 1.18 {
        // Jacobi theta form, fast for small lambda.
        let pi2 = std::f64::consts::PI.powi(2);
        let s: f64 = (1..=KOLMOGOROV_TERMS)
            .map(|k| {
                let m = (2 * k - 1) as f64;
                (-m * m * pi2 / (8.0 * lambda * lambda)).exp()
            })
            .sum();
        1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s
    } else {
        let s: f64 = (1..=KOLMOGOROV_TERMS)
            .map(|k| {
                let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * (k * k) as f64 * lambda * lambda).exp()
            })
            .sum();
        2.0 * s
    };
    p.clamp(0.0, 1.0)
}

/// One-sample Kolmogorov-Smirnov test against the standard normal.
pub fn ks_test(sample: &[f64]) -> Result<KsResult> {
    if sample.len() < MIN_KS_SAMPLE {
        return Err(Error::SampleTooSmall {
            got: sample.len(),
            min: MIN_KS_SAMPLE,
        });
    }
    let normal = Normal::standard();
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let statistic = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal.cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    Ok(KsResult {
        statistic,
        p_value: kolmogorov_survival(n.sqrt() * statistic),
        n: xs.len(),
    })
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, my) = (mean(xs), mean(ys));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return f64::NAN;
    }
    sxy / (sxx * syy).sqrt()
}

/// Bootstrap standard error of `statistic` over paired resamples.
pub fn bootstrap_se<F>(xs: &[f64], ys: &[f64], reps: usize, seed: u64, statistic: F) -> f64
where
    F: Fn(&[f64], &[f64]) -> f64,
{
    let n = xs.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bx = vec![0.0; n];
    let mut by = vec![0.0; n];
    let values: Vec<f64> = (0..reps)
        .map(|_| {
            for i in 0..n {
                let idx = rng.random_range(0..n);
                bx[i] = xs[idx];
                by[i] = ys.get(idx).copied().unwrap_or(0.0);
            }
            statistic(&bx, &by)
        })
        .filter(|v| v.is_finite())
        .collect();
    if values.len() < 2 {
        return f64::NAN;
    }
    variance(&values).sqrt()
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct Interval {
    pub estimate: f64,
    pub se: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    fn new(estimate: f64, se: f64, z: f64) -> Self {
        Self {
            estimate,
            se,
            lower: estimate - z * se,
            upper: estimate + z * se,
        }
    }

    pub fn covers(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Thresholds {
    pub p_min: f64,
    pub mean_band_sigmas: f64,
    pub variance_band_se: f64,
    pub correlation_z: f64,
    pub w_min: f64,
}

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    pub w_min: f64,
    pub p_min: f64,
    pub mean_band_sigmas: f64,
    pub variance_band_se: f64,
    pub bootstrap_reps: usize,
    pub bootstrap_seed: u64,
    /// Forces a case instead of the one selected by the constants.
    pub requested_case: Option<NormalizationCase>,
    /// Forces a scale constant instead of `sigma` or `sigma_{l*}`.
    pub scale_override: Option<f64>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            w_min: 1e-3,
            p_min: 0.01,
            mean_band_sigmas: 3.0,
            variance_band_se: 5.0,
            bootstrap_reps: 1000,
            bootstrap_seed: 0x5eed,
            requested_case: None,
            scale_override: None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Fail,
    Informational,
}

#[derive(Clone, Debug, Serialize)]
pub struct DegenerateCheck {
    pub spread: f64,
    pub first_half_max: f64,
    pub second_half_max: f64,
    pub monotone: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct VerificationReport {
    pub case: NormalizationCase,
    pub case_label: String,
    pub sigma_case: f64,
    pub replicates: usize,
    pub aborted: usize,
    pub survivors: usize,
    pub thresholds: Thresholds,
    pub ks: Option<KsResult>,
    pub ks_imaginary: Option<KsResult>,
    pub residual_mean: Option<Interval>,
    pub residual_variance: Option<Interval>,
    /// Variance of `T_n / sqrt(W)`, expected to equal `sigma_case^2`.
    pub scaled_variance: Option<Interval>,
    pub corr_abs_residual_w: Option<Interval>,
    pub corr_sq_residual_w: Option<Interval>,
    pub degenerate: Option<DegenerateCheck>,
    pub checks: Vec<Check>,
    pub verdict: Verdict,
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check {
        name: name.into(),
        passed,
        detail,
    }
}

/// Survivors used by the statistics: complete, alive and `W > w_min`.
pub fn survivors(results: &[ReplicateResult], w_min: f64) -> Vec<&ReplicateResult> {
    results
        .iter()
        .filter(|r| r.aborted.is_none() && r.survived && r.w_hat > w_min)
        .collect()
}

fn correlation_interval(
    xs: &[f64],
    ws: &[f64],
    opts: &VerifyOptions,
    salt: u64,
) -> Option<Interval> {
    // A W that only varies by round-off carries no information about dependence.
    if variance(ws).sqrt() <= 1e-9 * mean(ws).abs() {
        return None;
    }
    let r = pearson(xs, ws);
    if !r.is_finite() {
        return None;
    }
    let se = bootstrap_se(
        xs,
        ws,
        opts.bootstrap_reps,
        opts.bootstrap_seed ^ salt,
        pearson,
    );
    Some(Interval::new(r, se, CI_Z))
}

pub fn verify_dichotomy(
    results: &[ReplicateResult],
    constants: &TheoreticalConstants,
    real_valued: bool,
    opts: &VerifyOptions,
) -> Result<VerificationReport> {
    let case = match opts.requested_case {
        Some(NormalizationCase::Critical { .. }) if constants.l_star.is_none() => {
            return Err(Error::Refused(
                "case ii requested but every sigma_l vanishes".into(),
            ));
        }
        Some(case) => case,
        None => constants.case,
    };
    let sigma_case = opts.scale_override.unwrap_or_else(|| match case {
        NormalizationCase::Critical { l_star } => constants.sigma_l[l_star].max(0.0).sqrt(),
        _ => constants.sigma2.value.max(0.0).sqrt(),
    });
    let aborted = results.iter().filter(|r| r.aborted.is_some()).count();
    let kept = survivors(results, opts.w_min);
    let thresholds = Thresholds {
        p_min: opts.p_min,
        mean_band_sigmas: opts.mean_band_sigmas,
        variance_band_se: opts.variance_band_se,
        correlation_z: CI_Z,
        w_min: opts.w_min,
    };
    let mut report = VerificationReport {
        case,
        case_label: case.label(),
        sigma_case,
        replicates: results.len(),
        aborted,
        survivors: kept.len(),
        thresholds,
        ks: None,
        ks_imaginary: None,
        residual_mean: None,
        residual_variance: None,
        scaled_variance: None,
        corr_abs_residual_w: None,
        corr_sq_residual_w: None,
        degenerate: None,
        checks: Vec::new(),
        verdict: Verdict::Fail,
    };

    if case == NormalizationCase::Degenerate || sigma_case == 0.0 {
        let degenerate = degenerate_check(&kept);
        let spread_ok = degenerate.spread <= 1e-9 * (1.0 + degenerate.first_half_max);
        let decay_ok =
            degenerate.second_half_max <= degenerate.first_half_max * (1.0 + 1e-9) + 1e-12;
        report.checks.push(check(
            "deterministic_remainder",
            spread_ok,
            format!("spread of T_n across replicates {:.3e}", degenerate.spread),
        ));
        report.checks.push(check(
            "decay",
            decay_ok,
            format!(
                "max |T_t| over second half {:.3e} vs first half {:.3e}",
                degenerate.second_half_max, degenerate.first_half_max
            ),
        ));
        report.degenerate = Some(degenerate);
        report.verdict = if report.checks.iter().all(|c| c.passed) && !kept.is_empty() {
            Verdict::Pass
        } else {
            Verdict::Fail
        };
        return Ok(report);
    }

    let ws: Vec<f64> = kept.iter().map(|r| r.w_hat).collect();
    let residual = |part: fn(&ReplicateResult) -> f64| -> Vec<f64> {
        kept.iter()
            .map(|r| part(r) / (sigma_case * r.w_hat.sqrt()))
            .collect()
    };
    let eps = residual(|r| r.t_stat.re);
    if kept.len() < MIN_KS_SAMPLE {
        return Err(Error::SampleTooSmall {
            got: kept.len(),
            min: MIN_KS_SAMPLE,
        });
    }

    let m = eps.len() as f64;
    let ks = ks_test(&eps)?;
    let mean_eps = mean(&eps);
    let var_eps = variance(&eps);
    let var_se = bootstrap_se(
        &eps,
        &[],
        opts.bootstrap_reps,
        opts.bootstrap_seed,
        |x, _| variance(x),
    );
    report.ks = Some(ks);
    report.residual_mean = Some(Interval::new(
        mean_eps,
        (var_eps / m).sqrt(),
        opts.mean_band_sigmas,
    ));
    report.residual_variance = Some(Interval::new(var_eps, var_se, opts.variance_band_se));
    let scaled: Vec<f64> = kept.iter().map(|r| r.t_stat.re / r.w_hat.sqrt()).collect();
    let scaled_se = bootstrap_se(
        &scaled,
        &[],
        opts.bootstrap_reps,
        opts.bootstrap_seed ^ 1,
        |x, _| variance(x),
    );
    report.scaled_variance = Some(Interval::new(
        variance(&scaled),
        scaled_se,
        opts.variance_band_se,
    ));

    let abs_eps: Vec<f64> = eps.iter().map(|x| x.abs()).collect();
    let sq_eps: Vec<f64> = eps.iter().map(|x| x * x).collect();
    report.corr_abs_residual_w = correlation_interval(&abs_eps, &ws, opts, 2);
    report.corr_sq_residual_w = correlation_interval(&sq_eps, &ws, opts, 3);

    report.checks.push(check(
        "ks_normal",
        ks.p_value > opts.p_min,
        format!("D = {:.4}, p = {:.4}", ks.statistic, ks.p_value),
    ));
    report.checks.push(check(
        "residual_mean",
        mean_eps.abs() < opts.mean_band_sigmas / m.sqrt(),
        format!(
            "mean = {mean_eps:.4}, band = {:.4}",
            opts.mean_band_sigmas / m.sqrt()
        ),
    ));
    report.checks.push(check(
        "residual_variance",
        (var_eps - 1.0).abs() < opts.variance_band_se * var_se,
        format!("var = {var_eps:.4}, bootstrap se = {var_se:.4}"),
    ));
    for (name, interval) in [
        ("independence_abs", report.corr_abs_residual_w),
        ("independence_sq", report.corr_sq_residual_w),
    ] {
        match interval {
            Some(i) => report.checks.push(check(
                name,
                i.covers(0.0),
                format!(
                    "r = {:.4}, ci = [{:.4}, {:.4}]",
                    i.estimate, i.lower, i.upper
                ),
            )),
            None => report
                .checks
                .push(check(name, true, "W has no spread; skipped".into())),
        }
    }

    if real_valued {
        report.verdict = if report.checks.iter().all(|c| c.passed) {
            Verdict::Pass
        } else {
            Verdict::Fail
        };
    } else {
        report.ks_imaginary = Some(ks_test(&residual(|r| r.t_stat.im))?);
        report.verdict = Verdict::Informational;
    }
    Ok(report)
}

fn degenerate_check(kept: &[&ReplicateResult]) -> DegenerateCheck {
    let spread = kept
        .iter()
        .map(|r| (r.t_stat - kept[0].t_stat).norm())
        .fold(0.0, f64::max);
    let path = kept.first().map(|r| r.t_path.clone()).unwrap_or_default();
    let half = path.len() / 2;
    let max_abs = |xs: &[crate::linalg::C64]| xs.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let monotone = path
        .windows(2)
        .all(|w| w[1].norm() <= w[0].norm() * (1.0 + 1e-9) + 1e-15);
    DegenerateCheck {
        spread,
        first_half_max: max_abs(&path[..half]),
        second_half_max: max_abs(&path[half..]),
        monotone,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LlnReport {
    pub limit_constant: f64,
    pub branch: &'static str,
    pub median: f64,
    pub iqr: (f64, f64),
    pub passed: bool,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Law of large numbers: `Z_n^Phi / (rho^n W sum_k E Phi(k) rho^-k u) -> 1`.
pub fn lln_check(
    results: &[ReplicateResult],
    phi: &Characteristic,
    spectral: &SpectralData,
    n: u32,
    w_min: f64,
    tolerance: f64,
) -> Result<LlnReport> {
    if !phi.is_deterministic() {
        return Err(Error::Refused(
            "law of large numbers check needs a deterministic characteristic".into(),
        ));
    }
    let constant = lln_constant(phi, spectral).re;
    let kept = survivors(results, w_min);
    if kept.is_empty() {
        return Err(Error::SampleTooSmall { got: 0, min: 1 });
    }
    let rho_n = spectral.rho.powi(n as i32);
    let (branch, mut values): (&'static str, Vec<f64>) = if constant.abs() > 1e-12 {
        (
            "ratio",
            kept.iter()
                .map(|r| r.zphi.re / (rho_n * r.w_hat * constant))
                .collect(),
        )
    } else {
        (
            "absolute",
            kept.iter().map(|r| r.zphi.norm() / rho_n).collect(),
        )
    };
    values.sort_by(f64::total_cmp);
    let median = quantile(&values, 0.5);
    let passed = match branch {
        "ratio" => (median - 1.0).abs() <= tolerance,
        _ => median <= tolerance,
    };
    Ok(LlnReport {
        limit_constant: constant,
        branch,
        median,
        iqr: (quantile(&values, 0.25), quantile(&values, 0.75)),
        passed,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ScalingPoint {
    pub n: u32,
    /// `Var[x2 pi2 Z_n - x2 A2^n Z0] / (n^{2l+1} rho^n)`.
    pub scaled_variance: f64,
    pub se: f64,
}

/// Empirical variance of the critical component scaled by `n^{2l+1} rho^n`.
pub fn critical_scaling(
    results: &[ReplicateResult],
    rho: f64,
    l: usize,
    ns: &[u32],
    reps: usize,
    seed: u64,
) -> Vec<ScalingPoint> {
    ns.iter()
        .map(|&n| {
            let xs: Vec<f64> = results
                .iter()
                .filter(|r| r.aborted.is_none())
                .map(|r| r.critical_path[n as usize].re)
                .collect();
            let norm = (n as f64).powi(2 * l as i32 + 1) * rho.powi(n as i32);
            let se = bootstrap_se(&xs, &[], reps, seed ^ n as u64, |x, _| variance(x)) / norm;
            ScalingPoint {
                n,
                scaled_variance: variance(&xs) / norm,
                se,
            }
        })
        .collect()
}

/// Every point lies within `z` standard errors of the precision-weighted mean.
pub fn is_flat(points: &[ScalingPoint], z: f64) -> bool {
    let weights: Vec<f64> = points
        .iter()
        .map(|p| 1.0 / (p.se * p.se).max(1e-300))
        .collect();
    let total: f64 = weights.iter().sum();
    let center = points
        .iter()
        .zip(&weights)
        .map(|(p, w)| p.scaled_variance * w)
        .sum::<f64>()
        / total;
    points
        .iter()
        .all(|p| (p.scaled_variance - center).abs() <= z * p.se)
}
