//! Limit constants of the central limit dichotomy.
//!
//! Every variance over `L` is an exact enumeration over the finite offspring
//! support. Infinite series over ages are summed exactly on a core window
//! and closed with geometric tail certificates built from the spectral gaps.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::characteristics::Characteristic;
use crate::error::{Error, Result};
use crate::linalg::{c, hermitian_form, row_norm, CMat, CRow, C64};
use crate::model::BranchingModel;
use crate::spectral::{Restricted, SpectralData};

pub const DEFAULT_REPORT_EPSILON: f64 = 1e-10;
/// Threshold below which a variance constant counts as zero.
pub const VANISHING: f64 = 1e-12;
const MAX_TAIL_STEPS: usize = 1_000_000;

/// `x1 = sum_k E Phi(k) pi1 A1^{-k}` and `x2 = sum_k E Phi(k) pi2 A2^{-k}`.
pub fn compute_x1_x2(
    mean_table: &BTreeMap<i64, CRow>,
    spectral: &SpectralData,
) -> Result<(CRow, CRow)> {
    let dim = spectral.dim();
    let mut x1 = CRow::zeros(dim);
    let mut x2 = CRow::zeros(dim);
    for (k, row) in mean_table {
        x1 += row * spectral.projected_power(Restricted::Super, -k)?;
        if spectral.has_critical() {
            x2 += row * spectral.projected_power(Restricted::Critical, -k)?;
        }
    }
    Ok((x1, x2))
}

/// `sum_j weights_j Cov L^(j)`.
fn weighted_cov(model: &BranchingModel, weights: &[f64]) -> DMatrix<f64> {
    model.weighted_covariance(weights)
}

fn factorial(l: usize) -> f64 {
    (1..=l).map(|i| i as f64).product()
}

/// Critical variance constant of order `l`:
///
/// ```text
/// rho^-(l+1) / ((2l+1) (l!)^2) * sum_{|lambda| = sqrt(rho)} Var[x2 pi_lambda (A - lambda)^l L] u
/// ```
pub fn compute_sigma_l(
    x2: &CRow,
    spectral: &SpectralData,
    model: &BranchingModel,
    l: usize,
) -> f64 {
    let m = weighted_cov(model, &spectral.u);
    let a = spectral.mean_complex();
    let dim = spectral.dim();
    let mut total = 0.0;
    for cluster in spectral.critical_clusters() {
        let shifted = &a - CMat::identity(dim, dim) * cluster.value;
        let mut w = x2 * &cluster.projection;
        for _ in 0..l {
            w = &w * &shifted;
        }
        total += hermitian_form(&w, &m);
    }
    let rho = spectral.rho;
    rho.powi(-(l as i32) - 1) / ((2 * l + 1) as f64 * factorial(l).powi(2)) * total
}

/// `sigma_l^2` for `l = 0..=J`.
pub fn sigma_l_table(x2: &CRow, spectral: &SpectralData, model: &BranchingModel) -> Vec<f64> {
    (0..=spectral.dim())
        .map(|l| compute_sigma_l(x2, spectral, model, l))
        .collect()
}

/// Largest `l < J` with `sigma_l^2 > 1e-12`.
pub fn find_l_star(sigma_l: &[f64]) -> Option<usize> {
    let usable = sigma_l.len().saturating_sub(1);
    (0..usable).rev().find(|&l| sigma_l[l] > VANISHING)
}

/// Per-`l` projected powers `A^l P` with negative powers taken on the
/// super-critical or critical subspace.
struct PowerCache {
    forward: Vec<CMat>,
    super_back: Vec<CMat>,
    critical_back: Vec<CMat>,
}

impl PowerCache {
    fn new(spectral: &SpectralData, max_forward: usize, max_back: usize) -> Self {
        let a = spectral.mean_complex();
        let mut forward = vec![CMat::identity(spectral.dim(), spectral.dim())];
        for i in 0..max_forward {
            let next = &forward[i] * &a;
            forward.push(next);
        }
        let back = |proj: &CMat, inv: &CMat| {
            let mut out = vec![proj.clone()];
            for i in 0..max_back {
                let next = &out[i] * inv;
                out.push(next);
            }
            out
        };
        Self {
            forward,
            super_back: back(&spectral.pi1, &spectral.a1_inv),
            critical_back: back(&spectral.pi2, &spectral.a2_inv),
        }
    }
}

/// `B(k) = sum_l E Phi(k-l-1) A^l P(k, l)` with
///
/// ```text
/// P(k, l) = -pi1 1{l<0} + pi2 1{l>=0} + pi3 1{l>=0}   (k <= 0)
/// P(k, l) = -pi1 1{l<0} - pi2 1{l<0}  + pi3 1{l>=0}   (k > 0)
/// ```
///
/// For a finitely supported mean table this is a finite sum, so the value is
/// exact and no tail is discarded.
pub fn compute_b(mean_table: &BTreeMap<i64, CRow>, spectral: &SpectralData, k: i64) -> CRow {
    let dim = spectral.dim();
    let (Some((&kmin, _)), Some((&kmax, _))) =
        (mean_table.first_key_value(), mean_table.last_key_value())
    else {
        return CRow::zeros(dim);
    };
    let l_lo = k - 1 - kmax;
    let l_hi = k - 1 - kmin;
    let cache = PowerCache::new(spectral, l_hi.max(0) as usize, (-l_lo).max(0) as usize);
    b_from_cache(mean_table, spectral, &cache, k)
}

fn b_from_cache(
    mean_table: &BTreeMap<i64, CRow>,
    spectral: &SpectralData,
    cache: &PowerCache,
    k: i64,
) -> CRow {
    let mut b = CRow::zeros(spectral.dim());
    let forward_proj = if k <= 0 {
        &spectral.pi2 + &spectral.pi3
    } else {
        spectral.pi3.clone()
    };
    for (m, row) in mean_table {
        let l = k - 1 - m;
        if l >= 0 {
            b += row * &cache.forward[l as usize] * &forward_proj;
        } else {
            let idx = l.unsigned_abs() as usize;
            b -= row * &cache.super_back[idx];
            if k > 0 {
                b -= row * &cache.critical_back[idx];
            }
        }
    }
    b
}

/// A series value with a certified bound on what was not summed.
#[derive(Clone, Debug, Serialize)]
pub struct CertifiedSum {
    pub value: f64,
    /// Bound on the tail beyond the summed window plus discarded input mass.
    pub error_bound: f64,
    pub left_tail_bound: f64,
    pub right_tail_bound: f64,
    /// Ages summed exactly.
    pub window: (i64, i64),
}

fn operator_norm_bound(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Sums `rho^-k q(r_k)` over a left tail `r_{k-1} = r_k A1^{-1}` starting at
/// `k_start` (exclusive) until the certified remainder drops below `eps`.
///
/// The recursion carries `rho^{-k/2} r_k`, so neither factor over- or
/// underflows on slowly converging tails.
fn left_tail(
    start_row: CRow,
    k_start: i64,
    spectral: &SpectralData,
    m: &DMatrix<f64>,
    eps: f64,
) -> (f64, f64, i64) {
    let rho = spectral.rho;
    let q = rho.powf(-spectral.delta);
    let factor = operator_norm_bound(m) * spectral.delta_constant * q / (1.0 - q);
    // The tail rows live in the range of pi1; projecting every step keeps
    // round-off from growing in the complement.
    let step = &spectral.a1_inv * &spectral.pi1 * c(rho.sqrt());
    let mut row = start_row * c(rho.powf(-(k_start as f64) / 2.0));
    let mut k = k_start;
    let mut sum = 0.0;
    let mut bound = row_norm(&row).powi(2) * factor;
    let mut steps = 0;
    while bound > eps && steps < MAX_TAIL_STEPS {
        row = &row * &step;
        k -= 1;
        sum += hermitian_form(&row, m);
        bound = row_norm(&row).powi(2) * factor;
        steps += 1;
    }
    (sum, bound, k)
}

/// Right tail `r_{k+1} = r_k A` restricted to the sub-critical subspace,
/// carried as `rho^{-k/2} r_k`.
fn right_tail(
    start_row: CRow,
    k_start: i64,
    spectral: &SpectralData,
    m: &DMatrix<f64>,
    eps: f64,
) -> (f64, f64, i64) {
    let rho = spectral.rho;
    let q = spectral.theta * spectral.theta / rho;
    let factor = operator_norm_bound(m) * spectral.theta_constant.powi(2) * q / (1.0 - q);
    let step = spectral.mean_complex() * &spectral.pi3 * c(rho.sqrt().recip());
    let mut row = start_row * c(rho.powf(-(k_start as f64) / 2.0));
    let mut k = k_start;
    let mut sum = 0.0;
    let mut bound = row_norm(&row).powi(2) * factor;
    let mut steps = 0;
    while bound > eps && steps < MAX_TAIL_STEPS {
        row = &row * &step;
        k += 1;
        sum += hermitian_form(&row, m);
        bound = row_norm(&row).powi(2) * factor;
        steps += 1;
    }
    (sum, bound, k)
}

/// `sigma^2 = sum_k rho^-k Var[Phi(k) + Psi(k)] u`.
///
/// At age `k` and type `j` the combined value is
/// `base + (coeff(k) + B(k)) (l^(j) - A e_j) + noise`, so the variance is the
/// Hermitian form of `coeff(k) + B(k)` against `Cov L^(j)` plus the noise
/// variance.
pub fn compute_sigma2(
    phi: &Characteristic,
    spectral: &SpectralData,
    model: &BranchingModel,
    eps_report: f64,
) -> Result<CertifiedSum> {
    let dim = spectral.dim();
    let table = phi.mean_table();
    let u = &spectral.u;
    let m = weighted_cov(model, u);
    let rho = spectral.rho;

    let Some((sup_lo, sup_hi)) = phi.support() else {
        return Ok(CertifiedSum {
            value: 0.0,
            error_bound: 0.0,
            left_tail_bound: 0.0,
            right_tail_bound: 0.0,
            window: (0, 0),
        });
    };
    let (mut lo, mut hi) = (sup_lo, sup_hi);
    if let (Some((&kmin, _)), Some((&kmax, _))) = (table.first_key_value(), table.last_key_value())
    {
        lo = lo.min(kmin.min(0));
        hi = hi.max((kmax + 1).max(1));
    }

    let cache = PowerCache::new(
        spectral,
        table
            .keys()
            .next()
            .map(|kmin| (hi - 1 - kmin).max(0) as usize)
            .unwrap_or(0),
        table
            .keys()
            .last()
            .map(|kmax| (kmax + 1 - lo).max(0) as usize)
            .unwrap_or(0),
    );

    let mut value = 0.0;
    let mut b_lo = CRow::zeros(dim);
    let mut b_hi = CRow::zeros(dim);
    for k in lo..=hi {
        let b = b_from_cache(&table, spectral, &cache, k);
        let combined = match phi.coeff().get(&k) {
            Some(coeff) => coeff + &b,
            None => b.clone(),
        };
        let mut term = 0.0;
        for j in 0..dim {
            let cov_term = hermitian_form(&combined, model.covariance(j));
            let noise = phi
                .noise()
                .get(&(k, j))
                .map(|law| law.variance())
                .unwrap_or(0.0);
            term += u[j] * (cov_term + noise);
        }
        value += rho.powi(-k as i32) * term;
        if k == lo {
            b_lo = b.clone();
        }
        if k == hi {
            b_hi = b;
        }
    }
    if !value.is_finite() {
        return Err(Error::Overflow("sigma^2 core sum".into()));
    }

    let (left_sum, left_bound, k_left) = if table.is_empty() {
        (0.0, 0.0, lo)
    } else {
        left_tail(b_lo, lo, spectral, &m, eps_report / 2.0)
    };
    let (right_sum, right_bound, k_right) = if table.is_empty() {
        (0.0, 0.0, hi)
    } else {
        right_tail(b_hi, hi, spectral, &m, eps_report / 2.0)
    };
    value += left_sum + right_sum;
    Ok(CertifiedSum {
        value,
        error_bound: left_bound + right_bound + phi.discarded_tail(),
        left_tail_bound: left_bound,
        right_tail_bound: right_bound,
        window: (k_left, k_right),
    })
}

/// Closed series for the indicator characteristic `a 1{k=0}` with `a . u = 0`:
///
/// ```text
/// sum_{k>=1} rho^-k (a A^{k-1} pi3) M (a A^{k-1} pi3)^*
///   + sum_{k<=0} rho^-k (a A1^{k-1} pi1) M (a A1^{k-1} pi1)^*
/// ```
///
/// with `M = sum_j u_j Cov L^(j)`. Both parts are Hermitian forms and enter
/// with a plus sign.
pub fn compute_sigma_star2(
    a: &CRow,
    spectral: &SpectralData,
    model: &BranchingModel,
    eps_report: f64,
) -> Result<CertifiedSum> {
    let au: C64 = a.iter().zip(&spectral.u).map(|(x, &y)| x * y).sum();
    if au.norm() > 1e-10 {
        return Err(Error::NotOrthogonal(au.norm()));
    }
    let m = weighted_cov(model, &spectral.u);
    let rho = spectral.rho;

    // k = 1 term, then the forward recursion.
    let first_right = a * &spectral.pi3;
    let mut value = rho.powi(-1) * hermitian_form(&first_right, &m);
    let (right_sum, right_bound, k_right) =
        right_tail(first_right, 1, spectral, &m, eps_report / 2.0);
    value += right_sum;

    // k = 0 term a A1^{-1} pi1, then the backward recursion.
    let first_left = a * &spectral.a1_inv * &spectral.pi1;
    value += hermitian_form(&first_left, &m);
    let (left_sum, left_bound, k_left) = left_tail(first_left, 0, spectral, &m, eps_report / 2.0);
    value += left_sum;

    Ok(CertifiedSum {
        value,
        error_bound: left_bound + right_bound,
        left_tail_bound: left_bound,
        right_tail_bound: right_bound,
        window: (k_left, k_right),
    })
}

/// Which branch of the dichotomy applies.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "case", rename_all = "snake_case")]
pub enum NormalizationCase {
    /// All `sigma_l` vanish and `sigma > 0`: rate `rho^{n/2}`.
    Diffusive,
    /// All `sigma_l` vanish and `sigma = 0`: the remainder is deterministic.
    Degenerate,
    /// Critical fluctuations dominate at rate `n^{l*+1/2} rho^{n/2}`.
    Critical { l_star: usize },
}

impl NormalizationCase {
    pub fn label(&self) -> String {
        match self {
            Self::Diffusive => "case i, sigma > 0".into(),
            Self::Degenerate => "case i, sigma = 0".into(),
            Self::Critical { l_star } => format!("case ii, l*={l_star}"),
        }
    }

    pub fn rate(&self, rho: f64, n: u32) -> f64 {
        let base = rho.powf(n as f64 / 2.0);
        match self {
            Self::Critical { l_star } => (n as f64).powf(*l_star as f64 + 0.5) * base,
            _ => base,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TheoreticalConstants {
    pub x1: CRow,
    pub x2: CRow,
    /// `sigma_l^2` for `l = 0..=J`.
    pub sigma_l: Vec<f64>,
    pub l_star: Option<usize>,
    pub sigma2: CertifiedSum,
    /// Present for indicator characteristics `a 1{k=0}` with `a . u = 0`.
    pub sigma_star2: Option<CertifiedSum>,
    /// `B(k)` on the window where the mean table is supported.
    pub b_table: BTreeMap<i64, CRow>,
    pub case: NormalizationCase,
}

impl TheoreticalConstants {
    /// `sigma` or `sigma_{l*}` as selected by the case.
    pub fn scale(&self) -> f64 {
        match self.case {
            NormalizationCase::Critical { l_star } => self.sigma_l[l_star].max(0.0).sqrt(),
            _ => self.sigma2.value.max(0.0).sqrt(),
        }
    }
}

/// The row `a` if `phi` is exactly `a 1{k=0}`.
pub fn indicator_row(phi: &Characteristic) -> Option<CRow> {
    if !phi.is_deterministic() || !phi.noise().is_empty() {
        return None;
    }
    let table = phi.mean_table();
    match (table.len(), table.get(&0)) {
        (1, Some(row)) => Some(row.clone()),
        (0, _) => Some(CRow::zeros(phi.types())),
        _ => None,
    }
}

pub fn compute_constants(
    phi: &Characteristic,
    spectral: &SpectralData,
    model: &BranchingModel,
    eps_report: f64,
) -> Result<TheoreticalConstants> {
    let table = phi.mean_table();
    let (x1, x2) = compute_x1_x2(&table, spectral)?;
    let sigma_l = sigma_l_table(&x2, spectral, model);
    let l_star = find_l_star(&sigma_l);
    let sigma2 = compute_sigma2(phi, spectral, model, eps_report)?;
    let sigma_star2 = indicator_row(phi)
        .filter(|a| {
            let au: C64 = a.iter().zip(&spectral.u).map(|(x, &y)| x * y).sum();
            au.norm() <= 1e-10
        })
        .map(|a| compute_sigma_star2(&a, spectral, model, eps_report))
        .transpose()?;
    let b_table = match (table.first_key_value(), table.last_key_value()) {
        (Some((&kmin, _)), Some((&kmax, _))) => ((kmin.min(0))..=(kmax + 1).max(1))
            .map(|k| (k, compute_b(&table, spectral, k)))
            .collect(),
        _ => BTreeMap::new(),
    };
    let case = match l_star {
        Some(l_star) => NormalizationCase::Critical { l_star },
        None if sigma2.value > VANISHING => NormalizationCase::Diffusive,
        None => NormalizationCase::Degenerate,
    };
    Ok(TheoreticalConstants {
        x1,
        x2,
        sigma_l,
        l_star,
        sigma2,
        sigma_star2,
        b_table,
        case,
    })
}

/// `sum_k E Phi(k) rho^-k u`, the law-of-large-numbers constant.
pub fn lln_constant(phi: &Characteristic, spectral: &SpectralData) -> C64 {
    phi.mean_table()
        .iter()
        .map(|(k, row)| {
            let dot: C64 = row.iter().zip(&spectral.u).map(|(x, &y)| x * y).sum();
            dot * spectral.rho.powi(-*k as i32)
        })
        .sum()
}

/// `x1 A1^n`, `x2 A2^n` and `x2 A2^n Z0` pieces used by the normalized statistic.
pub fn centering_rows(
    constants: &TheoreticalConstants,
    spectral: &SpectralData,
    n: u32,
) -> Result<(CRow, CRow)> {
    let r1 = &constants.x1 * spectral.projected_power(Restricted::Super, n as i64)?;
    let r2 = &constants.x2 * spectral.projected_power(Restricted::Critical, n as i64)?;
    Ok((r1, r2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::characteristics::{martingale_gap_characteristic, DEFAULT_TAIL_EPSILON};
    use crate::linalg::{c, real_row};
    use crate::model::{ModelSpec, Probability};
    use crate::spectral::{spectral_decompose, DEFAULT_TOLERANCE};
    use num_rational::Ratio;

    fn half() -> Probability {
        Probability::Exact(Ratio::new(1, 2))
    }

    fn build(types: usize, offspring: Vec<Vec<(Probability, Vec<i64>)>>) -> BranchingModel {
        BranchingModel::build(&ModelSpec {
            types,
            offspring,
            initial_type: 0,
        })
        .unwrap()
    }

    fn s1() -> BranchingModel {
        build(1, vec![vec![(half(), vec![1]), (half(), vec![3])]])
    }

    fn s2() -> BranchingModel {
        build(
            2,
            vec![
                vec![(half(), vec![2, 2]), (half(), vec![4, 0])],
                vec![(half(), vec![2, 2]), (half(), vec![0, 4])],
            ],
        )
    }

    fn jordan() -> BranchingModel {
        // A = [[3,0,1],[1,3,0],[1,1,2]]: rho = 4 and a defective eigenvalue 2.
        build(
            3,
            vec![
                vec![(half(), vec![2, 2, 2]), (half(), vec![4, 0, 0])],
                vec![(half(), vec![0, 4, 2]), (half(), vec![0, 2, 0])],
                vec![(half(), vec![2, 0, 4]), (half(), vec![0, 0, 0])],
            ],
        )
    }

    fn spectral(model: &BranchingModel) -> SpectralData {
        spectral_decompose(model.mean(), DEFAULT_TOLERANCE).unwrap()
    }

    #[test]
    fn s1_indicator_constants() {
        let m = s1();
        let s = spectral(&m);
        let phi = Characteristic::indicator(real_row(&[1.0]));
        let k = compute_constants(&phi, &s, &m, DEFAULT_REPORT_EPSILON).unwrap();
        assert!((k.x1[0].re - 1.0).abs() < 1e-14);
        assert_eq!(k.x2[0], c(0.0));
        assert!(k.l_star.is_none());
        assert!((k.sigma2.value - 0.5).abs() < 1e-10, "{}", k.sigma2.value);
        assert!(k.sigma2.error_bound < 1e-10);
        assert_eq!(k.case, NormalizationCase::Diffusive);
        for kk in -5..=0 {
            assert!(
                (compute_b(&phi.mean_table(), &s, kk)[0].re + 2f64.powi(kk as i32 - 1)).abs()
                    < 1e-14
            );
        }
        for kk in 1..=5 {
            assert!(compute_b(&phi.mean_table(), &s, kk)[0].norm() < 1e-14);
        }
    }

    #[test]
    fn s2_kesten_stigum_constants() {
        let m = s2();
        let s = spectral(&m);
        let a = real_row(&[1.0, -1.0]);
        let phi = Characteristic::indicator(a.clone());
        let k = compute_constants(&phi, &s, &m, DEFAULT_REPORT_EPSILON).unwrap();
        assert!(row_norm(&k.x1) < 1e-12);
        assert!((&k.x2 - &a).norm() < 1e-12);
        assert!((k.sigma_l[0] - 2.0).abs() < 1e-12, "{:?}", k.sigma_l);
        assert!(k.sigma_l[1].abs() < 1e-12);
        assert_eq!(k.l_star, Some(0));
        assert!(k.sigma2.value.abs() < 1e-12);
        assert!(k.sigma_star2.as_ref().unwrap().value.abs() < 1e-12);
        assert_eq!(k.case, NormalizationCase::Critical { l_star: 0 });
        assert!((k.case.rate(4.0, 3) - 3f64.sqrt() * 8.0).abs() < 1e-12);
    }

    #[test]
    fn jordan_block_gives_first_order_critical_constant() {
        let m = jordan();
        let s = spectral(&m);
        let a = real_row(&[1.0, -1.0, 0.0]);
        let phi = Characteristic::indicator(a);
        let k = compute_constants(&phi, &s, &m, DEFAULT_REPORT_EPSILON).unwrap();
        assert_eq!(k.l_star, Some(1));
        assert!(k.sigma_l[1] > 1e-6);
        assert!(k.sigma_l[2].abs() < 1e-10);
        assert!(k.sigma_l[3].abs() < 1e-10);
    }

    #[test]
    fn deterministic_model_has_no_fluctuations() {
        let one = || Probability::Exact(Ratio::from_integer(1));
        let m = build(
            2,
            vec![vec![(one(), vec![2, 1])], vec![(one(), vec![1, 2])]],
        );
        let s = spectral(&m);
        let phi = Characteristic::indicator(real_row(&[1.0, -1.0]));
        let k = compute_constants(&phi, &s, &m, DEFAULT_REPORT_EPSILON).unwrap();
        assert!(k.sigma2.value.abs() < 1e-14);
        assert!(k.sigma_l.iter().all(|v| v.abs() < 1e-14));
        assert_eq!(k.case, NormalizationCase::Degenerate);
    }

    #[test]
    fn centered_characteristic_has_zero_centering() {
        let m = s1();
        let s = spectral(&m);
        let mut phi = Characteristic::new(1);
        phi.set_coeff(1, real_row(&[1.0])).unwrap();
        let (x1, x2) = compute_x1_x2(&phi.mean_table(), &s).unwrap();
        assert_eq!(row_norm(&x1), 0.0);
        assert_eq!(row_norm(&x2), 0.0);
        // Var[Phi(1)] u rho^-1 = 1/2
        let sig = compute_sigma2(&phi, &s, &m, DEFAULT_REPORT_EPSILON).unwrap();
        assert!((sig.value - 0.5).abs() < 1e-14);
    }

    #[test]
    fn gap_characteristic_variance_matches_geometric_series() {
        // Psi_3 for S1: coeff(k) = -2^{k-1}, variance sum = sum_{k<=0} 2^{-k} 4^{k-1} = 1/2.
        let m = s1();
        let s = spectral(&m);
        let phi = martingale_gap_characteristic(&s, &m, &real_row(&[1.0]), DEFAULT_TAIL_EPSILON);
        let sig = compute_sigma2(&phi, &s, &m, DEFAULT_REPORT_EPSILON).unwrap();
        assert!((sig.value - 0.5).abs() < 1e-12);
    }

    #[test]
    fn find_l_star_uses_indices_below_j() {
        assert_eq!(find_l_star(&[1.0, 0.0, 5.0]), Some(0));
        assert_eq!(find_l_star(&[1.0, 2.0, 0.0]), Some(1));
        assert_eq!(find_l_star(&[0.0, 1e-13, 0.0]), None);
    }

    #[test]
    fn sigma_star_rejects_non_orthogonal_row() {
        let m = s2();
        let s = spectral(&m);
        assert!(compute_sigma_star2(&real_row(&[1.0, 0.0]), &s, &m, 1e-10).is_err());
    }
}
