//! Random characteristics and their centered transforms.
//!
//! A characteristic assigns to an individual of type `j` at age `k` the value
//!
//! ```text
//! base(k)_j + coeff(k) . (l^(j) - A e_j) + noise(k, j)
//! ```
//!
//! where `l^(j)` is the individual's own offspring column and the noise is
//! drawn from a finite table independently of everything else (and
//! independently across ages). Every centered characteristic built from the
//! offspring deviations, including the star transform and the martingale-gap
//! characteristic, lives in this family.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{c, dot_real, frobenius, identity, row_norm, CMat, CRow, C64};
use crate::model::BranchingModel;
use crate::spectral::SpectralData;

const NOISE_PROBABILITY_TOLERANCE: f64 = 1e-12;
pub const DEFAULT_TAIL_EPSILON: f64 = 1e-14;

/// Finite law of an additive noise term.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseLaw {
    outcomes: Vec<(f64, C64)>,
}

impl NoiseLaw {
    pub fn new(outcomes: Vec<(f64, C64)>) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(Error::InvalidCharacteristic("empty noise table".into()));
        }
        if outcomes.iter().any(|(p, _)| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidCharacteristic(
                "noise probability outside [0, 1]".into(),
            ));
        }
        let total: f64 = outcomes.iter().map(|(p, _)| p).sum();
        if (total - 1.0).abs() > NOISE_PROBABILITY_TOLERANCE {
            return Err(Error::InvalidCharacteristic(format!(
                "noise probabilities sum to {total}"
            )));
        }
        Ok(Self { outcomes })
    }

    pub fn outcomes(&self) -> &[(f64, C64)] {
        &self.outcomes
    }

    pub fn mean(&self) -> C64 {
        self.outcomes.iter().map(|(p, x)| x * *p).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.outcomes
            .iter()
            .map(|(p, x)| p * (x - m).norm_sqr())
            .sum()
    }
}

#[derive(Clone, Debug)]
pub struct Characteristic {
    types: usize,
    base: BTreeMap<i64, CRow>,
    coeff: BTreeMap<i64, CRow>,
    noise: BTreeMap<(i64, usize), NoiseLaw>,
    discarded_tail: f64,
}

/// Sums that certify the summability assumptions, evaluated on the support.
#[derive(Clone, Debug, Serialize)]
pub struct AssumptionSums {
    /// `sum_k E||Phi(k)|| (rho^-k + theta^-k)`.
    pub mean_sum: f64,
    /// `sum_k ||Var Phi(k)|| rho^-k`.
    pub variance_sum: f64,
    pub discarded_tail: f64,
}

impl Characteristic {
    pub fn new(types: usize) -> Self {
        Self {
            types,
            base: BTreeMap::new(),
            coeff: BTreeMap::new(),
            noise: BTreeMap::new(),
            discarded_tail: 0.0,
        }
    }

    /// `Phi(k) = row 1{k = 0}`, so that `Z_n^Phi = row . Z_n`.
    pub fn indicator(row: CRow) -> Self {
        let mut phi = Self::new(row.len());
        phi.base.insert(0, row);
        phi
    }

    /// Deterministic characteristic from a table of rows.
    pub fn from_table(types: usize, table: impl IntoIterator<Item = (i64, CRow)>) -> Result<Self> {
        let mut phi = Self::new(types);
        for (k, row) in table {
            phi.set_base(k, row)?;
        }
        Ok(phi)
    }

    fn check_row(&self, row: &CRow) -> Result<()> {
        if row.len() != self.types {
            return Err(Error::InvalidCharacteristic(format!(
                "row has {} entries, expected {}",
                row.len(),
                self.types
            )));
        }
        if row.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidCharacteristic("non-finite entry".into()));
        }
        Ok(())
    }

    pub fn set_base(&mut self, k: i64, row: CRow) -> Result<()> {
        self.check_row(&row)?;
        self.base.insert(k, row);
        Ok(())
    }

    pub fn set_coeff(&mut self, k: i64, row: CRow) -> Result<()> {
        self.check_row(&row)?;
        self.coeff.insert(k, row);
        Ok(())
    }

    pub fn set_noise(&mut self, k: i64, j: usize, law: NoiseLaw) -> Result<()> {
        if j >= self.types {
            return Err(Error::TypeOutOfRange {
                index: j,
                types: self.types,
            });
        }
        self.noise.insert((k, j), law);
        Ok(())
    }

    pub fn types(&self) -> usize {
        self.types
    }

    pub fn base(&self) -> &BTreeMap<i64, CRow> {
        &self.base
    }

    pub fn coeff(&self) -> &BTreeMap<i64, CRow> {
        &self.coeff
    }

    pub fn noise(&self) -> &BTreeMap<(i64, usize), NoiseLaw> {
        &self.noise
    }

    /// Upper bound on the mass cut off when an infinite tail was truncated.
    pub fn discarded_tail(&self) -> f64 {
        self.discarded_tail
    }

    /// Smallest and largest age with a non-trivial entry.
    pub fn support(&self) -> Option<(i64, i64)> {
        let ks = self
            .base
            .keys()
            .chain(self.coeff.keys())
            .chain(self.noise.keys().map(|(k, _)| k));
        ks.fold(None, |acc, &k| match acc {
            None => Some((k, k)),
            Some((lo, hi)) => Some((lo.min(k), hi.max(k))),
        })
    }

    pub fn is_deterministic(&self) -> bool {
        self.coeff.is_empty() && self.noise.values().all(|law| law.variance() == 0.0)
    }

    pub fn depends_on_offspring(&self) -> bool {
        !self.coeff.is_empty()
    }

    pub fn is_real(&self) -> bool {
        let real_row = |r: &CRow| r.iter().all(|z| z.im == 0.0);
        self.base.values().all(real_row)
            && self.coeff.values().all(real_row)
            && self
                .noise
                .values()
                .all(|law| law.outcomes.iter().all(|(_, x)| x.im == 0.0))
    }

    /// `E Phi(k)`.
    pub fn mean(&self, k: i64) -> CRow {
        let mut m = self
            .base
            .get(&k)
            .cloned()
            .unwrap_or_else(|| CRow::zeros(self.types));
        for j in 0..self.types {
            if let Some(law) = self.noise.get(&(k, j)) {
                m[j] += law.mean();
            }
        }
        m
    }

    /// `Var Phi(k) e_j` for every `j`, by enumeration of the offspring support.
    pub fn variance(&self, k: i64, model: &BranchingModel) -> Vec<f64> {
        (0..self.types)
            .map(|j| {
                let coeff_var = self
                    .coeff
                    .get(&k)
                    .map(|row| model.functional_moments(j, row).expect("type in range").1)
                    .unwrap_or(0.0);
                let noise_var = self
                    .noise
                    .get(&(k, j))
                    .map(NoiseLaw::variance)
                    .unwrap_or(0.0);
                coeff_var + noise_var
            })
            .collect()
    }

    /// Non-zero entries of `k -> E Phi(k)`.
    pub fn mean_table(&self) -> BTreeMap<i64, CRow> {
        let mut ks: Vec<i64> = self.base.keys().copied().collect();
        ks.extend(self.noise.keys().map(|(k, _)| *k));
        ks.sort_unstable();
        ks.dedup();
        ks.into_iter()
            .map(|k| (k, self.mean(k)))
            .filter(|(_, r)| r.iter().any(|z| *z != C64::new(0.0, 0.0)))
            .collect()
    }

    /// Value for one individual with a given offspring column and noise draw.
    pub fn evaluate(
        &self,
        k: i64,
        j: usize,
        offspring: &[u64],
        noise: C64,
        model: &BranchingModel,
    ) -> C64 {
        let mut value = noise;
        if let Some(row) = self.base.get(&k) {
            value += row[j];
        }
        if let Some(row) = self.coeff.get(&k) {
            let dev: Vec<f64> = offspring
                .iter()
                .enumerate()
                .map(|(i, &n)| n as f64 - model.mean()[(i, j)])
                .collect();
            value += dot_real(row, &dev);
        }
        value
    }

    /// Drops every entry below age `k_low`.
    pub fn truncated_below(&self, k_low: i64) -> Self {
        Self {
            types: self.types,
            base: self
                .base
                .range(k_low..)
                .map(|(k, r)| (*k, r.clone()))
                .collect(),
            coeff: self
                .coeff
                .range(k_low..)
                .map(|(k, r)| (*k, r.clone()))
                .collect(),
            noise: self
                .noise
                .iter()
                .filter(|((k, _), _)| *k >= k_low)
                .map(|(key, law)| (*key, law.clone()))
                .collect(),
            discarded_tail: self.discarded_tail,
        }
    }

    /// `c * Phi`.
    pub fn scaled(&self, factor: C64) -> Self {
        Self {
            types: self.types,
            base: self.base.iter().map(|(k, r)| (*k, r * factor)).collect(),
            coeff: self.coeff.iter().map(|(k, r)| (*k, r * factor)).collect(),
            noise: self
                .noise
                .iter()
                .map(|(key, law)| {
                    let outcomes = law.outcomes.iter().map(|(p, x)| (*p, x * factor)).collect();
                    (*key, NoiseLaw { outcomes })
                })
                .collect(),
            discarded_tail: self.discarded_tail * factor.norm_sqr(),
        }
    }

    pub fn assumption_sums(
        &self,
        spectral: &SpectralData,
        model: &BranchingModel,
    ) -> AssumptionSums {
        let (rho, theta) = (spectral.rho, spectral.theta);
        let mut mean_sum = 0.0;
        let mut variance_sum = 0.0;
        if let Some((lo, hi)) = self.support() {
            for k in lo..=hi {
                let m = row_norm(&self.mean(k));
                mean_sum += m * (rho.powi(-k as i32) + theta.powi(-k as i32));
                let v = self
                    .variance(k, model)
                    .iter()
                    .map(|x| x * x)
                    .sum::<f64>()
                    .sqrt();
                variance_sum += v * rho.powi(-k as i32);
            }
        }
        AssumptionSums {
            mean_sum,
            variance_sum,
            discarded_tail: self.discarded_tail,
        }
    }
}

/// Which part of the mean matrix the star transform is taken against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionSelector {
    /// `sum_{l >= 0} Phi(k-1-l) A^l (L - A)`.
    Full,
    /// Recentered against `x1 pi1 Z_n` (super-critical part).
    Super,
    /// Recentered against `x2 pi2 Z_n` (critical part).
    Critical,
    /// `sum_{l >= 0} Phi(k-1-l) pi3 A^l (L - A)`.
    Sub,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TailCertificate {
    /// Finitely many non-zero rows.
    Finite,
    /// Geometric tail beyond the materialized range, with a bound on its contribution.
    Geometric { ratio: f64, bound: f64 },
    /// The squared-norm series does not converge.
    Divergent,
}

/// Centered characteristic `k -> R(k) (L - A)` with `d x J` coefficient matrices.
#[derive(Clone, Debug)]
pub struct StarCharacteristic {
    pub selector: ProjectionSelector,
    pub rows: BTreeMap<i64, CMat>,
    pub tail: TailCertificate,
    /// `sum_k E||Phi*(k)||^2 rho^-k` over the materialized rows, when the full
    /// series converges; the tail is bounded by the certificate.
    pub square_sum: Option<f64>,
}

impl StarCharacteristic {
    /// The `i`-th row as a one-dimensional characteristic.
    pub fn row(&self, i: usize) -> Result<Characteristic> {
        let types = self.rows.values().next().map(|m| m.ncols()).unwrap_or(0);
        let mut phi = Characteristic::new(types);
        for (k, m) in &self.rows {
            let r = CRow::from_iterator(m.ncols(), m.row(i).iter().copied());
            if r.iter().any(|z| z.norm() > 0.0) {
                phi.set_coeff(*k, r)?;
            }
        }
        Ok(phi)
    }

    /// `E||R(k)(L - A)||_F^2 = sum_j tr(R Cov_j R^*)`.
    pub fn expected_square_norm(rk: &CMat, model: &BranchingModel) -> f64 {
        let mut total = 0.0;
        for j in 0..model.types() {
            let cov = crate::linalg::complexify(model.covariance(j));
            // A variance; round-off can push an exact zero slightly negative.
            total += (rk * cov * rk.adjoint()).trace().re.max(0.0);
        }
        total
    }
}

/// Turns a one-dimensional mean table into `1 x J` matrices.
pub fn as_matrix_table(table: &BTreeMap<i64, CRow>) -> BTreeMap<i64, CMat> {
    table
        .iter()
        .map(|(k, r)| (*k, CMat::from_row_slice(1, r.len(), r.as_slice())))
        .collect()
}

/// `M_l = P A^l` with `P` the selector's projection; negative `l` uses the
/// restricted inverse on the selected subspace.
struct ProjectedPowers {
    forward: Vec<CMat>,
    backward: Vec<CMat>,
}

impl ProjectedPowers {
    fn new(
        proj: &CMat,
        a: &CMat,
        a_inv: Option<&CMat>,
        max_forward: usize,
        max_backward: usize,
    ) -> Self {
        let mut forward = Vec::with_capacity(max_forward + 1);
        let mut m = proj.clone();
        for _ in 0..=max_forward {
            forward.push(m.clone());
            m = &m * a;
        }
        let mut backward = vec![proj.clone()];
        if let Some(inv) = a_inv {
            let mut m = proj.clone();
            for _ in 0..max_backward {
                m = &m * inv;
                backward.push(m.clone());
            }
        }
        Self { forward, backward }
    }

    fn get(&self, l: i64) -> &CMat {
        if l >= 0 {
            &self.forward[l as usize]
        } else {
            &self.backward[l.unsigned_abs() as usize]
        }
    }
}

/// Star transform of a deterministic `d x J` table.
///
/// For [`ProjectionSelector::Full`] and [`ProjectionSelector::Sub`] the rows
/// are materialized on `kmin + 1 ..= k_max`; the super and critical variants
/// have finite support and are materialized entirely.
pub fn star_transform(
    table: &BTreeMap<i64, CMat>,
    spectral: &SpectralData,
    model: &BranchingModel,
    selector: ProjectionSelector,
    k_max: i64,
) -> Result<StarCharacteristic> {
    let (Some((&kmin, _)), Some((&kmax, _))) = (table.first_key_value(), table.last_key_value())
    else {
        return Ok(StarCharacteristic {
            selector,
            rows: BTreeMap::new(),
            tail: TailCertificate::Finite,
            square_sum: Some(0.0),
        });
    };
    let dim = spectral.dim();
    let a = spectral.mean_complex();

    let mut rows = BTreeMap::new();
    let zero_like = |m: &CMat| CMat::zeros(m.nrows(), m.ncols());
    let first = table.values().next().expect("non-empty table");

    match selector {
        ProjectionSelector::Full | ProjectionSelector::Sub => {
            let proj = if selector == ProjectionSelector::Full {
                identity(dim)
            } else {
                spectral.pi3.clone()
            };
            let max_l = (k_max - 1 - kmin).max(0) as usize;
            let powers = ProjectedPowers::new(&proj, &a, None, max_l, 0);
            for k in kmin + 1..=k_max {
                let mut r = zero_like(first);
                let l_lo = (k - 1 - kmax).max(0);
                for l in l_lo..=k - 1 - kmin {
                    if let Some(phi) = table.get(&(k - 1 - l)) {
                        r += phi * powers.get(l);
                    }
                }
                rows.insert(k, r);
            }
        }
        ProjectionSelector::Super | ProjectionSelector::Critical => {
            let (proj, a_i, a_i_inv) = if selector == ProjectionSelector::Super {
                (&spectral.pi1, &spectral.a1, &spectral.a1_inv)
            } else {
                (&spectral.pi2, &spectral.a2, &spectral.a2_inv)
            };
            let powers = ProjectedPowers::new(
                proj,
                a_i,
                Some(a_i_inv),
                (-1 - kmin).max(0) as usize,
                kmax.max(0) as usize,
            );
            for k in kmin + 1..=0 {
                let mut r = zero_like(first);
                for l in 0..=k - 1 - kmin {
                    if let Some(phi) = table.get(&(k - 1 - l)) {
                        r += phi * powers.get(l);
                    }
                }
                rows.insert(k, r);
            }
            for k in 1..=kmax {
                let mut r = zero_like(first);
                for l in (k - 1 - kmax)..=-1 {
                    if let Some(phi) = table.get(&(k - 1 - l)) {
                        r -= phi * powers.get(l);
                    }
                }
                rows.insert(k, r);
            }
        }
    }

    let rho = spectral.rho;
    let square_sum: f64 = rows
        .iter()
        .map(|(k, r)| StarCharacteristic::expected_square_norm(r, model) * rho.powi(-*k as i32))
        .sum();

    let tail = match selector {
        ProjectionSelector::Super | ProjectionSelector::Critical => TailCertificate::Finite,
        ProjectionSelector::Full | ProjectionSelector::Sub => match rows.last_key_value() {
            Some((&k_last, r_last)) if k_last > kmax => {
                let leaking = r_last * (&spectral.pi1 + &spectral.pi2);
                let leak = frobenius(&leaking);
                if leak > 1e-9 * frobenius(r_last).max(1e-300) && leak > 1e-300 {
                    TailCertificate::Divergent
                } else {
                    let q = spectral.theta * spectral.theta / rho;
                    let cov_norm: f64 = model
                        .covariances()
                        .iter()
                        .map(|m| m.iter().map(|x| x * x).sum::<f64>().sqrt())
                        .sum();
                    let bound = rho.powi(-k_last as i32)
                        * frobenius(r_last).powi(2)
                        * cov_norm
                        * spectral.theta_constant.powi(2)
                        * q
                        / (1.0 - q);
                    TailCertificate::Geometric { ratio: q, bound }
                }
            }
            _ => TailCertificate::Divergent,
        },
    };
    let square_sum = match &tail {
        TailCertificate::Divergent => None,
        TailCertificate::Finite => Some(square_sum),
        TailCertificate::Geometric { bound, .. } => bound.is_finite().then_some(square_sum),
    };
    Ok(StarCharacteristic {
        selector,
        rows,
        tail,
        square_sum,
    })
}

/// Star transform of a one-dimensional deterministic characteristic.
pub fn star_of(
    phi: &Characteristic,
    spectral: &SpectralData,
    model: &BranchingModel,
    selector: ProjectionSelector,
    k_max: i64,
) -> Result<StarCharacteristic> {
    if !phi.is_deterministic() {
        return Err(Error::InvalidCharacteristic(
            "star transform needs a deterministic characteristic".into(),
        ));
    }
    star_transform(
        &as_matrix_table(&phi.mean_table()),
        spectral,
        model,
        selector,
        k_max,
    )
}

/// `-x1 A1^{k-1} pi1 (L - A) 1{k <= 0}`, the fluctuation of `x1 A1^n W^(1)_n`
/// around its limit, truncated once `rho^-k ||coeff(k)||^2 max_j ||Cov L^(j)||`
/// drops below `eps_tail`.
pub fn martingale_gap_characteristic(
    spectral: &SpectralData,
    model: &BranchingModel,
    x1: &CRow,
    eps_tail: f64,
) -> Characteristic {
    let types = spectral.dim();
    let mut phi = Characteristic::new(types);
    if row_norm(x1) == 0.0 {
        return phi;
    }
    let cov_max = model
        .covariances()
        .iter()
        .map(|m| m.iter().map(|x| x * x).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let rho = spectral.rho;
    // coeff(0) = -x1 A1^{-1} pi1
    let mut row = -(x1 * &spectral.a1_inv * &spectral.pi1);
    let mut k = 0i64;
    loop {
        // rho^-k |row|^2 without forming rho^-k on its own.
        let weight = (row_norm(&row) * rho.powf(-(k as f64) / 2.0)).powi(2) * cov_max;
        if weight < eps_tail || k < -100_000 {
            let q = rho.powf(-spectral.delta);
            phi.discarded_tail = weight * spectral.delta_constant.max(1.0) / (1.0 - q);
            break;
        }
        phi.coeff.insert(k, row.clone());
        row = &row * &spectral.a1_inv;
        k -= 1;
    }
    phi
}

/// The same characteristic restricted to ages `-depth ..= 0`; counting it at
/// generation `n` gives `x1 A1^n (W^(1)_n - W^(1)_{n+depth+1})` exactly.
pub fn martingale_gap_window(spectral: &SpectralData, x1: &CRow, depth: u32) -> Characteristic {
    let mut phi = Characteristic::new(spectral.dim());
    let mut row = -(x1 * &spectral.a1_inv * &spectral.pi1);
    for k in (-(depth as i64)..=0).rev() {
        phi.coeff.insert(k, row.clone());
        row = &row * &spectral.a1_inv;
    }
    phi
}

/// `E Z_n^Phi = sum_m E Phi(n - m) A^m Z_0` over all generations `m >= 0`.
pub fn expected_count(phi: &Characteristic, spectral: &SpectralData, z0: &[f64], n: i64) -> C64 {
    let table = phi.mean_table();
    let Some((&kmin, _)) = table.first_key_value() else {
        return c(0.0);
    };
    let a = spectral.mean_complex();
    let mut az = nalgebra::DVector::from_iterator(z0.len(), z0.iter().map(|&x| c(x)));
    let mut total = c(0.0);
    for m in 0..=(n - kmin).max(-1) {
        if let Some(row) = table.get(&(n - m)) {
            total += (row * &az)[0];
        }
        az = &a * az;
    }
    total
}
