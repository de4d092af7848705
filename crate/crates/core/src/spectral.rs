//! Spectral tri-partition of the mean matrix around the circle `|z| = sqrt(rho)`.
//!
//! Eigenvalues come from a complex Schur decomposition. Eigenvalues closer
//! than the clustering radius are merged into one generalized eigenspace
//! `ker (A - lambda I)^m`, whose basis is read off the smallest singular
//! vectors. The projections `pi_lambda` are the oblique spectral projections
//! along the complementary generalized eigenspaces.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{c, complexify, frobenius, identity, max_abs, powi, CMat, C64};

pub const DEFAULT_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EigenClass {
    /// `|lambda| > sqrt(rho)`.
    Super,
    /// `|lambda| = sqrt(rho)` within tolerance.
    Critical,
    /// `|lambda| < sqrt(rho)`.
    Sub,
}

#[derive(Clone, Debug)]
pub struct EigenCluster {
    pub value: C64,
    pub multiplicity: usize,
    pub projection: CMat,
    /// Smallest `p` with `((A - lambda I) pi_lambda)^p = 0`.
    pub nilpotent_index: usize,
    pub class: EigenClass,
    /// `|lambda| - sqrt(rho)`.
    pub margin: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Restricted {
    /// `A_1 = A pi1 + (I - pi1)`.
    Super,
    /// `A_2 = A pi2 + (I - pi2)`.
    Critical,
}

/// Largest residual of each algebraic identity, recorded at construction.
#[derive(Clone, Debug, Default, Serialize)]
pub struct Residuals {
    pub partition_of_unity: f64,
    pub idempotency: f64,
    pub commutation: f64,
    pub orthogonality: f64,
    pub right_eigenvector: f64,
    pub left_eigenvector: f64,
    pub normalization: f64,
    pub super_inverse: f64,
    pub critical_inverse: f64,
    pub nilpotency: f64,
    pub jordan_commutation: f64,
    pub jordan_sum: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.entries().iter().map(|(_, r)| *r).fold(0.0, f64::max)
    }

    pub fn entries(&self) -> [(&'static str, f64); 12] {
        [
            ("partition_of_unity", self.partition_of_unity),
            ("idempotency", self.idempotency),
            ("commutation", self.commutation),
            ("orthogonality", self.orthogonality),
            ("right_eigenvector", self.right_eigenvector),
            ("left_eigenvector", self.left_eigenvector),
            ("normalization", self.normalization),
            ("super_inverse", self.super_inverse),
            ("critical_inverse", self.critical_inverse),
            ("nilpotency", self.nilpotency),
            ("jordan_commutation", self.jordan_commutation),
            ("jordan_sum", self.jordan_sum),
        ]
    }
}

#[derive(Clone, Debug)]
pub struct SpectralData {
    pub mean: DMatrix<f64>,
    pub rho: f64,
    /// Right Perron vector, `<u, v> = 1`.
    pub u: Vec<f64>,
    /// Left Perron vector, normalized to a probability vector.
    pub v: Vec<f64>,
    pub clusters: Vec<EigenCluster>,
    pub pi1: CMat,
    pub pi2: CMat,
    pub pi3: CMat,
    pub a1: CMat,
    pub a2: CMat,
    pub a1_inv: CMat,
    pub a2_inv: CMat,
    /// Diagonalizable part of `pi2 A`.
    pub d: CMat,
    /// Nilpotent part of `pi2 A`.
    pub n: CMat,
    /// Decay rate with `||pi3 A^i|| <= theta_constant * theta^i`.
    pub theta: f64,
    pub theta_constant: f64,
    /// Gap with `||A1^{-i} pi1||^2 <= delta_constant * rho^{-(1 + delta) i}`.
    pub delta: f64,
    pub delta_constant: f64,
    pub tol: f64,
    pub residuals: Residuals,
}

/// Spectral radius of a real matrix.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    eigenvalues(&complexify(a))
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

fn eigenvalues(a: &CMat) -> Vec<C64> {
    let schur = a.clone().schur();
    let (_, t) = schur.unpack();
    (0..t.nrows()).map(|i| t[(i, i)]).collect()
}

/// Group eigenvalues whose distance chains below `radius`.
fn cluster_eigenvalues(values: &[C64], radius: f64) -> Vec<Vec<C64>> {
    let n = values.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while p[r] != r {
            r = p[r];
        }
        p[i] = r;
        r
    }
    for i in 0..n {
        for j in i + 1..n {
            if (values[i] - values[j]).norm() < radius {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                parent[ri] = rj;
            }
        }
    }
    let mut groups: Vec<(usize, Vec<C64>)> = Vec::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        match groups.iter_mut().find(|(root, _)| *root == r) {
            Some((_, g)) => g.push(values[i]),
            None => groups.push((r, vec![values[i]])),
        }
    }
    groups.into_iter().map(|(_, g)| g).collect()
}

/// Orthonormal basis (as columns) of the `dim` smallest right singular directions of `k`.
fn near_kernel(k: &CMat, dim: usize) -> CMat {
    let n = k.ncols();
    let svd = k.clone().svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
    let mut basis = CMat::zeros(n, dim);
    for (col, &idx) in order.iter().take(dim).enumerate() {
        for r in 0..n {
            basis[(r, col)] = v_t[(idx, r)].conj();
        }
    }
    basis
}

pub fn spectral_decompose(a: &DMatrix<f64>, tol: f64) -> Result<SpectralData> {
    assert!(tol > 0.0, "tolerance must be positive");
    let dim = a.nrows();
    if a.iter().all(|&x| x == 0.0) {
        return Err(Error::ZeroMatrix);
    }
    if a.iter().any(|&x| x < 0.0 || !x.is_finite()) {
        return Err(Error::InvalidModel(
            "mean matrix must be finite and non-negative".into(),
        ));
    }
    let ac = complexify(a);
    let scale = a.iter().fold(1.0f64, |m, &x| m.max(x.abs()));

    // Defective eigenvalues split at O(eps^(1/m)), so merging uses sqrt(tol).
    let radius = tol.max(tol.sqrt() * scale);
    let groups = cluster_eigenvalues(&eigenvalues(&ac), radius);

    let mut centers = Vec::with_capacity(groups.len());
    let mut bases = Vec::with_capacity(groups.len());
    for g in &groups {
        let m = g.len();
        let center = g.iter().sum::<C64>() / m as f64;
        let shifted = &ac - identity(dim) * center;
        bases.push(near_kernel(&powi(&shifted, m as u64), m));
        centers.push(center);
    }

    let mut p = CMat::zeros(dim, dim);
    let mut offsets = Vec::with_capacity(groups.len());
    let mut col = 0;
    for b in &bases {
        offsets.push(col);
        p.view_mut((0, col), (dim, b.ncols())).copy_from(b);
        col += b.ncols();
    }
    let p_inv = p.clone().try_inverse().ok_or(Error::IllConditioned {
        check: "generalized eigenbasis",
        residual: f64::INFINITY,
        limit: 100.0 * tol,
    })?;

    let perron_idx = (0..centers.len())
        .max_by(|&i, &j| {
            let (zi, zj) = (centers[i], centers[j]);
            zi.norm()
                .total_cmp(&zj.norm())
                .then(zi.re.total_cmp(&zj.re))
        })
        .expect("non-empty spectrum");
    let rho = centers[perron_idx].re;
    if rho <= 0.0 {
        return Err(Error::InvalidModel("Perron root is not positive".into()));
    }
    let sqrt_rho = rho.sqrt();

    let mut clusters = Vec::with_capacity(groups.len());
    for (idx, (center, basis)) in centers.iter().zip(&bases).enumerate() {
        let m = basis.ncols();
        let proj = p.view((0, offsets[idx]), (dim, m)) * p_inv.view((offsets[idx], 0), (m, dim));
        let margin = center.norm() - sqrt_rho;
        let class = if margin > tol {
            EigenClass::Super
        } else if margin < -tol {
            EigenClass::Sub
        } else {
            EigenClass::Critical
        };
        let nil = (&ac - identity(dim) * *center) * &proj;
        let nil_tol = 100.0 * tol;
        let mut nilpotent_index = m;
        let mut power = nil.clone();
        for q in 1..=m {
            if max_abs(&power) <= nil_tol * scale.powi(q as i32) {
                nilpotent_index = q;
                break;
            }
            power = &power * &nil;
        }
        clusters.push(EigenCluster {
            value: *center,
            multiplicity: m,
            projection: proj,
            nilpotent_index,
            class,
            margin,
        });
    }

    let pi_rho = &clusters[perron_idx].projection;
    let (mut i_star, mut j_star, mut best) = (0, 0, -1.0);
    for i in 0..dim {
        for j in 0..dim {
            if pi_rho[(i, j)].norm() > best {
                best = pi_rho[(i, j)].norm();
                i_star = i;
                j_star = j;
            }
        }
    }
    let row: Vec<f64> = (0..dim).map(|j| pi_rho[(i_star, j)].re).collect();
    let column: Vec<f64> = (0..dim).map(|i| pi_rho[(i, j_star)].re).collect();
    let row_sum: f64 = row.iter().sum();
    let v: Vec<f64> = row.iter().map(|x| x / row_sum).collect();
    let vc: f64 = v.iter().zip(&column).map(|(a, b)| a * b).sum();
    let u: Vec<f64> = column.iter().map(|x| x / vc).collect();

    let sum_class = |class: EigenClass| {
        clusters
            .iter()
            .filter(|cl| cl.class == class)
            .fold(CMat::zeros(dim, dim), |acc, cl| acc + &cl.projection)
    };
    let pi1 = sum_class(EigenClass::Super);
    let pi2 = sum_class(EigenClass::Critical);
    let pi3 = sum_class(EigenClass::Sub);
    let id = identity(dim);

    let a1 = &ac * &pi1 + (&id - &pi1);
    let a2 = &ac * &pi2 + (&id - &pi2);
    let a1_inv = a1.clone().try_inverse().ok_or(Error::IllConditioned {
        check: "A1 invertibility",
        residual: f64::INFINITY,
        limit: 100.0 * tol,
    })?;
    let a2_inv = a2.clone().try_inverse().ok_or(Error::IllConditioned {
        check: "A2 invertibility",
        residual: f64::INFINITY,
        limit: 100.0 * tol,
    })?;

    let mut d = CMat::zeros(dim, dim);
    let mut n = CMat::zeros(dim, dim);
    for cl in clusters
        .iter()
        .filter(|cl| cl.class == EigenClass::Critical)
    {
        d += &cl.projection * cl.value;
        n += (&ac - &id * cl.value) * &cl.projection;
    }

    let sub_max = clusters
        .iter()
        .filter(|cl| cl.class == EigenClass::Sub)
        .map(|cl| cl.value.norm())
        .fold(0.0, f64::max);
    let theta = choose_theta(sub_max, sqrt_rho);
    // Steps are sandwiched by the projection so round-off leaking into the
    // complement is not amplified.
    let theta_constant = sup_ratio(&pi3, &(&pi3 * &ac * &pi3 * c(1.0 / theta)), 1.0);

    let super_min = clusters
        .iter()
        .filter(|cl| cl.class == EigenClass::Super)
        .map(|cl| cl.value.norm())
        .fold(f64::INFINITY, f64::min);
    let delta = 0.9 * (2.0 * super_min.ln() / rho.ln() - 1.0);
    let step = &pi1 * &a1_inv * &pi1 * c(rho.powf((1.0 + delta) / 2.0));
    let delta_constant = sup_ratio(&pi1, &step, 2.0);

    let mut data = SpectralData {
        mean: a.clone(),
        rho,
        u,
        v,
        clusters,
        pi1,
        pi2,
        pi3,
        a1,
        a2,
        a1_inv,
        a2_inv,
        d,
        n,
        theta,
        theta_constant,
        delta,
        delta_constant,
        tol,
        residuals: Residuals::default(),
    };
    data.residuals = data.compute_residuals();
    let limit = 100.0 * tol;
    for (check, residual) in data.residuals.entries() {
        if !(residual <= limit) {
            return Err(Error::IllConditioned {
                check,
                residual,
                limit,
            });
        }
    }
    Ok(data)
}

fn choose_theta(sub_max: f64, sqrt_rho: f64) -> f64 {
    let margin = if 1.01 * sub_max < sqrt_rho {
        1.01 * sub_max
    } else {
        0.5 * (sub_max + sqrt_rho)
    };
    margin.max(0.1 * sqrt_rho)
}

/// `sup_i ||start * step^i||_F^exponent` over a range long enough for the
/// sequence to have passed its peak and decayed by three orders of magnitude.
fn sup_ratio(start: &CMat, step: &CMat, exponent: f64) -> f64 {
    let mut m = start.clone();
    let mut best = frobenius(&m).powf(exponent);
    let mut argmax = 0usize;
    if best == 0.0 && max_abs(step) == 0.0 {
        return 0.0;
    }
    for i in 1..200_000usize {
        m = &m * step;
        let value = frobenius(&m).powf(exponent);
        if !value.is_finite() {
            return f64::INFINITY;
        }
        if value > best {
            best = value;
            argmax = i;
        }
        if i >= 64 && i >= 2 * argmax + 64 && value <= 1e-3 * best {
            break;
        }
    }
    best
}

impl SpectralData {
    pub fn dim(&self) -> usize {
        self.mean.nrows()
    }

    pub fn mean_complex(&self) -> CMat {
        complexify(&self.mean)
    }

    pub fn sqrt_rho(&self) -> f64 {
        self.rho.sqrt()
    }

    pub fn has_critical(&self) -> bool {
        self.clusters
            .iter()
            .any(|cl| cl.class == EigenClass::Critical)
    }

    pub fn critical_clusters(&self) -> impl Iterator<Item = &EigenCluster> {
        self.clusters
            .iter()
            .filter(|cl| cl.class == EigenClass::Critical)
    }

    /// Largest nilpotent index among critical eigenvalues (0 without any).
    pub fn critical_block_size(&self) -> usize {
        self.critical_clusters()
            .map(|cl| cl.nilpotent_index)
            .max()
            .unwrap_or(0)
    }

    /// `A^k` for `k >= 0`.
    pub fn a_power(&self, k: u64) -> CMat {
        powi(&self.mean_complex(), k)
    }

    /// `A_1^k` or `A_2^k` for any integer `k`.
    pub fn matrix_power_restricted(&self, which: Restricted, k: i64) -> Result<CMat> {
        let (fwd, inv) = match which {
            Restricted::Super => (&self.a1, &self.a1_inv),
            Restricted::Critical => (&self.a2, &self.a2_inv),
        };
        let m = if k >= 0 {
            powi(fwd, k as u64)
        } else {
            powi(inv, k.unsigned_abs())
        };
        if crate::linalg::all_finite(&m) {
            Ok(m)
        } else {
            Err(Error::Overflow(format!(
                "restricted power with exponent {k}"
            )))
        }
    }

    /// `pi A^k pi` on the super- or critical part, built from projected steps.
    ///
    /// Powers of the full restricted matrix keep the identity on the
    /// complement, whose rounding error is not scaled by `rho^k` and swamps
    /// the restricted block for large `|k|`. Projecting every factor keeps
    /// the error relative to the block.
    pub fn projected_power(&self, which: Restricted, k: i64) -> Result<CMat> {
        let (fwd, inv, pi) = match which {
            Restricted::Super => (&self.a1, &self.a1_inv, &self.pi1),
            Restricted::Critical => (&self.a2, &self.a2_inv, &self.pi2),
        };
        let step = pi * if k >= 0 { fwd } else { inv } * pi;
        let mut m = pi.clone();
        for _ in 0..k.unsigned_abs() {
            m = &step * m;
        }
        if crate::linalg::all_finite(&m) {
            Ok(m)
        } else {
            Err(Error::Overflow(format!(
                "projected power with exponent {k}"
            )))
        }
    }

    fn compute_residuals(&self) -> Residuals {
        let dim = self.dim();
        let id = identity(dim);
        let a = self.mean_complex();
        let mut r = Residuals {
            partition_of_unity: max_abs(&(&self.pi1 + &self.pi2 + &self.pi3 - &id)),
            ..Residuals::default()
        };
        for (i, cl) in self.clusters.iter().enumerate() {
            let p = &cl.projection;
            r.idempotency = r.idempotency.max(max_abs(&(p * p - p)));
            r.commutation = r.commutation.max(max_abs(&(p * &a - &a * p)));
            for other in &self.clusters[i + 1..] {
                r.orthogonality = r
                    .orthogonality
                    .max(max_abs(&(p * &other.projection)))
                    .max(max_abs(&(&other.projection * p)));
            }
        }
        for i in 0..dim {
            let au: f64 = (0..dim).map(|j| self.mean[(i, j)] * self.u[j]).sum();
            let va: f64 = (0..dim).map(|j| self.v[j] * self.mean[(j, i)]).sum();
            r.right_eigenvector = r.right_eigenvector.max((au - self.rho * self.u[i]).abs());
            r.left_eigenvector = r.left_eigenvector.max((va - self.rho * self.v[i]).abs());
        }
        let uv: f64 = self.u.iter().zip(&self.v).map(|(a, b)| a * b).sum();
        r.normalization = (uv - 1.0).abs();
        r.super_inverse = max_abs(&(&self.a1 * &self.a1_inv - &id));
        r.critical_inverse = max_abs(&(&self.a2 * &self.a2_inv - &id));
        r.nilpotency = max_abs(&powi(&self.n, dim as u64));
        r.jordan_commutation = max_abs(&(&self.d * &self.n - &self.n * &self.d));
        r.jordan_sum = max_abs(&(&self.d + &self.n - &self.pi2 * &a));
        r
    }
}
