//! Complex dense-matrix helpers shared by the spectral and constants layers.

use nalgebra::{DMatrix, RowDVector};
use num_complex::Complex64;

pub type C64 = Complex64;
/// Complex J x J matrix.
pub type CMat = DMatrix<C64>;
/// Complex 1 x J row vector.
pub type CRow = RowDVector<C64>;

pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

pub fn complexify(a: &DMatrix<f64>) -> CMat {
    a.map(c)
}

pub fn real_row(values: &[f64]) -> CRow {
    CRow::from_iterator(values.len(), values.iter().map(|&v| c(v)))
}

pub fn zero_row(n: usize) -> CRow {
    CRow::zeros(n)
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

/// Largest entry modulus.
pub fn max_abs(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn frobenius(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn row_norm(r: &CRow) -> f64 {
    r.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `m^k` by binary powering, `k >= 0`.
pub fn powi(m: &CMat, mut k: u64) -> CMat {
    let mut result = identity(m.nrows());
    let mut base = m.clone();
    while k > 0 {
        if k & 1 == 1 {
            result = &result * &base;
        }
        k >>= 1;
        if k > 0 {
            base = &base * &base;
        }
    }
    result
}

/// `r M r^*` for a real symmetric `M`; the imaginary part vanishes up to rounding.
pub fn hermitian_form(r: &CRow, m: &DMatrix<f64>) -> f64 {
    let mut acc = 0.0;
    for i in 0..r.len() {
        for j in 0..r.len() {
            acc += (r[i] * r[j].conj()).re * m[(i, j)];
        }
    }
    acc
}

/// Row times a real vector, `r . x`.
pub fn dot_real(r: &CRow, x: &[f64]) -> C64 {
    r.iter().zip(x).map(|(a, &b)| a * b).sum()
}

pub fn all_finite(m: &CMat) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}
