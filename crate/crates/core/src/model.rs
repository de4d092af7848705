//! Multitype Galton-Watson models with finitely supported offspring laws.
//!
//! Column `j` of the offspring matrix is the random vector of children
//! (counted per type) of one type-`j` parent. Columns of distinct types are
//! sampled independently. All moments are obtained by enumerating the finite
//! outcome tables.

use nalgebra::DMatrix;
use num_rational::Ratio;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{dot_real, CRow, C64};
use crate::spectral;

const PROBABILITY_TOLERANCE: f64 = 1e-12;
const DEGENERACY_TOLERANCE: f64 = 1e-12;

/// A probability given either exactly or as a float.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Probability {
    Exact(Ratio<i64>),
    Float(f64),
}

impl Probability {
    pub fn value(&self) -> f64 {
        match *self {
            Probability::Exact(r) => *r.numer() as f64 / *r.denom() as f64,
            Probability::Float(x) => x,
        }
    }
}

impl From<f64> for Probability {
    fn from(x: f64) -> Self {
        Probability::Float(x)
    }
}

/// Declarative model description; types are 0-based here.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub types: usize,
    /// `offspring[j]` lists `(probability, counts)` where `counts[i]` is the
    /// number of type-`i` children.
    pub offspring: Vec<Vec<(Probability, Vec<i64>)>>,
    pub initial_type: usize,
}

/// One atom of the law of a column `L^(j)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Outcome {
    pub probability: f64,
    pub counts: Vec<u64>,
}

impl Outcome {
    pub fn counts_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }
}

#[derive(Clone, Debug)]
pub struct OffspringLaw {
    columns: Vec<Vec<Outcome>>,
}

impl OffspringLaw {
    pub fn column(&self, j: usize) -> &[Outcome] {
        &self.columns[j]
    }
}

#[derive(Clone, Debug)]
pub struct BranchingModel {
    types: usize,
    law: OffspringLaw,
    initial_type: usize,
    mean: DMatrix<f64>,
    covariances: Vec<DMatrix<f64>>,
}

impl BranchingModel {
    pub fn build(spec: &ModelSpec) -> Result<Self> {
        let types = spec.types;
        if types == 0 {
            return Err(Error::InvalidModel(
                "number of types must be positive".into(),
            ));
        }
        if spec.offspring.len() != types {
            return Err(Error::InvalidModel(format!(
                "expected offspring tables for {} types, got {}",
                types,
                spec.offspring.len()
            )));
        }
        if spec.initial_type >= types {
            return Err(Error::TypeOutOfRange {
                index: spec.initial_type,
                types,
            });
        }

        let mut columns = Vec::with_capacity(types);
        for (j, table) in spec.offspring.iter().enumerate() {
            if table.is_empty() {
                return Err(Error::InvalidModel(format!(
                    "type {j} has no offspring outcomes"
                )));
            }
            check_probabilities(j, table)?;
            let mut outcomes = Vec::with_capacity(table.len());
            for (p, counts) in table {
                if counts.len() != types {
                    return Err(Error::InvalidModel(format!(
                        "type {j}: count vector has length {} instead of {types}",
                        counts.len()
                    )));
                }
                if let Some(neg) = counts.iter().find(|&&c| c < 0) {
                    return Err(Error::InvalidModel(format!(
                        "type {j}: negative offspring count {neg}"
                    )));
                }
                outcomes.push(Outcome {
                    probability: p.value(),
                    counts: counts.iter().map(|&c| c as u64).collect(),
                });
            }
            columns.push(outcomes);
        }

        let mut mean = DMatrix::zeros(types, types);
        let mut covariances = Vec::with_capacity(types);
        for (j, outcomes) in columns.iter().enumerate() {
            let mut m = vec![0.0; types];
            for o in outcomes {
                for (mi, &c) in m.iter_mut().zip(&o.counts) {
                    *mi += o.probability * c as f64;
                }
            }
            let mut cov = DMatrix::zeros(types, types);
            for o in outcomes {
                let d: Vec<f64> = o
                    .counts
                    .iter()
                    .zip(&m)
                    .map(|(&c, mi)| c as f64 - mi)
                    .collect();
                for a in 0..types {
                    for b in 0..types {
                        cov[(a, b)] += o.probability * (d[a] * d[b]);
                    }
                }
            }
            for (i, mi) in m.into_iter().enumerate() {
                mean[(i, j)] = mi;
            }
            covariances.push(cov);
        }

        Ok(Self {
            types,
            law: OffspringLaw { columns },
            initial_type: spec.initial_type,
            mean,
            covariances,
        })
    }

    pub fn types(&self) -> usize {
        self.types
    }

    pub fn initial_type(&self) -> usize {
        self.initial_type
    }

    /// `Z_0 = e_{i0}` as floats.
    pub fn initial_vector(&self) -> Vec<f64> {
        let mut z = vec![0.0; self.types];
        z[self.initial_type] = 1.0;
        z
    }

    /// Mean matrix, `A[(i, j)]` = expected number of type-`i` children of a type-`j` parent.
    pub fn mean(&self) -> &DMatrix<f64> {
        &self.mean
    }

    /// `Cov[L^(j)]`.
    pub fn covariance(&self, j: usize) -> &DMatrix<f64> {
        &self.covariances[j]
    }

    pub fn covariances(&self) -> &[DMatrix<f64>] {
        &self.covariances
    }

    /// Variance of the number of type-`i` children of a type-`j` parent.
    pub fn entry_variance(&self, i: usize, j: usize) -> f64 {
        self.covariances[j][(i, i)]
    }

    pub fn law(&self) -> &OffspringLaw {
        &self.law
    }

    /// Exact support of `L^(j)`.
    pub fn enumerate_column_outcomes(&self, j: usize) -> Result<&[Outcome]> {
        if j >= self.types {
            return Err(Error::TypeOutOfRange {
                index: j,
                types: self.types,
            });
        }
        Ok(self.law.column(j))
    }

    /// Exact mean and variance of `w . L^(j)`, with `E|X - EX|^2` for complex `w`.
    pub fn functional_moments(&self, j: usize, w: &CRow) -> Result<(C64, f64)> {
        let outcomes = self.enumerate_column_outcomes(j)?;
        let mean: C64 = outcomes
            .iter()
            .map(|o| dot_real(w, &o.counts_f64()) * o.probability)
            .sum();
        let var = outcomes
            .iter()
            .map(|o| o.probability * (dot_real(w, &o.counts_f64()) - mean).norm_sqr())
            .sum();
        Ok((mean, var))
    }

    /// `sum_j weights_j Cov[L^(j)]`.
    pub fn weighted_covariance(&self, weights: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.types, self.types);
        for (w, cov) in weights.iter().zip(&self.covariances) {
            m += cov * *w;
        }
        m
    }

    /// True when every column law is a point mass.
    pub fn is_deterministic(&self) -> bool {
        self.covariances
            .iter()
            .all(|c| c.iter().all(|x| x.abs() <= DEGENERACY_TOLERANCE))
    }

    /// True when some type can have no children at all, so extinction is possible.
    pub fn can_go_extinct(&self) -> bool {
        self.law.columns.iter().any(|col| {
            col.iter()
                .any(|o| o.probability > 0.0 && o.counts.iter().all(|&c| c == 0))
        })
    }
}

fn check_probabilities(j: usize, table: &[(Probability, Vec<i64>)]) -> Result<()> {
    for (p, _) in table {
        let v = p.value();
        if !(0.0..=1.0).contains(&v) || !v.is_finite() {
            return Err(Error::InvalidModel(format!(
                "type {j}: probability {v} outside [0, 1]"
            )));
        }
    }
    let exact: Option<Vec<Ratio<i64>>> = table
        .iter()
        .map(|(p, _)| match p {
            Probability::Exact(r) => Some(*r),
            Probability::Float(_) => None,
        })
        .collect();
    match exact {
        Some(rs) => {
            let total = rs.iter().fold(Ratio::from_integer(0), |acc, r| acc + r);
            if total != Ratio::from_integer(1) {
                return Err(Error::InvalidModel(format!(
                    "type {j}: probabilities sum to {total} instead of 1"
                )));
            }
        }
        None => {
            let total: f64 = table.iter().map(|(p, _)| p.value()).sum();
            if (total - 1.0).abs() > PROBABILITY_TOLERANCE {
                return Err(Error::InvalidModel(format!(
                    "type {j}: probabilities sum to {total} instead of 1"
                )));
            }
        }
    }
    Ok(())
}

/// Outcome of checking the standing assumptions on a model.
#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub rho: f64,
    /// Supercritical: `rho > 1`.
    pub supercritical: bool,
    /// Some power `A^n` with `n <= J^2` is entrywise positive.
    pub positively_regular: bool,
    pub primitivity_exponent: Option<usize>,
    /// `sum_j Cov[L^(j)] != 0` (second moments are finite for finite supports).
    pub nondegenerate: bool,
    pub covariance_mass: f64,
}

impl ValidationReport {
    pub fn all_hold(&self) -> bool {
        self.supercritical && self.positively_regular && self.nondegenerate
    }
}

pub fn validate_assumptions(model: &BranchingModel) -> ValidationReport {
    let rho = spectral::spectral_radius(model.mean());
    let primitivity_exponent = primitivity_exponent(model.mean());
    let mut total = DMatrix::<f64>::zeros(model.types, model.types);
    for c in &model.covariances {
        total += c;
    }
    let covariance_mass = total.iter().map(|x| x.abs()).fold(0.0, f64::max);
    ValidationReport {
        rho,
        supercritical: rho > 1.0 + DEGENERACY_TOLERANCE,
        positively_regular: primitivity_exponent.is_some(),
        primitivity_exponent,
        nondegenerate: covariance_mass > DEGENERACY_TOLERANCE,
        covariance_mass,
    }
}

/// Smallest `n <= J^2` with `A^n > 0` entrywise, on the zero pattern of `A`.
pub fn primitivity_exponent(a: &DMatrix<f64>) -> Option<usize> {
    let j = a.nrows();
    let pattern: Vec<Vec<bool>> = (0..j)
        .map(|r| (0..j).map(|s| a[(r, s)] > 0.0).collect())
        .collect();
    let mut power = pattern.clone();
    for n in 1..=j * j {
        if power.iter().all(|row| row.iter().all(|&b| b)) {
            return Some(n);
        }
        let mut next = vec![vec![false; j]; j];
        for r in 0..j {
            for s in 0..j {
                next[r][s] = (0..j).any(|t| power[r][t] && pattern[t][s]);
            }
        }
        power = next;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::real_row;

    fn half() -> Probability {
        Probability::Exact(Ratio::new(1, 2))
    }

    pub(crate) fn s1() -> BranchingModel {
        BranchingModel::build(&ModelSpec {
            types: 1,
            offspring: vec![vec![(half(), vec![1]), (half(), vec![3])]],
            initial_type: 0,
        })
        .unwrap()
    }

    pub(crate) fn s2() -> BranchingModel {
        BranchingModel::build(&ModelSpec {
            types: 2,
            offspring: vec![
                vec![(half(), vec![2, 2]), (half(), vec![4, 0])],
                vec![(half(), vec![2, 2]), (half(), vec![0, 4])],
            ],
            initial_type: 0,
        })
        .unwrap()
    }

    #[test]
    fn single_type_two_point_law() {
        let m = s1();
        assert_eq!(m.mean()[(0, 0)], 2.0);
        assert_eq!(m.entry_variance(0, 0), 1.0);
        let outcomes = m.enumerate_column_outcomes(0).unwrap();
        assert_eq!(outcomes.len(), 2);
        assert_eq!(outcomes[0].counts, vec![1]);
        assert_eq!(outcomes[1].probability, 0.5);
    }

    #[test]
    fn two_type_mean_matrix() {
        let m = s2();
        let expected = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 3.0]);
        assert_eq!(m.mean(), &expected);
        let (mean, var) = m.functional_moments(1, &real_row(&[1.0, -1.0])).unwrap();
        assert_eq!(mean.re, -2.0);
        assert_eq!(var, 4.0);
    }

    #[test]
    fn deterministic_offspring() {
        let m = BranchingModel::build(&ModelSpec {
            types: 1,
            offspring: vec![vec![(Probability::Float(1.0), vec![1])]],
            initial_type: 0,
        })
        .unwrap();
        assert_eq!(m.mean()[(0, 0)], 1.0);
        assert_eq!(m.entry_variance(0, 0), 0.0);
        assert!(m.is_deterministic());
        let report = validate_assumptions(&m);
        assert!(!report.supercritical);
        assert!(!report.nondegenerate);
    }

    #[test]
    fn assumptions_for_reference_models() {
        let r1 = validate_assumptions(&s1());
        assert!((r1.rho - 2.0).abs() < 1e-12);
        assert!(r1.all_hold());
        let r2 = validate_assumptions(&s2());
        assert!((r2.rho - 4.0).abs() < 1e-12);
        assert!(r2.all_hold());
    }

    #[test]
    fn periodic_model_is_not_positively_regular() {
        let m = BranchingModel::build(&ModelSpec {
            types: 2,
            offspring: vec![
                vec![(half(), vec![0, 1]), (half(), vec![0, 3])],
                vec![(half(), vec![1, 0]), (half(), vec![3, 0])],
            ],
            initial_type: 0,
        })
        .unwrap();
        assert!(!validate_assumptions(&m).positively_regular);
    }

    #[test]
    fn rejects_bad_tables() {
        let empty = ModelSpec {
            types: 1,
            offspring: vec![vec![]],
            initial_type: 0,
        };
        assert!(BranchingModel::build(&empty).is_err());

        let bad_sum = ModelSpec {
            types: 1,
            offspring: vec![vec![
                (half(), vec![1]),
                (Probability::Exact(Ratio::new(1, 3)), vec![2]),
            ]],
            initial_type: 0,
        };
        assert!(matches!(
            BranchingModel::build(&bad_sum),
            Err(Error::InvalidModel(_))
        ));

        let negative = ModelSpec {
            types: 1,
            offspring: vec![vec![(Probability::Float(1.0), vec![-1])]],
            initial_type: 0,
        };
        assert!(BranchingModel::build(&negative).is_err());

        assert!(matches!(
            s1().enumerate_column_outcomes(3),
            Err(Error::TypeOutOfRange { index: 3, types: 1 })
        ));
    }

    #[test]
    fn covariance_is_symmetric_psd() {
        let m = s2();
        for j in 0..2 {
            let c = m.covariance(j);
            assert_eq!(c, &c.transpose());
            let eig = c.clone().symmetric_eigen();
            assert!(eig.eigenvalues.iter().all(|&x| x >= -1e-12));
        }
    }
}
