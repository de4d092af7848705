//! Reference models and independent oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use num_rational::Ratio;

use cmj_core::model::{BranchingModel, ModelSpec, Probability};
use cmj_core::spectral::{spectral_decompose, SpectralData, DEFAULT_TOLERANCE};

pub type Column = Vec<((i64, i64), Vec<i64>)>;

pub fn spec(columns: &[Column], initial_type: usize) -> ModelSpec {
    ModelSpec {
        types: columns.len(),
        offspring: columns
            .iter()
            .map(|col| {
                col.iter()
                    .map(|((p, q), counts)| {
                        (Probability::Exact(Ratio::new(*p, *q)), counts.clone())
                    })
                    .collect()
            })
            .collect(),
        initial_type,
    }
}

pub fn build(columns: &[Column]) -> BranchingModel {
    BranchingModel::build(&spec(columns, 0)).expect("valid reference model")
}

pub fn s1() -> BranchingModel {
    build(&[vec![((1, 2), vec![1]), ((1, 2), vec![3])]])
}

pub fn s2() -> BranchingModel {
    build(&[
        vec![((1, 2), vec![2, 2]), ((1, 2), vec![4, 0])],
        vec![((1, 2), vec![2, 2]), ((1, 2), vec![0, 4])],
    ])
}

/// `A = [[3,0,1],[1,3,0],[1,1,2]]`: `rho = 4` and a 2x2 Jordan block at 2.
pub fn jordan() -> BranchingModel {
    build(&[
        vec![((1, 2), vec![2, 2, 2]), ((1, 2), vec![4, 0, 0])],
        vec![((1, 2), vec![0, 4, 2]), ((1, 2), vec![0, 2, 0])],
        vec![((1, 2), vec![2, 0, 4]), ((1, 2), vec![0, 0, 0])],
    ])
}

/// `A = [[2,1],[1,2]]` with two-point noise in every column.
pub fn symmetric() -> BranchingModel {
    build(&[
        vec![((1, 2), vec![1, 0]), ((1, 2), vec![3, 2])],
        vec![((1, 2), vec![0, 1]), ((1, 2), vec![2, 3])],
    ])
}

pub fn three_type() -> BranchingModel {
    build(&[
        vec![((1, 3), vec![1, 1, 0]), ((2, 3), vec![2, 0, 1])],
        vec![((1, 4), vec![0, 2, 1]), ((3, 4), vec![1, 1, 1])],
        vec![((1, 2), vec![1, 0, 2]), ((1, 2), vec![0, 1, 1])],
    ])
}

/// Circulant `A` with rows `(1,1,0)`: `rho = 2` and a complex pair of modulus 1.
pub fn circulant_sub() -> BranchingModel {
    build(&[
        vec![((1, 2), vec![2, 0, 0]), ((1, 2), vec![0, 0, 2])],
        vec![((1, 2), vec![2, 2, 0]), ((1, 2), vec![0, 0, 0])],
        vec![((1, 2), vec![0, 2, 2]), ((1, 2), vec![0, 0, 0])],
    ])
}

/// Circulant `A` with rows `(1,2,0)`: `rho = 3` and a complex pair on the critical circle.
pub fn circulant_critical() -> BranchingModel {
    build(&[
        vec![((1, 2), vec![2, 0, 4]), ((1, 2), vec![0, 0, 0])],
        vec![((1, 2), vec![4, 2, 0]), ((1, 2), vec![0, 0, 0])],
        vec![((1, 2), vec![0, 1, 1]), ((1, 2), vec![0, 3, 1])],
    ])
}

/// Circulant `A` with rows `(3,1,0)`: `rho = 4` and a super-critical complex pair.
pub fn circulant_super() -> BranchingModel {
    build(&[
        vec![((1, 2), vec![2, 0, 2]), ((1, 2), vec![4, 0, 0])],
        vec![((1, 2), vec![2, 3, 0]), ((1, 2), vec![0, 3, 0])],
        vec![((1, 2), vec![0, 2, 2]), ((1, 2), vec![0, 0, 4])],
    ])
}

pub fn deterministic() -> BranchingModel {
    build(&[vec![((1, 1), vec![2, 1])], vec![((1, 1), vec![1, 2])]])
}

pub fn spectral(model: &BranchingModel) -> SpectralData {
    spectral_decompose(model.mean(), DEFAULT_TOLERANCE).expect("decomposable")
}

/// Mean matrix assembled directly from the offspring specification.
pub fn mean_oracle(spec: &ModelSpec) -> DMatrix<f64> {
    let j = spec.types;
    let mut a = DMatrix::zeros(j, j);
    for (col, outcomes) in spec.offspring.iter().enumerate() {
        for (p, counts) in outcomes {
            for (i, &x) in counts.iter().enumerate() {
                a[(i, col)] += p.value() * x as f64;
            }
        }
    }
    a
}

/// `Cov L^(j)` assembled directly from the offspring specification.
pub fn covariance_oracle(spec: &ModelSpec, col: usize) -> DMatrix<f64> {
    let j = spec.types;
    let mean = mean_oracle(spec);
    let mut c = DMatrix::zeros(j, j);
    for (p, counts) in &spec.offspring[col] {
        for a in 0..j {
            for b in 0..j {
                c[(a, b)] += p.value()
                    * (counts[a] as f64 - mean[(a, col)])
                    * (counts[b] as f64 - mean[(b, col)]);
            }
        }
    }
    c
}

/// Exact `Cov Z_n / rho^n` from `Z_0 = e_i0`, through
/// `C_{n+1} = A C_n A^T + sum_j (E Z_n)_j Cov L^(j)` carried in scaled form.
pub fn scaled_population_covariance(
    model: &BranchingModel,
    rho: f64,
    i0: usize,
    n_max: usize,
) -> Vec<DMatrix<f64>> {
    let j = model.types();
    let a = model.mean();
    let mut mean = nalgebra::DVector::zeros(j);
    mean[i0] = 1.0;
    let mut cov = DMatrix::zeros(j, j);
    let mut out = vec![cov.clone()];
    for _ in 0..n_max {
        let mut next = a * &cov * a.transpose();
        for col in 0..j {
            next += model.covariance(col) * mean[col];
        }
        cov = next / rho;
        mean = a * mean / rho;
        out.push(cov.clone());
    }
    out
}
