//! Pathwise identities between counted processes, checked on simulated trees.

use nalgebra::DVector;

use crate::characteristics::{
    expected_count, martingale_gap_window, star_of, Characteristic, ProjectionSelector,
};
use crate::error::{Error, Result};
use crate::linalg::{c, CRow, C64};
use crate::model::BranchingModel;
use crate::report::StarCheckEntry;
use crate::simulator::{run_paths, Simulator};
use crate::spectral::{Restricted, SpectralData};

pub const IDENTITY_TOLERANCE: f64 = 1e-9;

fn relative_error(lhs: C64, rhs: C64, scale: f64) -> f64 {
    (lhs - rhs).norm() / scale.max(1.0)
}

/// `Z_t^{Phi*} = Z_t^Phi - E Z_t^Phi` for `t = 0..=n_max` on every path.
pub fn recentering_check(
    name: &str,
    model: &BranchingModel,
    spectral: &SpectralData,
    phi: &Characteristic,
    n_max: u32,
    replicates: u64,
    seed: u64,
    workers: usize,
) -> Result<StarCheckEntry> {
    let star = star_of(phi, spectral, model, ProjectionSelector::Full, n_max as i64)?;
    let star_phi = star.row(0)?;
    let sim = Simulator::new(model, &[phi.clone(), star_phi], n_max)?;
    let z0 = model.initial_vector();
    let expected: Vec<C64> = (0..=n_max as i64)
        .map(|t| expected_count(phi, spectral, &z0, t))
        .collect();
    let paths = run_paths(&sim, replicates, seed, workers)?;
    let mut worst = 0.0f64;
    for path in &paths {
        if let Some(reason) = &path.aborted {
            return Err(Error::Overflow(reason.clone()));
        }
        let last = path.counted[0].len().min(path.counted[1].len());
        for t in 0..last {
            let z = path.counted[0][t];
            let scale = z.norm().max(expected[t].norm());
            worst = worst.max(relative_error(path.counted[1][t], z - expected[t], scale));
        }
    }
    Ok(StarCheckEntry {
        name: name.into(),
        paths: paths.len(),
        max_relative_error: worst,
        tolerance: IDENTITY_TOLERANCE,
        passed: worst <= IDENTITY_TOLERANCE,
    })
}

/// `x A1^n (W^(1)_n - W^(1)_N)` against the windowed gap characteristic,
/// for every unit row `x = e_i` and all `n < N <= horizon`.
///
/// One path carries a window characteristic for every depth `N - n - 1`, so
/// all pairs are checked on the same tree.
pub fn martingale_gap_check(
    name: &str,
    model: &BranchingModel,
    spectral: &SpectralData,
    horizon: u32,
    replicates: u64,
    seed: u64,
    workers: usize,
) -> Result<StarCheckEntry> {
    let dim = spectral.dim();
    let mut windows = Vec::with_capacity(horizon as usize * dim);
    for depth in 0..horizon {
        for i in 0..dim {
            let mut e = CRow::zeros(dim);
            e[i] = c(1.0);
            windows.push(martingale_gap_window(spectral, &e, depth));
        }
    }
    let sim = Simulator::new(model, &windows, horizon)?;
    let paths = run_paths(&sim, replicates, seed, workers)?;
    let w1_maps = (0..=horizon)
        .map(|m| spectral.projected_power(Restricted::Super, -(m as i64)))
        .collect::<Result<Vec<_>>>()?;
    let a1_powers = (0..=horizon)
        .map(|n| spectral.projected_power(Restricted::Super, n as i64))
        .collect::<Result<Vec<_>>>()?;
    let mut worst = 0.0f64;
    for path in &paths {
        if let Some(reason) = &path.aborted {
            return Err(Error::Overflow(reason.clone()));
        }
        let w1: Vec<DVector<C64>> = path
            .generations
            .iter()
            .zip(&w1_maps)
            .map(|(z, map)| map * DVector::from_iterator(z.len(), z.iter().map(|&x| c(x as f64))))
            .collect();
        for big_n in 1..=horizon as usize {
            for n in 0..big_n {
                let depth = big_n - n - 1;
                let early = &a1_powers[n] * &w1[n];
                let late = &a1_powers[n] * &w1[big_n];
                let lhs = &early - &late;
                for i in 0..dim {
                    let rhs = path.counted[depth * dim + i][n];
                    // The gap is a difference of two terms of size |Z_n|; errors are relative to those.
                    let scale = early[i].norm().max(late[i].norm()).max(rhs.norm());
                    worst = worst.max(relative_error(lhs[i], rhs, scale));
                }
            }
        }
    }
    Ok(StarCheckEntry {
        name: name.into(),
        paths: paths.len(),
        max_relative_error: worst,
        tolerance: IDENTITY_TOLERANCE,
        passed: worst <= IDENTITY_TOLERANCE,
    })
}
