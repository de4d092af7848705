mod common;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use cmj_core::characteristics::{Characteristic, NoiseLaw};
use cmj_core::constants::{compute_constants, DEFAULT_REPORT_EPSILON};
use cmj_core::linalg::{c, real_row};
use cmj_core::model::BranchingModel;
use cmj_core::simulator::{
    replicate_rng, run_batch, run_paths, ReplicateResult, Simulator, StatisticPlan,
};
use cmj_core::stats::{ks_test, mean, verify_dichotomy, Verdict, VerifyOptions};
use cmj_core::C64;

/// Draws `draws` offspring columns of type `j` through the simulator's cell sampler.
fn offspring_draws(model: &BranchingModel, j: usize, draws: u64, seed: u64) -> Vec<u64> {
    let sim = Simulator::new(model, &[], 1).unwrap();
    let mut counts = vec![0u64; model.types()];
    counts[j] = draws;
    let cells = sim.sample_cells(&counts, &mut replicate_rng(seed, j as u64));
    cells.offspring[j].clone()
}

#[test]
fn offspring_moments_match_enumeration_within_four_standard_errors() {
    const DRAWS: u64 = 100_000;
    for (name, model) in [
        ("s2", common::s2()),
        ("jordan", common::jordan()),
        ("three", common::three_type()),
        ("circulant", common::circulant_critical()),
    ] {
        let dim = model.types();
        for j in 0..dim {
            let cells = offspring_draws(&model, j, DRAWS, 17);
            assert_eq!(cells.iter().sum::<u64>(), DRAWS);
            let outcomes = model.law().column(j);
            let weight = |o: usize| cells[o] as f64 / DRAWS as f64;
            for a in 0..dim {
                let xa = |o: usize| outcomes[o].counts[a] as f64;
                let emp_mean: f64 = (0..outcomes.len()).map(|o| weight(o) * xa(o)).sum();
                let emp_var: f64 = (0..outcomes.len())
                    .map(|o| weight(o) * (xa(o) - emp_mean).powi(2))
                    .sum();
                let se = (emp_var / DRAWS as f64).sqrt();
                let target = model.mean()[(a, j)];
                assert!(
                    (emp_mean - target).abs() <= 4.0 * se + 1e-12,
                    "{name}: mean[{a},{j}] = {emp_mean} vs {target}"
                );
                for b in 0..dim {
                    let xb = |o: usize| outcomes[o].counts[b] as f64;
                    let mb: f64 = (0..outcomes.len()).map(|o| weight(o) * xb(o)).sum();
                    let prods: Vec<f64> = (0..outcomes.len())
                        .map(|o| (xa(o) - emp_mean) * (xb(o) - mb))
                        .collect();
                    let emp_cov: f64 = (0..outcomes.len()).map(|o| weight(o) * prods[o]).sum();
                    let var_prod: f64 = (0..outcomes.len())
                        .map(|o| weight(o) * (prods[o] - emp_cov).powi(2))
                        .sum();
                    let se = (var_prod / DRAWS as f64).sqrt();
                    let target = model.covariance(j)[(a, b)];
                    assert!(
                        (emp_cov - target).abs() <= 4.0 * se + 1e-12,
                        "{name}: cov_{j}[{a},{b}] = {emp_cov} vs {target}"
                    );
                }
            }
        }
    }
}

#[test]
fn conditional_mean_is_a_times_previous_generation() {
    // S1: 10^4 paths of 10 steps give 10^5 (Z_t, Z_{t+1}) pairs.
    let m = common::s1();
    let sim = Simulator::new(&m, &[], 10).unwrap();
    let paths = run_paths(&sim, 10_000, 5, 4).unwrap();
    let (mut now, mut next) = (0.0, 0.0);
    for p in &paths {
        for w in p.generations.windows(2) {
            now += w[0][0] as f64;
            next += w[1][0] as f64;
        }
    }
    // Var[Z_{t+1} | Z_t] = Z_t Var L = Z_t, so the ratio has standard error 1/sqrt(sum Z_t).
    let ratio = next / now;
    assert!((ratio - 2.0).abs() < 4.0 / now.sqrt(), "{ratio}");

    // Multitype: sum_t Z_{t+1} against A sum_t Z_t, per coordinate.
    for model in [common::s2(), common::jordan(), common::three_type()] {
        let dim = model.types();
        let sim = Simulator::new(&model, &[], 6).unwrap();
        let paths = run_paths(&sim, 5_000, 8, 4).unwrap();
        let mut sum_now = DVector::zeros(dim);
        let mut sum_next = DVector::zeros(dim);
        for p in &paths {
            for w in p.generations.windows(2) {
                sum_now += DVector::from_iterator(dim, w[0].iter().map(|&x| x as f64));
                sum_next += DVector::from_iterator(dim, w[1].iter().map(|&x| x as f64));
            }
        }
        let predicted = model.mean() * &sum_now;
        for i in 0..dim {
            let var: f64 = (0..dim)
                .map(|j| sum_now[j] * model.covariance(j)[(i, i)])
                .sum();
            assert!(
                (sum_next[i] - predicted[i]).abs() <= 4.0 * var.sqrt() + 1e-9,
                "type {i}"
            );
        }
    }
}

#[test]
fn first_generation_mean_in_s2() {
    let m = common::s2();
    let sim = Simulator::new(&m, &[], 1).unwrap();
    let paths = run_paths(&sim, 20_000, 3, 2).unwrap();
    for (i, target) in [3.0, 1.0].into_iter().enumerate() {
        let xs: Vec<f64> = paths.iter().map(|p| p.generations[1][i] as f64).collect();
        let se = (cmj_core::stats::variance(&xs) / xs.len() as f64).sqrt();
        assert!(
            (mean(&xs) - target).abs() <= 4.0 * se,
            "E Z_1[{i}] = {}",
            mean(&xs)
        );
    }
}

#[test]
fn aggregated_counts_equal_individual_simulation() {
    let m = common::jordan();
    let mut phi = Characteristic::new(3);
    phi.set_base(0, real_row(&[1.0, -2.0, 0.5])).unwrap();
    phi.set_base(-1, real_row(&[0.0, 1.0, 1.0])).unwrap();
    phi.set_coeff(1, real_row(&[0.5, 0.25, -1.0])).unwrap();
    phi.set_noise(
        0,
        2,
        NoiseLaw::new(vec![(0.5, c(1.0)), (0.5, C64::new(0.0, -3.0))]).unwrap(),
    )
    .unwrap();
    let other = Characteristic::indicator(real_row(&[1.0, 1.0, 1.0]));
    let sim = Simulator::new(&m, &[phi, other], 6).unwrap();
    for i in 0..100 {
        let (naive, aggregated) = sim.simulate_coupled(&mut replicate_rng(123, i)).unwrap();
        assert_eq!(naive.generations, aggregated.generations);
        assert_eq!(naive.counted, aggregated.counted, "replicate {i}");
    }
}

#[test]
fn normalized_population_turns_towards_u() {
    for model in [common::s2(), common::three_type()] {
        let s = common::spectral(&model);
        let dim = model.types();
        let sim = Simulator::new(&model, &[], 14).unwrap();
        let paths = run_paths(&sim, 4_000, 77, 4).unwrap();
        let u = DVector::from_column_slice(&s.u).normalize();
        let angles: Vec<f64> = (6..=14)
            .map(|n| {
                let mut m = DVector::zeros(dim);
                for p in &paths {
                    m += DVector::from_iterator(dim, p.generations[n].iter().map(|&x| x as f64));
                }
                let m = m.normalize();
                m.dot(&u).clamp(-1.0, 1.0).acos()
            })
            .collect();
        for w in angles.windows(2) {
            assert!(w[1] <= w[0], "{angles:?}");
        }
    }
}

fn synthetic(index: u64, w: f64, t: f64) -> ReplicateResult {
    ReplicateResult {
        index,
        master_seed: 0,
        aborted: None,
        survived: true,
        terminal: Vec::new(),
        generations: Vec::new(),
        w_hat: w,
        w1_hat: Vec::new(),
        zphi: C64::new(0.0, 0.0),
        t_stat: C64::new(t, 0.0),
        t_path: Vec::new(),
        zphi_path: Vec::new(),
        critical_path: Vec::new(),
    }
}

#[test]
fn verifier_passes_data_drawn_from_the_limit_law() {
    let m = common::s1();
    let s = common::spectral(&m);
    let phi = Characteristic::indicator(real_row(&[1.0]));
    let constants = compute_constants(&phi, &s, &m, DEFAULT_REPORT_EPSILON).unwrap();
    let sim = Simulator::new(&m, std::slice::from_ref(&phi), 18).unwrap();
    let plan = StatisticPlan::new(&s, &constants, &m.initial_vector(), 12, 18).unwrap();
    let pool: Vec<f64> = run_batch(&sim, &plan, 2000, 1, 4)
        .unwrap()
        .iter()
        .map(|r| r.w_hat)
        .collect();
    let sigma = constants.scale();

    let trials = 200;
    let mut passes = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..trials {
        let data: Vec<ReplicateResult> = (0..2000u64)
            .map(|i| {
                let w = pool[rand::Rng::random_range(&mut rng, 0..pool.len())];
                let g: f64 = StandardNormal.sample(&mut rng);
                synthetic(i, w, sigma * w.sqrt() * g)
            })
            .collect();
        let report = verify_dichotomy(&data, &constants, true, &VerifyOptions::default()).unwrap();
        if report.verdict == Verdict::Pass {
            passes += 1;
        }
    }
    let rate = passes as f64 / trials as f64;
    assert!(rate >= 0.95, "pass rate {rate}");
}

#[test]
fn verifier_rejects_a_wrong_scale() {
    let m = common::s1();
    let s = common::spectral(&m);
    let phi = Characteristic::indicator(real_row(&[1.0]));
    let constants = compute_constants(&phi, &s, &m, DEFAULT_REPORT_EPSILON).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let data: Vec<ReplicateResult> = (0..2000u64)
        .map(|i| {
            let g: f64 = StandardNormal.sample(&mut rng);
            synthetic(i, 1.0, 2.0 * constants.scale() * g)
        })
        .collect();
    let report = verify_dichotomy(&data, &constants, true, &VerifyOptions::default()).unwrap();
    assert_eq!(report.verdict, Verdict::Fail);
}

#[test]
fn ks_distance_shrinks_with_n_in_s1() {
    let m = common::s1();
    let s = common::spectral(&m);
    let phi = Characteristic::indicator(real_row(&[1.0]));
    let constants = compute_constants(&phi, &s, &m, DEFAULT_REPORT_EPSILON).unwrap();
    let sigma = constants.scale();
    let ns = [8u32, 10, 12, 14];
    let batches = 10u64;
    let mut averages = Vec::new();
    for &n in &ns {
        let sim = Simulator::new(&m, std::slice::from_ref(&phi), n + 6).unwrap();
        let plan = StatisticPlan::new(&s, &constants, &m.initial_vector(), n, n + 6).unwrap();
        let mut total = 0.0;
        for b in 0..batches {
            let results = run_batch(&sim, &plan, 1000, 900 + b, 4).unwrap();
            let eps: Vec<f64> = results
                .iter()
                .map(|r| r.t_stat.re / (sigma * r.w_hat.sqrt()))
                .collect();
            total += ks_test(&eps).unwrap().statistic;
        }
        averages.push(total / batches as f64);
    }
    // Averaged over batches the distance to the normal law should not grow.
    let first = averages[0];
    let last = *averages.last().unwrap();
    assert!(last <= first, "{averages:?}");
}

#[test]
fn batches_do_not_depend_on_worker_count() {
    let m = common::three_type();
    let s = common::spectral(&m);
    let phi = Characteristic::indicator(real_row(&[1.0, 0.0, -1.0]));
    let constants = compute_constants(&phi, &s, &m, DEFAULT_REPORT_EPSILON).unwrap();
    let sim = Simulator::new(&m, std::slice::from_ref(&phi), 14).unwrap();
    let plan = StatisticPlan::new(&s, &constants, &m.initial_vector(), 10, 14).unwrap();
    let a = run_batch(&sim, &plan, 200, 31, 1).unwrap();
    let b = run_batch(&sim, &plan, 200, 31, 7).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.generations, y.generations);
        assert_eq!(x.t_stat.re.to_bits(), y.t_stat.re.to_bits());
    }
}
