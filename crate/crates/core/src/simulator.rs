//! Generation-by-generation simulation with multinomial aggregation.
//!
//! Individuals of one type are exchangeable and a characteristic only looks
//! at the individual's own offspring column and an independent noise draw.
//! A generation is therefore fully described by how many individuals of
//! each type fall into each offspring outcome and each noise outcome, and the
//! cost per generation is proportional to the number of such cells.

use nalgebra::DVector;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Binomial;
use rayon::prelude::*;

use crate::characteristics::Characteristic;
use crate::constants::TheoreticalConstants;
use crate::error::{Error, Result};
use crate::linalg::{c, CMat, CRow, C64};
use crate::model::BranchingModel;
use crate::spectral::{Restricted, SpectralData};

/// Populations above this size abort the replicate.
pub const POPULATION_CAP: u64 = 1 << 62;
pub const DEFAULT_DELTA: u32 = 6;

/// Draws a multinomial vector by sequential binomial splitting.
pub fn multinomial<R: Rng + ?Sized>(n: u64, probs: &[f64], rng: &mut R) -> Vec<u64> {
    let mut out = vec![0; probs.len()];
    let mut remaining = n;
    let mut mass: f64 = probs.iter().sum();
    for (i, &p) in probs.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if i + 1 == probs.len() {
            out[i] = remaining;
            break;
        }
        let q = if mass > 0.0 {
            (p / mass).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let x = if q >= 1.0 {
            remaining
        } else if q <= 0.0 {
            0
        } else {
            Binomial::new(remaining, q)
                .expect("valid binomial")
                .sample(rng)
        };
        out[i] = x;
        remaining -= x;
        mass -= p;
    }
    out
}

/// Deterministic per-replicate stream.
pub fn replicate_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

#[derive(Clone, Debug)]
struct NoiseTable {
    k: i64,
    j: usize,
    probs: Vec<f64>,
    values: Vec<C64>,
}

/// Dense value table `values[k - kmin][j][outcome]` of the deterministic part.
#[derive(Clone, Debug)]
struct Compiled {
    kmin: i64,
    values: Vec<Vec<Vec<C64>>>,
    noise: Vec<NoiseTable>,
}

impl Compiled {
    fn new(phi: &Characteristic, model: &BranchingModel) -> Self {
        let Some((kmin, kmax)) = phi.support() else {
            return Self {
                kmin: 0,
                values: Vec::new(),
                noise: Vec::new(),
            };
        };
        let types = model.types();
        let values = (kmin..=kmax)
            .map(|k| {
                (0..types)
                    .map(|j| {
                        model
                            .law()
                            .column(j)
                            .iter()
                            .map(|o| phi.evaluate(k, j, &o.counts, c(0.0), model))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let noise = phi
            .noise()
            .iter()
            .map(|((k, j), law)| NoiseTable {
                k: *k,
                j: *j,
                probs: law.outcomes().iter().map(|(p, _)| *p).collect(),
                values: law.outcomes().iter().map(|(_, x)| *x).collect(),
            })
            .collect();
        Self {
            kmin,
            values,
            noise,
        }
    }

    fn kmax(&self) -> Option<i64> {
        (!self.values.is_empty()).then(|| self.kmin + self.values.len() as i64 - 1)
    }
}

/// Cell counts of one generation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CellCounts {
    /// `offspring[j][o]`: type-`j` individuals drawing offspring outcome `o`.
    pub offspring: Vec<Vec<u64>>,
    /// `noise[c][i][x]`: individuals drawing noise outcome `x` in the `i`-th
    /// noise table of characteristic `c`.
    pub noise: Vec<Vec<Vec<u64>>>,
}

/// `Z_t^Phi` partial sums for `t >= t_min`.
#[derive(Clone, Debug)]
pub struct Accumulator {
    t_min: i64,
    values: Vec<C64>,
}

impl Accumulator {
    fn new(t_min: i64, len: usize) -> Self {
        Self {
            t_min,
            values: vec![c(0.0); len],
        }
    }

    fn add(&mut self, t: i64, x: C64) {
        let idx = (t - self.t_min) as usize;
        self.values[idx] += x;
    }

    pub fn get(&self, t: i64) -> C64 {
        let idx = t - self.t_min;
        if idx < 0 || idx as usize >= self.values.len() {
            c(0.0)
        } else {
            self.values[idx as usize]
        }
    }
}

#[derive(Clone, Debug)]
pub struct GenerationState {
    pub generation: u32,
    pub counts: Vec<u64>,
    pub accumulators: Vec<Accumulator>,
}

/// A simulated path up to the horizon.
#[derive(Clone, Debug)]
pub struct Path {
    /// `Z_0, ..., Z_N`.
    pub generations: Vec<Vec<u64>>,
    /// `counted[c][t]` is `Z_t^Phi` of characteristic `c` for every `t >= 0`
    /// whose contributions are all born by the horizon.
    pub counted: Vec<Vec<C64>>,
    pub aborted: Option<String>,
}

impl Path {
    pub fn terminal(&self) -> &[u64] {
        self.generations.last().expect("at least Z_0")
    }

    pub fn survived(&self) -> bool {
        self.terminal().iter().any(|&x| x > 0)
    }
}

pub struct Simulator<'a> {
    model: &'a BranchingModel,
    compiled: Vec<Compiled>,
    horizon: u32,
    probs: Vec<Vec<f64>>,
}

impl<'a> Simulator<'a> {
    pub fn new(
        model: &'a BranchingModel,
        characteristics: &[Characteristic],
        horizon: u32,
    ) -> Result<Self> {
        for phi in characteristics {
            if phi.types() != model.types() {
                return Err(Error::InvalidCharacteristic(format!(
                    "characteristic has {} types, model has {}",
                    phi.types(),
                    model.types()
                )));
            }
        }
        let probs = (0..model.types())
            .map(|j| {
                model
                    .law()
                    .column(j)
                    .iter()
                    .map(|o| o.probability)
                    .collect()
            })
            .collect();
        Ok(Self {
            model,
            compiled: characteristics
                .iter()
                .map(|phi| Compiled::new(phi, model))
                .collect(),
            horizon,
            probs,
        })
    }

    pub fn horizon(&self) -> u32 {
        self.horizon
    }

    pub fn model(&self) -> &BranchingModel {
        self.model
    }

    pub fn initial_state(&self) -> GenerationState {
        let mut counts = vec![0; self.model.types()];
        counts[self.model.initial_type()] = 1;
        let accumulators = self
            .compiled
            .iter()
            .map(|cc| match cc.kmax() {
                Some(kmax) => {
                    Accumulator::new(cc.kmin, (self.horizon as i64 + kmax - cc.kmin + 1) as usize)
                }
                None => Accumulator::new(0, 0),
            })
            .collect();
        GenerationState {
            generation: 0,
            counts,
            accumulators,
        }
    }

    pub fn sample_cells<R: Rng + ?Sized>(&self, counts: &[u64], rng: &mut R) -> CellCounts {
        let offspring = counts
            .iter()
            .enumerate()
            .map(|(j, &z)| multinomial(z, &self.probs[j], rng))
            .collect();
        let noise = self
            .compiled
            .iter()
            .map(|cc| {
                cc.noise
                    .iter()
                    .map(|table| multinomial(counts[table.j], &table.probs, rng))
                    .collect()
            })
            .collect();
        CellCounts { offspring, noise }
    }

    /// Adds the contributions of the current generation and, if `advance`,
    /// replaces the counts by the next generation.
    pub fn apply_cells(
        &self,
        state: &mut GenerationState,
        cells: &CellCounts,
        advance: bool,
    ) -> Result<()> {
        let m = state.generation as i64;
        for ((cc, acc), noise_cells) in self
            .compiled
            .iter()
            .zip(state.accumulators.iter_mut())
            .zip(&cells.noise)
        {
            for (ki, per_type) in cc.values.iter().enumerate() {
                let mut total = c(0.0);
                for (per_outcome, drawn) in per_type.iter().zip(&cells.offspring) {
                    for (value, &n) in per_outcome.iter().zip(drawn) {
                        if n > 0 {
                            total += value * n as f64;
                        }
                    }
                }
                acc.add(m + cc.kmin + ki as i64, total);
            }
            for (table, drawn) in cc.noise.iter().zip(noise_cells) {
                let total: C64 = table
                    .values
                    .iter()
                    .zip(drawn)
                    .map(|(x, &n)| x * n as f64)
                    .sum();
                acc.add(m + table.k, total);
            }
            if acc
                .values
                .iter()
                .any(|z| !z.re.is_finite() || !z.im.is_finite())
            {
                return Err(Error::Overflow(format!(
                    "characteristic accumulator at generation {m}"
                )));
            }
        }
        if advance {
            let types = self.model.types();
            let mut next = vec![0u128; types];
            for j in 0..types {
                for (o, outcome) in self.model.law().column(j).iter().enumerate() {
                    let n = cells.offspring[j][o] as u128;
                    if n == 0 {
                        continue;
                    }
                    for (i, &x) in outcome.counts.iter().enumerate() {
                        next[i] += n * x as u128;
                    }
                }
            }
            if next.iter().any(|&x| x > POPULATION_CAP as u128) {
                return Err(Error::Overflow(format!(
                    "population above 2^62 at generation {}",
                    state.generation + 1
                )));
            }
            state.counts = next.into_iter().map(|x| x as u64).collect();
            state.generation += 1;
        }
        Ok(())
    }

    fn needs_terminal_cells(&self) -> bool {
        self.compiled
            .iter()
            .any(|cc| !cc.values.is_empty() || !cc.noise.is_empty())
    }

    fn finish(
        &self,
        state: GenerationState,
        generations: Vec<Vec<u64>>,
        aborted: Option<String>,
    ) -> Path {
        let counted = self
            .compiled
            .iter()
            .zip(&state.accumulators)
            .map(|(cc, acc)| {
                let last = if cc.values.is_empty() && cc.noise.is_empty() {
                    self.horizon as i64
                } else {
                    self.horizon as i64 + cc.kmin
                };
                (0..=last).map(|t| acc.get(t)).collect()
            })
            .collect();
        Path {
            generations,
            counted,
            aborted,
        }
    }

    pub fn simulate<R: Rng + ?Sized>(&self, rng: &mut R) -> Path {
        let mut state = self.initial_state();
        let mut generations = vec![state.counts.clone()];
        for m in 0..=self.horizon {
            let last = m == self.horizon;
            if last && !self.needs_terminal_cells() {
                break;
            }
            let cells = self.sample_cells(&state.counts, rng);
            if let Err(e) = self.apply_cells(&mut state, &cells, !last) {
                return self.finish(state, generations, Some(e.to_string()));
            }
            if !last {
                generations.push(state.counts.clone());
            }
        }
        self.finish(state, generations, None)
    }

    /// Simulates individual by individual, then replays the same draws through
    /// the aggregated update. Returns `(per-individual path, aggregated path)`.
    pub fn simulate_coupled<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(Path, Path)> {
        let model = self.model;
        let types = model.types();
        let samplers: Vec<WeightedIndex<f64>> = self
            .probs
            .iter()
            .map(|p| WeightedIndex::new(p).map_err(|e| Error::InvalidModel(e.to_string())))
            .collect::<Result<_>>()?;
        let noise_samplers: Vec<Vec<WeightedIndex<f64>>> = self
            .compiled
            .iter()
            .map(|cc| {
                cc.noise
                    .iter()
                    .map(|t| {
                        WeightedIndex::new(&t.probs)
                            .map_err(|e| Error::InvalidCharacteristic(e.to_string()))
                    })
                    .collect::<Result<_>>()
            })
            .collect::<Result<_>>()?;

        let mut naive_state = self.initial_state();
        let mut agg_state = self.initial_state();
        let mut generations = vec![naive_state.counts.clone()];
        for m in 0..=self.horizon {
            let last = m == self.horizon;
            let mut cells = CellCounts {
                offspring: (0..types).map(|j| vec![0; self.probs[j].len()]).collect(),
                noise: self
                    .compiled
                    .iter()
                    .map(|cc| cc.noise.iter().map(|t| vec![0; t.probs.len()]).collect())
                    .collect(),
            };
            let mut next = vec![0u64; types];
            for j in 0..types {
                for _ in 0..naive_state.counts[j] {
                    let o = samplers[j].sample(rng);
                    cells.offspring[j][o] += 1;
                    let outcome = &model.law().column(j)[o];
                    for (i, &x) in outcome.counts.iter().enumerate() {
                        next[i] += x;
                    }
                    for (ci, cc) in self.compiled.iter().enumerate() {
                        for (ki, per_type) in cc.values.iter().enumerate() {
                            let k = cc.kmin + ki as i64;
                            naive_state.accumulators[ci].add(m as i64 + k, per_type[j][o]);
                        }
                        for (ti, table) in cc.noise.iter().enumerate() {
                            if table.j == j {
                                let x = noise_samplers[ci][ti].sample(rng);
                                cells.noise[ci][ti][x] += 1;
                                naive_state.accumulators[ci]
                                    .add(m as i64 + table.k, table.values[x]);
                            }
                        }
                    }
                }
            }
            self.apply_cells(&mut agg_state, &cells, !last)?;
            if !last {
                if next.iter().any(|&x| x > 1 << 24) {
                    return Err(Error::Refused(
                        "coupled simulation is meant for small populations".into(),
                    ));
                }
                naive_state.counts = next;
                naive_state.generation += 1;
                generations.push(naive_state.counts.clone());
            }
        }
        let naive = self.finish(naive_state, generations.clone(), None);
        let aggregated = self.finish(agg_state, generations, None);
        Ok((naive, aggregated))
    }
}

/// Per-batch precomputation of the centering and normalization of `T_t`.
#[derive(Clone, Debug)]
pub struct StatisticPlan {
    pub n: u32,
    pub horizon: u32,
    pub rho: f64,
    pub v: Vec<f64>,
    /// `A1^{-N} pi1`.
    pub w1_map: CMat,
    /// `x1 A1^{t-N} pi1` for `t = 0..=n`.
    pub gap_rows: Vec<CRow>,
    /// `x2 A2^t Z_0` for `t = 0..=n`.
    pub critical_offsets: Vec<C64>,
    /// `x2 pi2` for the critical component.
    pub critical_row: CRow,
    /// `r_t` for `t = 0..=n`.
    pub rates: Vec<f64>,
}

impl StatisticPlan {
    pub fn new(
        spectral: &SpectralData,
        constants: &TheoreticalConstants,
        z0: &[f64],
        n: u32,
        horizon: u32,
    ) -> Result<Self> {
        if horizon < n {
            return Err(Error::Refused(format!(
                "estimation horizon {horizon} below n = {n}"
            )));
        }
        let w1_map = spectral.projected_power(Restricted::Super, -(horizon as i64))?;
        let z0 = DVector::from_iterator(z0.len(), z0.iter().map(|&x| c(x)));
        let mut gap_rows = Vec::new();
        let mut critical_offsets = Vec::new();
        let mut rates = Vec::new();
        for t in 0..=n {
            let p1 = spectral.projected_power(Restricted::Super, t as i64 - horizon as i64)?;
            gap_rows.push(&constants.x1 * p1);
            let p2 = spectral.projected_power(Restricted::Critical, t as i64)?;
            critical_offsets.push((&constants.x2 * p2 * &z0)[0]);
            rates.push(constants.case.rate(spectral.rho, t));
        }
        Ok(Self {
            n,
            horizon,
            rho: spectral.rho,
            v: spectral.v.clone(),
            w1_map,
            gap_rows,
            critical_offsets,
            critical_row: &constants.x2 * &spectral.pi2,
            rates,
        })
    }
}

#[derive(Clone, Debug)]
pub struct ReplicateResult {
    pub index: u64,
    pub master_seed: u64,
    pub aborted: Option<String>,
    pub survived: bool,
    pub terminal: Vec<u64>,
    /// `Z_0, ..., Z_N`.
    pub generations: Vec<Vec<u64>>,
    /// `<v, Z_N> rho^-N`.
    pub w_hat: f64,
    /// `A1^{-N} pi1 Z_N`.
    pub w1_hat: Vec<C64>,
    /// `Z_n^Phi`.
    pub zphi: C64,
    /// `T_n`.
    pub t_stat: C64,
    /// `T_t` for `t = 1..=n`.
    pub t_path: Vec<C64>,
    /// `Z_t^Phi` for `t = 0..=n`.
    pub zphi_path: Vec<C64>,
    /// `x2 pi2 Z_t - x2 A2^t Z_0` for `t = 0..=n`.
    pub critical_path: Vec<C64>,
}

fn dot_counts(row: &CRow, z: &[u64]) -> C64 {
    row.iter().zip(z).map(|(a, &x)| a * x as f64).sum()
}

/// Simulates one replicate and forms the normalized statistic for the first
/// characteristic of the simulator.
pub fn run_replicate(
    sim: &Simulator,
    plan: &StatisticPlan,
    master_seed: u64,
    index: u64,
) -> ReplicateResult {
    let mut rng = replicate_rng(master_seed, index);
    let path = sim.simulate(&mut rng);
    summarize(path, plan, master_seed, index)
}

fn summarize(path: Path, plan: &StatisticPlan, master_seed: u64, index: u64) -> ReplicateResult {
    let nan = C64::new(f64::NAN, f64::NAN);
    let complete = path.aborted.is_none() && path.generations.len() == plan.horizon as usize + 1;
    let terminal = path.terminal().to_vec();
    let survived = complete && path.survived();
    let (w_hat, w1_hat) = if complete {
        let w = terminal
            .iter()
            .zip(&plan.v)
            .map(|(&x, &v)| x as f64 * v)
            .sum::<f64>()
            * plan.rho.powi(-(plan.horizon as i32));
        let zn = DVector::from_iterator(terminal.len(), terminal.iter().map(|&x| c(x as f64)));
        (w, (&plan.w1_map * zn).iter().copied().collect())
    } else {
        (f64::NAN, vec![nan; terminal.len()])
    };

    let mut zphi_path = Vec::new();
    let mut t_path = Vec::new();
    let mut critical_path = Vec::new();
    for t in 0..=plan.n as usize {
        let z = path
            .counted
            .first()
            .and_then(|v| v.get(t))
            .copied()
            .unwrap_or(nan);
        let zphi = if complete { z } else { nan };
        zphi_path.push(zphi);
        let crit = path
            .generations
            .get(t)
            .map(|zt| dot_counts(&plan.critical_row, zt) - plan.critical_offsets[t])
            .unwrap_or(nan);
        critical_path.push(crit);
        if t >= 1 {
            let gap = if complete {
                dot_counts(&plan.gap_rows[t], &terminal)
            } else {
                nan
            };
            t_path.push((zphi - gap - plan.critical_offsets[t]) / plan.rates[t]);
        }
    }
    ReplicateResult {
        index,
        master_seed,
        aborted: path.aborted,
        survived,
        terminal,
        generations: path.generations,
        w_hat,
        w1_hat,
        zphi: *zphi_path.last().expect("n >= 0"),
        t_stat: t_path.last().copied().unwrap_or(nan),
        t_path,
        zphi_path,
        critical_path,
    }
}

/// Replicates `0..replicates` on `workers` threads, returned in index order.
pub fn run_batch(
    sim: &Simulator,
    plan: &StatisticPlan,
    replicates: u64,
    master_seed: u64,
    workers: usize,
) -> Result<Vec<ReplicateResult>> {
    if replicates == 0 {
        return Err(Error::Refused("at least one replicate is required".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Refused(e.to_string()))?;
    Ok(pool.install(|| {
        (0..replicates)
            .into_par_iter()
            .map(|i| run_replicate(sim, plan, master_seed, i))
            .collect()
    }))
}

/// Raw paths without the normalized statistic, in index order.
pub fn run_paths(
    sim: &Simulator,
    replicates: u64,
    master_seed: u64,
    workers: usize,
) -> Result<Vec<Path>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Refused(e.to_string()))?;
    Ok(pool.install(|| {
        (0..replicates)
            .into_par_iter()
            .map(|i| sim.simulate(&mut replicate_rng(master_seed, i)))
            .collect()
    }))
}
