//! `cmj`: analyze, compute constants, simulate and verify branching scenarios.
//!
//! Exit status is 0 on success, 1 for invalid input and 2 when a check
//! fails (assumptions, abort rate, verification verdict).

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use cmj_core::characteristics::Characteristic;
use cmj_core::constants::{compute_constants, lln_constant, TheoreticalConstants};
use cmj_core::identities::{martingale_gap_check, recentering_check};
use cmj_core::model::{validate_assumptions, BranchingModel};
use cmj_core::report::{
    to_json, write_histogram_csv, write_replicates_csv, AnalyzeReport, ConstantsReport,
    SimulationSummary, StarCheckReport, StarSummary,
};
use cmj_core::scenario::{CharacteristicSpec, Scenario};
use cmj_core::simulator::{run_batch, ReplicateResult, Simulator, StatisticPlan};
use cmj_core::spectral::{spectral_decompose, SpectralData};
use cmj_core::stats::{
    lln_check, survivors, verify_dichotomy, Verdict, VerificationReport, VerifyOptions,
};
use cmj_core::{characteristics, C64};

const ABORT_FAIL_RATE: f64 = 0.10;
const LLN_TOLERANCE: f64 = 0.05;
const HIST_BINS: usize = 40;
const HIST_RANGE: f64 = 5.0;

#[derive(Parser)]
#[command(
    name = "cmj",
    version,
    about = "Multitype branching processes counted with characteristics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct RunOverrides {
    /// Master seed; replicate `i` uses stream `i` of this seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads. Results do not depend on this.
    #[arg(long)]
    workers: Option<usize>,
    /// Generation at which the statistic is read.
    #[arg(long)]
    n: Option<u32>,
    /// Extra generations used to estimate the martingale limits.
    #[arg(long)]
    delta: Option<u32>,
    /// Number of independent trees.
    #[arg(long)]
    replicates: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Spectral decomposition and assumption checks; writes analyze.json.
    Analyze(Common),
    /// Limit constants with truncation certificates; writes constants.json.
    Constants(Common),
    /// Monte Carlo replicates; writes replicates.csv and summary.json.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        run: RunOverrides,
    },
    /// Simulates (or reads replicates) and tests the limit law; writes verify.json.
    Verify {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        run: RunOverrides,
        /// Read replicates from a CSV written by `simulate` instead of simulating.
        #[arg(long)]
        from_csv: Option<PathBuf>,
        /// Also write residual_hist.csv.
        #[arg(long)]
        emit_hist: bool,
    },
    /// Pathwise recentering and martingale-gap identities; writes star_check.json.
    StarCheck {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        run: RunOverrides,
    },
}

/// Failure classes mapped to exit codes.
enum Failure {
    Input(anyhow::Error),
    Check(String),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Input(e)
    }
}

impl From<cmj_core::Error> for Failure {
    fn from(e: cmj_core::Error) -> Self {
        Failure::Input(e.into())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Input(e.into())
    }
}

struct Loaded {
    scenario: Scenario,
    model: BranchingModel,
    spectral: SpectralData,
    phi: Characteristic,
}

fn load(common: &Common, run: Option<&RunOverrides>) -> anyhow::Result<Loaded> {
    let mut scenario = Scenario::load(&common.scenario)
        .with_context(|| format!("loading scenario {}", common.scenario.display()))?;
    if let Some(o) = run {
        let r = &mut scenario.run;
        r.seed = o.seed.unwrap_or(r.seed);
        r.workers = o.workers.unwrap_or(r.workers).max(1);
        r.n = o.n.unwrap_or(r.n);
        r.delta = o.delta.unwrap_or(r.delta);
        r.replicates = o.replicates.unwrap_or(r.replicates);
        if r.n == 0 || r.replicates == 0 {
            bail!("n and replicates must be positive");
        }
    }
    let model = BranchingModel::build(&scenario.model)?;
    let spectral = spectral_decompose(model.mean(), scenario.run.tol)?;
    let phi = scenario.build_characteristic()?;
    if let CharacteristicSpec::KestenStigum { row } = &scenario.characteristic {
        let au: C64 = row.iter().zip(&spectral.u).map(|(a, &u)| a * u).sum();
        if au.norm() > 1e-10 {
            return Err(cmj_core::Error::Scenario {
                location: "characteristic.row".into(),
                message: format!(
                    "kesten_stigum row must be orthogonal to u, |a.u| = {:.3e}",
                    au.norm()
                ),
            }
            .into());
        }
    }
    Ok(Loaded {
        scenario,
        model,
        spectral,
        phi,
    })
}

fn write(dir: &Path, name: &str, contents: &str) -> anyhow::Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn constants_for(l: &Loaded) -> anyhow::Result<TheoreticalConstants> {
    Ok(compute_constants(
        &l.phi,
        &l.spectral,
        &l.model,
        l.scenario.run.eps_report,
    )?)
}

fn cmd_analyze(common: &Common) -> Result<(), Failure> {
    let l = load(common, None)?;
    let assumptions = validate_assumptions(&l.model);
    let sums = l.phi.assumption_sums(&l.spectral, &l.model);
    let report = AnalyzeReport::new(&l.spectral, assumptions, Some(sums));
    let path = write(&common.out, "analyze.json", &to_json(&report))?;
    println!("rho = {}", report.rho);
    for e in &report.eigenvalues {
        println!(
            "  lambda = {:+.6}{:+.6}i  |lambda| = {:.6}  class = {:?}  multiplicity = {}",
            e.value[0], e.value[1], e.modulus, e.class, e.multiplicity
        );
    }
    println!("wrote {}", path.display());
    if !report.assumptions_hold {
        return Err(Failure::Check(format!(
            "model assumptions fail: supercritical = {}, positively regular = {}, nondegenerate = {}",
            report.assumptions.supercritical, report.assumptions.positively_regular, report.assumptions.nondegenerate
        )));
    }
    Ok(())
}

fn cmd_constants(common: &Common) -> Result<(), Failure> {
    let l = load(common, None)?;
    let constants = constants_for(&l)?;
    let report = ConstantsReport::new(
        &constants,
        lln_constant(&l.phi, &l.spectral),
        l.phi.assumption_sums(&l.spectral, &l.model),
    );
    let path = write(&common.out, "constants.json", &to_json(&report))?;
    println!("{}", report.case);
    println!(
        "sigma^2 = {} (error bound {:.1e})",
        report.sigma2.value, report.sigma2.error_bound
    );
    for (i, s) in report.sigma_l.iter().enumerate() {
        println!("sigma_{i}^2 = {s}");
    }
    if let Some(s) = &report.sigma_star2 {
        println!(
            "sigma_*^2 = {} (error bound {:.1e})",
            s.value, s.error_bound
        );
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn simulate(l: &Loaded, constants: &TheoreticalConstants) -> anyhow::Result<Vec<ReplicateResult>> {
    let run = &l.scenario.run;
    let horizon = run.horizon();
    let sim = Simulator::new(&l.model, std::slice::from_ref(&l.phi), horizon)?;
    let plan = StatisticPlan::new(
        &l.spectral,
        constants,
        &l.model.initial_vector(),
        run.n,
        horizon,
    )?;
    Ok(run_batch(
        &sim,
        &plan,
        run.replicates,
        run.seed,
        run.workers,
    )?)
}

fn summary(
    l: &Loaded,
    constants: &TheoreticalConstants,
    results: &[ReplicateResult],
) -> SimulationSummary {
    let run = &l.scenario.run;
    SimulationSummary::new(
        results,
        constants,
        &l.spectral,
        l.model.initial_type(),
        run.seed,
        run.n,
        run.horizon(),
        run.w_min,
    )
}

fn check_abort_rate(s: &SimulationSummary) -> Result<(), Failure> {
    if s.abort_warning {
        eprintln!(
            "warning: {} of {} replicates aborted on overflow",
            s.aborted, s.replicates
        );
    }
    if s.abort_rate > ABORT_FAIL_RATE {
        return Err(Failure::Check(format!(
            "abort rate {:.3} exceeds {ABORT_FAIL_RATE}",
            s.abort_rate
        )));
    }
    Ok(())
}

fn cmd_simulate(common: &Common, run: &RunOverrides) -> Result<(), Failure> {
    let l = load(common, Some(run))?;
    let constants = constants_for(&l)?;
    let results = simulate(&l, &constants)?;
    fs::create_dir_all(&common.out)?;
    let csv = common.out.join("replicates.csv");
    let mut out = BufWriter::new(fs::File::create(&csv)?);
    write_replicates_csv(&mut out, &results)?;
    drop(out);
    let s = summary(&l, &constants, &results);
    write(&common.out, "summary.json", &to_json(&s))?;
    println!(
        "{} replicates, {} survivors, mean W = {} (se {}), expected {}",
        s.replicates, s.survivors, s.mean_w_hat, s.se_w_hat, s.expected_w
    );
    println!("wrote {}", csv.display());
    check_abort_rate(&s)
}

/// Reads the columns of `replicates.csv` needed by the verifier.
fn read_replicates_csv(path: &Path, seed: u64) -> anyhow::Result<Vec<ReplicateResult>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header != cmj_core::report::CSV_HEADER {
        bail!("{}: unexpected header `{header}`", path.display());
    }
    lines
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                bail!("{}: line {} has {} fields", path.display(), i + 2, f.len());
            }
            let num = |s: &str| -> anyhow::Result<f64> {
                s.parse::<f64>().with_context(|| {
                    format!("{}: line {}: bad number `{s}`", path.display(), i + 2)
                })
            };
            Ok(ReplicateResult {
                index: f[0]
                    .parse()
                    .with_context(|| format!("line {}: bad index", i + 2))?,
                master_seed: seed,
                aborted: num(f[2])?.is_nan().then(|| "aborted".to_string()),
                survived: f[1] == "1",
                terminal: Vec::new(),
                generations: Vec::new(),
                w_hat: num(f[2])?,
                w1_hat: Vec::new(),
                zphi: C64::new(num(f[3])?, num(f[4])?),
                t_stat: C64::new(num(f[5])?, num(f[6])?),
                t_path: Vec::new(),
                zphi_path: Vec::new(),
                critical_path: Vec::new(),
            })
        })
        .collect()
}

fn cmd_verify(
    common: &Common,
    run: &RunOverrides,
    from_csv: Option<&Path>,
    emit_hist: bool,
) -> Result<(), Failure> {
    let l = load(common, Some(run))?;
    let constants = constants_for(&l)?;
    let results = match from_csv {
        Some(path) => read_replicates_csv(path, l.scenario.run.seed)?,
        None => simulate(&l, &constants)?,
    };
    let opts = l.scenario.verify_options();
    let report = verify_dichotomy(&results, &constants, l.phi.is_real(), &opts)?;
    let lln = if l.phi.is_deterministic() && from_csv.is_none() {
        lln_check(
            &results,
            &l.phi,
            &l.spectral,
            l.scenario.run.n,
            opts.w_min,
            LLN_TOLERANCE,
        )
        .ok()
    } else {
        None
    };
    let sensitivity = match from_csv {
        None => delta_sensitivity(&l, &constants, &results, &report, &opts)?,
        Some(_) => None,
    };
    let s = summary(&l, &constants, &results);
    let document = serde_json::json!({
        "schema": cmj_core::report::REPORT_SCHEMA,
        "verdict": report.verdict,
        "verification": report,
        "delta_sensitivity": sensitivity,
        "lln": lln,
        "summary": s,
    });
    let path = write(
        &common.out,
        "verify.json",
        &format!(
            "{}\n",
            serde_json::to_string_pretty(&document).expect("json")
        ),
    )?;
    if emit_hist && report.sigma_case > 0.0 {
        let residuals: Vec<f64> = survivors(&results, opts.w_min)
            .iter()
            .map(|r| r.t_stat.re / (report.sigma_case * r.w_hat.sqrt()))
            .collect();
        fs::create_dir_all(&common.out)?;
        let mut out = BufWriter::new(fs::File::create(common.out.join("residual_hist.csv"))?);
        write_histogram_csv(&mut out, &residuals, HIST_BINS, HIST_RANGE)?;
    }
    println!("{} (sigma = {})", report.case_label, report.sigma_case);
    for c in &report.checks {
        println!(
            "  {} {}: {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    println!("{:?}", report.verdict);
    println!("wrote {}", path.display());
    check_abort_rate(&s)?;
    match report.verdict {
        Verdict::Fail => Err(Failure::Check("verification failed".into())),
        _ => Ok(()),
    }
}

/// Reruns the same seed with half the look-ahead `Delta` and reports how much
/// the proxy for `W` and the KS verdict move. Informational only.
fn delta_sensitivity(
    l: &Loaded,
    constants: &TheoreticalConstants,
    results: &[ReplicateResult],
    report: &VerificationReport,
    opts: &VerifyOptions,
) -> anyhow::Result<Option<serde_json::Value>> {
    let run = &l.scenario.run;
    let half = run.delta / 2;
    if half == 0 {
        return Ok(None);
    }
    let horizon = run.n + half;
    let sim = Simulator::new(&l.model, std::slice::from_ref(&l.phi), horizon)?;
    let plan = StatisticPlan::new(
        &l.spectral,
        constants,
        &l.model.initial_vector(),
        run.n,
        horizon,
    )?;
    let shorter = run_batch(&sim, &plan, run.replicates, run.seed, run.workers)?;
    let mut changes: Vec<f64> = results
        .iter()
        .zip(&shorter)
        .filter(|(a, b)| a.aborted.is_none() && b.aborted.is_none() && a.w_hat > opts.w_min)
        .map(|(a, b)| (a.w_hat - b.w_hat).abs() / a.w_hat)
        .collect();
    changes.sort_by(f64::total_cmp);
    let median = changes.get(changes.len() / 2).copied();
    let other = verify_dichotomy(&shorter, constants, l.phi.is_real(), opts)?;
    Ok(Some(serde_json::json!({
        "delta": run.delta,
        "half_delta": half,
        "median_relative_w_change": median,
        "ks_p": report.ks.as_ref().map(|k| k.p_value),
        "ks_p_half_delta": other.ks.as_ref().map(|k| k.p_value),
        "verdict_half_delta": other.verdict,
    })))
}

fn cmd_star_check(common: &Common, run: &RunOverrides) -> Result<(), Failure> {
    let l = load(common, Some(run))?;
    let r = &l.scenario.run;
    let replicates = run.replicates.unwrap_or(r.replicates.min(1000));
    let mut checks = Vec::new();
    let mut transforms = Vec::new();
    let n_max = r.n.min(12);
    let mean_part = Characteristic::from_table(l.model.types(), l.phi.mean_table())?;
    checks.push(recentering_check(
        "recentering",
        &l.model,
        &l.spectral,
        &mean_part,
        n_max,
        replicates,
        r.seed,
        r.workers,
    )?);
    checks.push(martingale_gap_check(
        "martingale_gap",
        &l.model,
        &l.spectral,
        n_max,
        replicates,
        r.seed ^ 0x9e37,
        r.workers,
    )?);
    for selector in [
        characteristics::ProjectionSelector::Full,
        characteristics::ProjectionSelector::Super,
        characteristics::ProjectionSelector::Critical,
        characteristics::ProjectionSelector::Sub,
    ] {
        let star =
            characteristics::star_of(&mean_part, &l.spectral, &l.model, selector, n_max as i64)?;
        transforms.push(StarSummary::new(&star));
    }
    let passed = checks.iter().all(|c| c.passed);
    let report = StarCheckReport {
        schema: cmj_core::report::REPORT_SCHEMA,
        checks,
        transforms,
        passed,
    };
    let path = write(&common.out, "star_check.json", &to_json(&report))?;
    for c in &report.checks {
        println!(
            "{} {}: max relative error {:.3e} over {} paths",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.max_relative_error,
            c.paths
        );
    }
    println!("wrote {}", path.display());
    if passed {
        Ok(())
    } else {
        Err(Failure::Check("identity check failed".into()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Analyze(c) => cmd_analyze(c),
        Command::Constants(c) => cmd_constants(c),
        Command::Simulate { common, run } => cmd_simulate(common, run),
        Command::Verify {
            common,
            run,
            from_csv,
            emit_hist,
        } => cmd_verify(common, run, from_csv.as_deref(), *emit_hist),
        Command::StarCheck { common, run } => cmd_star_check(common, run),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(2)
        }
    }
}
