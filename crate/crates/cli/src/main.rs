use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use querloc::experiment::{
    bench_timing, crlb_table, fmt_f64, rho_grid, run_campaign, write_dynamics_csv, CampaignOutput,
    ExperimentConfig, ExperimentKind, Method,
};
use querloc::qdynamics::{
    ode_cross_check, phase_discrepancy_scan, uniform_phase_grid, TwoLevelParams,
};
use querloc::qsim::verify::{self, VerifyOptions};

const EXIT_USAGE: u8 = 1;
const EXIT_FAILURE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "querloc", version, about = "Quantum-enhanced ranging localization simulator")]
struct Cli {
    /// Worker threads for trial-level parallelism (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a Monte Carlo campaign and write results.csv and errors.csv.
    Simulate(SimulateArgs),
    /// Compare the exact probe relative phase with its chirp approximation.
    DynamicsScan(DynamicsArgs),
    /// Check the statevector simulator against the closed-form branch phase.
    VerifyQsim(VerifyArgs),
    /// Print the Cramér–Rao bound on QuERLoc RMSE per (m, rho).
    Crlb(CrlbArgs),
    /// Time each method's solve step.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct CampaignArgs {
    /// TOML experiment configuration; command-line flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    /// Comma-separated ranging counts.
    #[arg(long, value_delimiter = ',')]
    m: Option<Vec<usize>>,
    #[arg(long)]
    trials: Option<usize>,
    /// Comma-separated method names.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    campaign: CampaignArgs,
    /// main, same-anchor, mimic, dynamics or bench.
    #[arg(long)]
    experiment: Option<String>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Largest noise level of the grid 0, step, 2·step, ….
    #[arg(long)]
    rho_max: Option<f64>,
    #[arg(long)]
    rho_step: Option<f64>,
    /// Exit with status 2 when any cell's failure rate exceeds this.
    #[arg(long, default_value_t = 0.01)]
    max_failure_rate: f64,
}

#[derive(Debug, Args)]
struct DynamicsArgs {
    #[arg(long, default_value_t = 1e10)]
    nu_over_hbar: f64,
    #[arg(long, default_value_t = 1e3)]
    gamma: f64,
    #[arg(long, default_value_t = 1e-2)]
    omega0: f64,
    #[arg(long, default_value_t = 100_000)]
    points: usize,
    /// Largest γt² on the grid, in rad.
    #[arg(long, default_value_t = 1e-4)]
    phase_span: f64,
    /// Filter threshold on |cos Δ|; defaults to the parameter-derived value.
    #[arg(long)]
    filter_eps: Option<f64>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1000)]
    instances: usize,
    #[arg(long, default_value_t = 100)]
    mle_runs: usize,
    #[arg(long, default_value_t = 1_000_000)]
    shots: u64,
    #[arg(long, hide = true)]
    inject_fault: bool,
}

#[derive(Debug, Args)]
struct CrlbArgs {
    #[command(flatten)]
    campaign: CampaignArgs,
    /// Explicit comma-separated noise levels; overrides the grid flags.
    #[arg(long, value_delimiter = ',')]
    rho: Option<Vec<f64>>,
    /// Noise grid step, step, 2·step, … up to this value.
    #[arg(long)]
    rho_max: Option<f64>,
    #[arg(long)]
    rho_step: Option<f64>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[command(flatten)]
    campaign: CampaignArgs,
    #[arg(long, default_value_t = 0.05)]
    rho: f64,
    /// Also write results.csv (with timings) here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

/// Failure category carried to the exit code.
enum Outcome {
    Ok,
    Failed(String),
}

fn load_config(args: &CampaignArgs, kind: Option<&str>) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::table1(),
    };
    if let Some(kind) = kind {
        cfg.set_experiment(kind.parse()?);
    }
    cfg.seed = args.seed;
    if let Some(m) = &args.m {
        cfg.m_list = m.clone();
    }
    if let Some(t) = args.trials {
        cfg.trials = t;
    }
    if let Some(methods) = &args.methods {
        cfg.methods = methods
            .iter()
            .map(|s| s.parse::<Method>())
            .collect::<Result<_, _>>()?;
    }
    Ok(cfg)
}

fn apply_grid(
    cfg: &mut ExperimentConfig,
    rho_max: Option<f64>,
    rho_step: Option<f64>,
) -> anyhow::Result<()> {
    if rho_max.is_some() || rho_step.is_some() {
        cfg.rho_grid = rho_grid(rho_max.unwrap_or(0.05), rho_step.unwrap_or(0.005))?;
    }
    Ok(())
}

fn check_failures(out: &CampaignOutput, threshold: f64) -> Outcome {
    let worst = out
        .cells
        .iter()
        .filter(|c| c.failure_rate() > threshold)
        .max_by(|a, b| a.failure_rate().total_cmp(&b.failure_rate()));
    match worst {
        Some(c) => Outcome::Failed(format!(
            "{} at m={} rho={}: {} of {} trials failed",
            c.method, c.m, c.rho, c.failures, c.trials
        )),
        None => Outcome::Ok,
    }
}

fn simulate(args: &SimulateArgs) -> anyhow::Result<Outcome> {
    let mut cfg = load_config(&args.campaign, args.experiment.as_deref())?;
    apply_grid(&mut cfg, args.rho_max, args.rho_step)?;
    match cfg.experiment {
        ExperimentKind::Dynamics => {
            return dynamics_scan(&DynamicsArgs {
                nu_over_hbar: 1e10,
                gamma: 1e3,
                omega0: 1e-2,
                points: 100_000,
                phase_span: 1e-4,
                filter_eps: None,
                out_dir: args.out_dir.clone(),
            })
        }
        ExperimentKind::Bench => {
            let out = bench_timing(&cfg)?;
            print_timing(&out);
            out.write_to_dir(&args.out_dir)
                .with_context(|| format!("writing to {}", args.out_dir.display()))?;
            return Ok(check_failures(&out, args.max_failure_rate));
        }
        _ => {}
    }
    let start = Instant::now();
    let out = run_campaign(&cfg)?;
    out.write_to_dir(&args.out_dir)
        .with_context(|| format!("writing to {}", args.out_dir.display()))?;
    println!(
        "{} experiment: {} cells x {} trials in {:.2} s -> {}",
        cfg.experiment,
        out.cells.len(),
        cfg.trials,
        start.elapsed().as_secs_f64(),
        args.out_dir.display()
    );
    Ok(check_failures(&out, args.max_failure_rate))
}

/// Steps keeping the RK4 phase advance per step near 1e-3 rad.
fn oracle_steps(p: &TwoLevelParams, t_end: f64) -> usize {
    let rate = 0.5 * (1.0 + p.splitting()) * (2.0 * p.gamma * t_end + p.omega0);
    (rate * t_end / 1e-3).ceil().max(1000.0) as usize
}

fn dynamics_scan(args: &DynamicsArgs) -> anyhow::Result<Outcome> {
    let p = TwoLevelParams::new(args.nu_over_hbar, args.gamma, args.omega0)?;
    let eps = args.filter_eps.unwrap_or_else(|| p.default_filter_eps());
    let start = Instant::now();
    let grid = uniform_phase_grid(&p, args.phase_span, args.points);
    let report = phase_discrepancy_scan(&p, &grid, eps)?;
    let elapsed = start.elapsed();
    std::fs::create_dir_all(&args.out_dir)?;
    let path = args.out_dir.join("dynamics.csv");
    let file = std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    write_dynamics_csv(&report, std::io::BufWriter::new(file))?;
    println!("points: {}", report.points.len());
    println!("filter eps: {}", fmt_f64(eps));
    println!("max unfiltered discrepancy: {}", fmt_f64(report.max_unfiltered_discrepancy));
    println!(
        "filtered fraction: {} ({} points)",
        fmt_f64(report.filtered_fraction),
        report.filtered_count()
    );
    println!("scan time: {:.3} s", elapsed.as_secs_f64());

    let t_end = grid.last().copied().unwrap_or(0.0);
    if t_end > 0.0 {
        let steps = oracle_steps(&p, t_end);
        if steps <= 20_000_000 {
            let check = ode_cross_check(&p, t_end, steps, (steps / 100).max(1))?;
            println!(
                "ODE oracle ({steps} RK4 steps): max deviation {}, unitarity drift {}",
                fmt_f64(check.max_deviation),
                fmt_f64(check.unitarity_drift)
            );
        } else {
            println!("ODE oracle skipped: {steps} RK4 steps needed");
        }
    }
    Ok(Outcome::Ok)
}

fn verify_qsim(args: &VerifyArgs) -> anyhow::Result<Outcome> {
    let mut opts = VerifyOptions {
        instances: args.instances,
        mle_runs: args.mle_runs,
        shots: args.shots,
        inject_fault: args.inject_fault,
        ..VerifyOptions::default()
    };
    if let Some(seed) = args.seed {
        opts.seed = seed;
    }
    let report = verify::run(&opts)?;
    println!("instances: {}", report.instances);
    println!("max phase deviation: {}", fmt_f64(report.max_phase_deviation));
    println!("max POVM deviation: {}", fmt_f64(report.max_povm_deviation));
    println!("max norm deviation: {}", fmt_f64(report.max_norm_deviation));
    println!(
        "phase MLE inside 3-sigma band: {}/{}",
        report.mle_within_band, report.mle_runs
    );
    if report.passed() {
        println!("PASS");
        Ok(Outcome::Ok)
    } else {
        for f in &report.failures {
            println!("FAIL: {f}");
        }
        Ok(Outcome::Failed(format!("{} check(s) failed", report.failures.len())))
    }
}

fn crlb(args: &CrlbArgs) -> anyhow::Result<Outcome> {
    let mut cfg = load_config(&args.campaign, None)?;
    cfg.methods = vec![Method::QuERLoc];
    if let Some(rho) = &args.rho {
        cfg.rho_grid = rho.clone();
    } else {
        let step = args.rho_step.unwrap_or(0.005);
        let max = args.rho_max.unwrap_or(0.05);
        cfg.rho_grid = rho_grid(max, step)?.into_iter().filter(|r| *r > 0.0).collect();
    }
    if cfg.rho_grid.is_empty() {
        bail!("empty noise grid");
    }
    println!("m,rho,crlb");
    for (m, rho, bound) in crlb_table(&cfg)? {
        println!("{m},{},{}", fmt_f64(rho), fmt_f64(bound));
    }
    Ok(Outcome::Ok)
}

fn print_timing(out: &CampaignOutput) {
    println!("method,m,rho,trials,failures,mean_solve_time_s");
    for c in &out.cells {
        println!(
            "{},{},{},{},{},{}",
            c.method,
            c.m,
            fmt_f64(c.rho),
            c.trials,
            c.failures,
            c.mean_solve_time.map(fmt_f64).unwrap_or_default()
        );
    }
}

fn bench(args: &BenchArgs) -> anyhow::Result<Outcome> {
    let mut cfg = load_config(&args.campaign, None)?;
    cfg.experiment = ExperimentKind::Bench;
    cfg.rho_grid = vec![args.rho];
    let out = bench_timing(&cfg)?;
    print_timing(&out);
    if let Some(dir) = &args.out_dir {
        out.write_to_dir(dir)
            .with_context(|| format!("writing to {}", dir.display()))?;
    }
    Ok(check_failures(&out, 0.01))
}

fn run(cli: &Cli) -> anyhow::Result<Outcome> {
    match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::DynamicsScan(a) => dynamics_scan(a),
        Command::VerifyQsim(a) => verify_qsim(a),
        Command::Crlb(a) => crlb(a),
        Command::Bench(a) => bench(a),
    }
}

fn ensure_dir_writable(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(workers) = cli.workers {
        if workers == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(EXIT_USAGE);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    if let Command::Simulate(a) = &cli.command {
        if let Err(e) = ensure_dir_writable(&a.out_dir) {
            eprintln!("error: {e:#}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    match run(&cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Failed(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_FAILURE)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}
