//! Monte Carlo campaigns: scenario sampling, per-trial measurement and solve for
//! every method, aggregation into result cells, and the CSV artifacts.
//!
//! Every trial draws its noise from a private stream addressed by
//! `(method, m, rho index, trial)`, and the ground truth sequence comes from one
//! shared stream. Trials run in parallel and are collected in index order, so the
//! output does not depend on the worker count.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;
use serde::Deserialize;

use crate::localize::{
    build_linear_system, gd_refine, multilateration_init_min_norm, tdoa_chan_solve, wls_solve,
    GdOptions, LinearSystem, TdoaOptions,
};
use crate::metrics::{crlb_from_traces, fisher_matrix, fisher_trace_inverse, rmse_of, TrialRecord};
use crate::model::{default_scheme_list, AnchorSet, Position, ProbeScheme};
use crate::qdynamics::ScanReport;
use crate::ranging::{mimic_classical_lambda, perturb_distance, perturb_lambda, quer_lambda, NoiseModel};
use crate::rng::{self, TrialRng, POSITIONS_PURPOSE};
use crate::{Error, Result};

pub const RESULTS_HEADER: [&str; 9] = [
    "experiment",
    "method",
    "m",
    "rho",
    "trials",
    "failures",
    "rmse",
    "crlb",
    "mean_solve_time_s",
];
pub const ERRORS_HEADER: [&str; 6] = ["experiment", "method", "m", "rho", "trial", "error"];
pub const DYNAMICS_HEADER: [&str; 5] = ["t", "phase_real", "phase_approx", "abs_discrepancy", "filtered"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    QuERLoc,
    QuERLocSim,
    MultilaterationGd,
    TdoaChan,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::QuERLoc,
        Method::QuERLocSim,
        Method::MultilaterationGd,
        Method::TdoaChan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::QuERLoc => "QuERLoc",
            Method::QuERLocSim => "QuERLoc-sim",
            Method::MultilaterationGd => "Multilateration+GD",
            Method::TdoaChan => "TDoA-Chan",
        }
    }

    /// Purpose field of the method's RNG stream ids.
    pub fn stream_purpose(self) -> u8 {
        match self {
            Method::QuERLoc => 0,
            Method::QuERLocSim => 1,
            Method::MultilaterationGd => 2,
            Method::TdoaChan => 3,
        }
    }

    fn is_quantum(self) -> bool {
        matches!(self, Method::QuERLoc | Method::QuERLocSim)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown method {s:?}; expected one of QuERLoc, QuERLoc-sim, Multilateration+GD, TDoA-Chan"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Main,
    SameAnchor,
    Mimic,
    Dynamics,
    Bench,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Main => "main",
            ExperimentKind::SameAnchor => "same-anchor",
            ExperimentKind::Mimic => "mimic",
            ExperimentKind::Dynamics => "dynamics",
            ExperimentKind::Bench => "bench",
        }
    }

    pub fn default_methods(self) -> Vec<Method> {
        match self {
            ExperimentKind::Mimic => vec![Method::QuERLoc, Method::QuERLocSim],
            ExperimentKind::Dynamics => Vec::new(),
            _ => vec![Method::QuERLoc, Method::MultilaterationGd, Method::TdoaChan],
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "main" => Ok(ExperimentKind::Main),
            "same-anchor" => Ok(ExperimentKind::SameAnchor),
            "mimic" => Ok(ExperimentKind::Mimic),
            "dynamics" => Ok(ExperimentKind::Dynamics),
            "bench" => Ok(ExperimentKind::Bench),
            _ => Err(Error::Config(format!(
                "unknown experiment {s:?}; expected main, same-anchor, mimic, dynamics or bench"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AnchorTopology {
    /// The ten-anchor layout on the cube `[0, κ_a]³`.
    Table1,
    Explicit(Vec<Vec<f64>>),
}

/// `0, step, 2·step, …` up to and including `max` (within rounding).
pub fn rho_grid(max: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(max >= 0.0) || !max.is_finite() {
        return Err(Error::Config(format!("invalid noise grid: max {max}, step {step}")));
    }
    let count = (max / step + 1e-9).floor() as usize;
    Ok((0..=count).map(|i| i as f64 * step).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub d: usize,
    pub kappa_s: f64,
    pub kappa_a_ratio: f64,
    pub n: usize,
    pub anchors: AnchorTopology,
    pub m_list: Vec<usize>,
    pub rho_grid: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub experiment: ExperimentKind,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::table1()
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum AnchorsToml {
    Named(String),
    List(Vec<Vec<f64>>),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigToml {
    d: Option<usize>,
    kappa_s: Option<f64>,
    kappa_a_ratio: Option<f64>,
    n: Option<usize>,
    anchors: Option<AnchorsToml>,
    m: Option<Vec<usize>>,
    trials: Option<usize>,
    seed: Option<u64>,
    rho_grid: Option<Vec<f64>>,
    methods: Option<Vec<String>>,
    experiment: Option<String>,
}

impl ExperimentConfig {
    /// d = 3, κ_s = 100 m, κ_a = κ_s/2, n = 10, m ∈ {3,4,5}, ρ ∈ {0, 0.5%, …, 5%},
    /// r = 10⁴, main experiment.
    pub fn table1() -> Self {
        Self {
            d: 3,
            kappa_s: 100.0,
            kappa_a_ratio: 0.5,
            n: 10,
            anchors: AnchorTopology::Table1,
            m_list: vec![3, 4, 5],
            rho_grid: rho_grid(0.05, 0.005).expect("static grid"),
            trials: 10_000,
            seed: 0,
            methods: ExperimentKind::Main.default_methods(),
            experiment: ExperimentKind::Main,
        }
    }

    /// Default configuration with the experiment kind and its method set.
    pub fn for_kind(kind: ExperimentKind) -> Self {
        let mut cfg = Self::table1();
        cfg.set_experiment(kind);
        cfg
    }

    pub fn set_experiment(&mut self, kind: ExperimentKind) {
        self.experiment = kind;
        self.methods = kind.default_methods();
    }

    pub fn kappa_a(&self) -> f64 {
        self.kappa_a_ratio * self.kappa_s
    }

    pub fn anchor_set(&self) -> Result<AnchorSet> {
        let set = match &self.anchors {
            AnchorTopology::Table1 => {
                if self.d != 3 || self.n != 10 {
                    return Err(Error::Config(
                        "the table1 anchor layout needs d = 3 and n = 10".into(),
                    ));
                }
                AnchorSet::table1(self.kappa_a())
            }
            AnchorTopology::Explicit(list) => {
                let anchors = list
                    .iter()
                    .map(|c| Position::new(c.clone()))
                    .collect::<Result<Vec<_>>>()?;
                AnchorSet::bounded(anchors, self.kappa_a() * (1.0 + 1e-12))?
            }
        };
        if set.dim() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: set.dim(),
            });
        }
        if set.len() != self.n {
            return Err(Error::Config(format!(
                "n = {} but {} anchors were given",
                self.n,
                set.len()
            )));
        }
        Ok(set)
    }

    /// Anchors a method consumes at `m` rangings.
    pub fn anchors_needed(&self, method: Method, m: usize) -> usize {
        match (method.is_quantum(), self.experiment) {
            (true, _) | (false, ExperimentKind::SameAnchor) => 2 * m,
            (false, _) => m,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa_s > 0.0) || !self.kappa_s.is_finite() {
            return Err(Error::Config(format!("kappa_s must be positive, got {}", self.kappa_s)));
        }
        if !(self.kappa_a_ratio > 0.0) || !self.kappa_a_ratio.is_finite() {
            return Err(Error::Config(format!(
                "kappa_a_ratio must be positive, got {}",
                self.kappa_a_ratio
            )));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.experiment == ExperimentKind::Dynamics {
            return Ok(());
        }
        self.anchor_set()?;
        if self.m_list.is_empty() || self.rho_grid.is_empty() || self.methods.is_empty() {
            return Err(Error::Config("m list, noise grid and methods must be non-empty".into()));
        }
        if let Some(rho) = self.rho_grid.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return Err(Error::Config(format!("noise level {rho} outside [0, 1)")));
        }
        for &m in &self.m_list {
            if m == 0 {
                return Err(Error::Config("m must be at least 1".into()));
            }
            for &method in &self.methods {
                let needed = self.anchors_needed(method, m);
                if needed > self.n {
                    return Err(Error::Config(format!(
                        "{method} at m = {m} needs {needed} anchors, only {} available",
                        self.n
                    )));
                }
                if method == Method::TdoaChan && needed < 2 {
                    return Err(Error::Config(format!("{method} needs at least two anchors")));
                }
            }
        }
        Ok(())
    }

    /// Parse a TOML document; absent keys keep their defaults.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: ConfigToml = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut cfg = Self::table1();
        if let Some(kind) = raw.experiment {
            cfg.set_experiment(kind.parse()?);
        }
        if let Some(d) = raw.d {
            if d != 2 && d != 3 {
                return Err(Error::UnsupportedDimension(d));
            }
            cfg.d = d;
        }
        if let Some(v) = raw.kappa_s {
            cfg.kappa_s = v;
        }
        if let Some(v) = raw.kappa_a_ratio {
            cfg.kappa_a_ratio = v;
        }
        if let Some(v) = raw.n {
            cfg.n = v;
        }
        match raw.anchors {
            Some(AnchorsToml::Named(name)) if name == "table1" => cfg.anchors = AnchorTopology::Table1,
            Some(AnchorsToml::Named(name)) => {
                return Err(Error::Config(format!("unknown anchor layout {name:?}")))
            }
            Some(AnchorsToml::List(list)) => {
                if raw.n.is_none() {
                    cfg.n = list.len();
                }
                cfg.anchors = AnchorTopology::Explicit(list);
            }
            None => {}
        }
        if let Some(v) = raw.m {
            cfg.m_list = v;
        }
        if let Some(v) = raw.trials {
            cfg.trials = v;
        }
        if let Some(v) = raw.seed {
            cfg.seed = v;
        }
        if let Some(v) = raw.rho_grid {
            cfg.rho_grid = v;
        }
        if let Some(v) = raw.methods {
            cfg.methods = v.iter().map(|s| s.parse()).collect::<Result<_>>()?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }
}

/// `r` sensor positions uniform on `[0, κ_s]^d`.
pub fn sample_positions<R: Rng + ?Sized>(config: &ExperimentConfig, rng: &mut R) -> Vec<Position> {
    (0..config.trials)
        .map(|_| {
            let coords = (0..config.d)
                .map(|_| rng.random_range(0.0..=config.kappa_s))
                .collect();
            Position::from_raw(coords)
        })
        .collect()
}

/// The campaign's shared ground-truth sequence.
pub fn campaign_positions(config: &ExperimentConfig) -> Vec<Position> {
    let mut r = rng::stream(config.seed, rng::stream_id(POSITIONS_PURPOSE, 0, 0, 0));
    sample_positions(config, &mut r)
}

/// Everything one solved trial yields.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub record: TrialRecord,
    /// The QuERLoc linear system (with noisy weights), kept for the bound.
    pub system: Option<LinearSystem>,
}

/// Pre-resolved per-campaign context shared by all trials.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ExperimentConfig,
    pub anchors: AnchorSet,
}

impl Scenario {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            anchors: config.anchor_set()?,
            config: config.clone(),
        })
    }

    fn schemes(&self, m: usize) -> Result<Vec<ProbeScheme>> {
        default_scheme_list(m, self.anchors.len())
    }

    /// Generates the method's measurements for `truth`, then times and runs its
    /// solver. Scenario and noise generation are excluded from `solve_time`.
    pub fn run_trial(
        &self,
        method: Method,
        m: usize,
        rho: f64,
        trial: usize,
        truth: &Position,
        rng: &mut TrialRng,
    ) -> Result<TrialOutcome> {
        let noise = NoiseModel::new(rho)?;
        let kappa_s = self.config.kappa_s;
        let (estimate, solve_time, system) = match method {
            Method::QuERLoc | Method::QuERLocSim => {
                let schemes = self.schemes(m)?;
                let lambdas = schemes
                    .iter()
                    .map(|s| {
                        if method == Method::QuERLoc {
                            Ok(perturb_lambda(quer_lambda(truth, &self.anchors, s)?, &noise, rng))
                        } else {
                            mimic_classical_lambda(truth, &self.anchors, s, &noise, rng)
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                let start = Instant::now();
                let sys = build_linear_system(&self.anchors, &schemes, &lambdas, kappa_s)?;
                let est = wls_solve(&sys)?;
                let elapsed = start.elapsed();
                (est.x_hat, elapsed, Some(sys))
            }
            Method::MultilaterationGd | Method::TdoaChan => {
                let k = self.config.anchors_needed(method, m);
                let used = self.anchors.prefix(k)?;
                let d_tilde: Vec<f64> = used
                    .iter()
                    .map(|a| perturb_distance(a.dist(truth), &noise, rng))
                    .collect();
                if method == Method::MultilaterationGd {
                    let start = Instant::now();
                    let init = multilateration_init_min_norm(used, &d_tilde)?;
                    let est = gd_refine(&init.x_hat, used, &d_tilde, &GdOptions::for_scale(kappa_s))?;
                    (est.x_hat, start.elapsed(), None)
                } else {
                    let ranges: Vec<f64> = d_tilde[1..].iter().map(|d| d - d_tilde[0]).collect();
                    let opts = TdoaOptions {
                        second_stage: true,
                        allow_underdetermined: true,
                    };
                    let start = Instant::now();
                    let est = tdoa_chan_solve(used, &ranges, &opts)?;
                    (est.estimate.x_hat, start.elapsed(), None)
                }
            }
        };
        if estimate.coords().iter().any(|c| !c.is_finite()) {
            return Err(Error::SingularGeometry("non-finite estimate".into()));
        }
        Ok(TrialOutcome {
            record: TrialRecord::new(trial, truth.clone(), estimate, solve_time),
            system,
        })
    }
}

/// One `(method, m, rho)` aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub experiment: ExperimentKind,
    pub method: Method,
    pub m: usize,
    pub rho: f64,
    pub trials: usize,
    pub failures: usize,
    /// `None` when every trial failed.
    pub rmse: Option<f64>,
    /// QuERLoc rows at `rho > 0` only.
    pub crlb: Option<f64>,
    /// Monte Carlo standard error of `rmse`.
    pub rmse_std_error: Option<f64>,
    /// Filled by timing runs only; wall-clock values would break reproducibility.
    pub mean_solve_time: Option<f64>,
    /// Per-trial error, `None` for failed trials.
    pub errors: Vec<Option<f64>>,
}

impl CellResult {
    pub fn failure_rate(&self) -> f64 {
        self.failures as f64 / self.trials as f64
    }

    pub fn successful_errors(&self) -> Vec<f64> {
        self.errors.iter().flatten().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignOutput {
    pub cells: Vec<CellResult>,
}

impl CampaignOutput {
    pub fn cell(&self, method: Method, m: usize, rho: f64) -> Option<&CellResult> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.m == m && (c.rho - rho).abs() < 1e-12)
    }

    pub fn max_failure_rate(&self) -> f64 {
        self.cells.iter().map(CellResult::failure_rate).fold(0.0, f64::max)
    }

    pub fn write_results_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(RESULTS_HEADER).map_err(csv_err)?;
        for c in &self.cells {
            w.write_record([
                c.experiment.name().to_string(),
                c.method.name().to_string(),
                c.m.to_string(),
                fmt_f64(c.rho),
                c.trials.to_string(),
                c.failures.to_string(),
                c.rmse.map(fmt_f64).unwrap_or_default(),
                c.crlb.map(fmt_f64).unwrap_or_default(),
                c.mean_solve_time.map(fmt_f64).unwrap_or_default(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_errors_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(ERRORS_HEADER).map_err(csv_err)?;
        for c in &self.cells {
            for (trial, e) in c.errors.iter().enumerate() {
                w.write_record([
                    c.experiment.name().to_string(),
                    c.method.name().to_string(),
                    c.m.to_string(),
                    fmt_f64(c.rho),
                    trial.to_string(),
                    e.map(fmt_f64).unwrap_or_default(),
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `results.csv` and `errors.csv` into `dir`, creating it if needed.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let results = std::fs::File::create(dir.join("results.csv"))?;
        self.write_results_csv(std::io::BufWriter::new(results))?;
        let errors = std::fs::File::create(dir.join("errors.csv"))?;
        self.write_errors_csv(std::io::BufWriter::new(errors))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Seventeen significant digits, exponent form; locale independent.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn aggregate(
    config: &ExperimentConfig,
    method: Method,
    m: usize,
    rho: f64,
    outcomes: Vec<Result<TrialOutcome>>,
    keep_time: bool,
) -> CellResult {
    let trials = outcomes.len();
    let mut errors = Vec::with_capacity(trials);
    let mut traces = Vec::new();
    let mut trace_failed = false;
    let mut total_time = Duration::ZERO;
    for outcome in &outcomes {
        match outcome {
            Ok(o) => {
                errors.push(Some(o.record.error));
                total_time += o.record.solve_time;
                if method == Method::QuERLoc && rho > 0.0 {
                    let trace = o
                        .system
                        .as_ref()
                        .ok_or(Error::UndefinedInformation)
                        .and_then(|s| fisher_trace_inverse(&fisher_matrix(s, rho)?));
                    match trace {
                        Ok(t) => traces.push(t),
                        Err(_) => trace_failed = true,
                    }
                }
            }
            Err(_) => errors.push(None),
        }
    }
    let ok: Vec<f64> = errors.iter().flatten().copied().collect();
    let failures = trials - ok.len();
    CellResult {
        experiment: config.experiment,
        method,
        m,
        rho,
        trials,
        failures,
        rmse: rmse_of(&ok).ok(),
        crlb: if trace_failed { None } else { crlb_from_traces(&traces).ok() },
        rmse_std_error: crate::metrics::rmse_std_error(&ok).ok(),
        mean_solve_time: (keep_time && !ok.is_empty())
            .then(|| total_time.as_secs_f64() / ok.len() as f64),
        errors,
    }
}

/// Runs every `(method, m, rho)` cell. Cells are ordered method-major, then `m`,
/// then `rho`, matching the configuration's list order.
pub fn run_campaign(config: &ExperimentConfig) -> Result<CampaignOutput> {
    if config.experiment == ExperimentKind::Dynamics {
        return Err(Error::Config(
            "the dynamics experiment is a phase scan, not a localization campaign".into(),
        ));
    }
    let scenario = Scenario::new(config)?;
    let truths = campaign_positions(config);
    let mut cells = Vec::new();
    for &method in &config.methods {
        for &m in &config.m_list {
            for (rho_index, &rho) in config.rho_grid.iter().enumerate() {
                let outcomes: Vec<Result<TrialOutcome>> = truths
                    .par_iter()
                    .enumerate()
                    .map(|(trial, truth)| {
                        let id = rng::stream_id(method.stream_purpose(), m, rho_index, trial);
                        let mut r = rng::stream(config.seed, id);
                        scenario.run_trial(method, m, rho, trial, truth, &mut r)
                    })
                    .collect();
                cells.push(aggregate(config, method, m, rho, outcomes, false));
            }
        }
    }
    Ok(CampaignOutput { cells })
}

/// Like [`run_campaign`] but sequential, with the mean solve time recorded.
/// Methods are interleaved per trial so drift in machine load hits all of them.
pub fn bench_timing(config: &ExperimentConfig) -> Result<CampaignOutput> {
    let mut config = config.clone();
    config.experiment = ExperimentKind::Bench;
    let scenario = Scenario::new(&config)?;
    let truths = campaign_positions(&config);
    let mut cells = Vec::new();
    for &m in &config.m_list {
        for (rho_index, &rho) in config.rho_grid.iter().enumerate() {
            let mut per_method: Vec<Vec<Result<TrialOutcome>>> =
                config.methods.iter().map(|_| Vec::with_capacity(truths.len())).collect();
            for (trial, truth) in truths.iter().enumerate() {
                for (slot, &method) in config.methods.iter().enumerate() {
                    let id = rng::stream_id(method.stream_purpose(), m, rho_index, trial);
                    let mut r = rng::stream(config.seed, id);
                    per_method[slot].push(scenario.run_trial(method, m, rho, trial, truth, &mut r));
                }
            }
            for (slot, outcomes) in per_method.into_iter().enumerate() {
                cells.push(aggregate(&config, config.methods[slot], m, rho, outcomes, true));
            }
        }
    }
    // Present method-major like run_campaign.
    let order = |c: &CellResult| config.methods.iter().position(|m| *m == c.method).unwrap_or(0);
    cells.sort_by_key(order);
    Ok(CampaignOutput { cells })
}

/// CRLB per `(m, rho)` for the QuERLoc configuration, over the campaign's truths.
pub fn crlb_table(config: &ExperimentConfig) -> Result<Vec<(usize, f64, f64)>> {
    let mut cfg = config.clone();
    cfg.methods = vec![Method::QuERLoc];
    if let Some(rho) = cfg.rho_grid.iter().find(|r| !(**r > 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "the bound is undefined at rho = {rho}"
        )));
    }
    let scenario = Scenario::new(&cfg)?;
    let truths = campaign_positions(&cfg);
    let mut rows = Vec::new();
    for &m in &cfg.m_list {
        for (rho_index, &rho) in cfg.rho_grid.iter().enumerate() {
            let traces: Vec<Result<f64>> = truths
                .par_iter()
                .enumerate()
                .map(|(trial, truth)| {
                    let id = rng::stream_id(Method::QuERLoc.stream_purpose(), m, rho_index, trial);
                    let mut r = rng::stream(cfg.seed, id);
                    let o = scenario.run_trial(Method::QuERLoc, m, rho, trial, truth, &mut r)?;
                    let sys = o.system.ok_or(Error::UndefinedInformation)?;
                    fisher_trace_inverse(&fisher_matrix(&sys, rho)?)
                })
                .collect();
            let traces = traces.into_iter().collect::<Result<Vec<_>>>()?;
            rows.push((m, rho, crlb_from_traces(&traces)?));
        }
    }
    Ok(rows)
}

pub fn write_dynamics_csv<W: Write>(report: &ScanReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(DYNAMICS_HEADER).map_err(csv_err)?;
    for p in &report.points {
        w.write_record([
            fmt_f64(p.t),
            fmt_f64(p.phase_real),
            fmt_f64(p.phase_approx),
            fmt_f64(p.abs_discrepancy),
            u8::from(p.filtered).to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(kind: ExperimentKind, trials: usize) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::for_kind(kind);
        cfg.trials = trials;
        cfg.seed = 5;
        cfg
    }

    #[test]
    fn table1_defaults() {
        let cfg = ExperimentConfig::table1();
        assert_eq!(cfg.rho_grid.len(), 11);
        assert!((cfg.rho_grid[10] - 0.05).abs() < 1e-15);
        assert_eq!(cfg.kappa_a(), 50.0);
        assert_eq!(cfg.trials, 10_000);
        cfg.validate().unwrap();
    }

    #[test]
    fn names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        for k in ["main", "same-anchor", "mimic", "dynamics", "bench"] {
            assert_eq!(k.parse::<ExperimentKind>().unwrap().name(), k);
        }
        assert!("SDP".parse::<Method>().is_err());
    }

    #[test]
    fn positions_are_reproducible_and_bounded() {
        let cfg = small(ExperimentKind::Main, 10_000);
        let a = campaign_positions(&cfg);
        assert_eq!(a, campaign_positions(&cfg));
        assert!(a.iter().all(|p| p.inf_norm() <= cfg.kappa_s && p.coords().iter().all(|c| *c >= 0.0)));
        for j in 0..3 {
            let mean = a.iter().map(|p| p.coords()[j]).sum::<f64>() / a.len() as f64;
            assert!((mean / 50.0 - 1.0).abs() < 0.01, "{mean}");
        }
    }

    #[test]
    fn zero_noise_trials_are_exact() {
        let cfg = small(ExperimentKind::Main, 50);
        let sc = Scenario::new(&cfg).unwrap();
        for (t, x) in campaign_positions(&cfg).iter().enumerate() {
            let mut r = rng::seeded(t as u64);
            let q = sc.run_trial(Method::QuERLoc, 3, 0.0, t, x, &mut r).unwrap();
            assert!(q.record.error <= 1e-9 * cfg.kappa_s);
            let c = sc.run_trial(Method::TdoaChan, 5, 0.0, t, x, &mut r).unwrap();
            assert!(c.record.error <= 1e-8 * cfg.kappa_s, "{}", c.record.error);
        }
    }

    #[test]
    fn trial_is_deterministic() {
        let cfg = small(ExperimentKind::Main, 1);
        let sc = Scenario::new(&cfg).unwrap();
        let x = Position::new(vec![1.0, 2.0, 3.0]).unwrap();
        for method in [Method::QuERLoc, Method::MultilaterationGd, Method::TdoaChan] {
            let a = sc.run_trial(method, 4, 0.02, 0, &x, &mut rng::seeded(9)).unwrap();
            let b = sc.run_trial(method, 4, 0.02, 0, &x, &mut rng::seeded(9)).unwrap();
            assert_eq!(a.record.estimate, b.record.estimate);
        }
    }

    #[test]
    fn campaign_cardinality_and_mimic_at_zero_noise() {
        let out = run_campaign(&small(ExperimentKind::Main, 20)).unwrap();
        assert_eq!(out.cells.len(), 3 * 3 * 11);
        assert!(out.cells.iter().all(|c| c.trials == 20 && c.errors.len() == 20));
        assert!(out
            .cells
            .iter()
            .all(|c| (c.method == Method::QuERLoc && c.rho > 0.0) == c.crlb.is_some()));

        let mimic = run_campaign(&small(ExperimentKind::Mimic, 20)).unwrap();
        let q = mimic.cell(Method::QuERLoc, 4, 0.0).unwrap();
        let s = mimic.cell(Method::QuERLocSim, 4, 0.0).unwrap();
        for (a, b) in q.successful_errors().iter().zip(s.successful_errors()) {
            assert!(*a <= 1e-9 * 100.0 && b <= 1e-9 * 100.0);
        }
    }

    #[test]
    fn quer_beats_baselines_at_five_percent() {
        let mut cfg = small(ExperimentKind::Main, 400);
        cfg.m_list = vec![5];
        cfg.rho_grid = vec![0.05];
        let out = run_campaign(&cfg).unwrap();
        let q = out.cell(Method::QuERLoc, 5, 0.05).unwrap().rmse.unwrap();
        for b in [Method::MultilaterationGd, Method::TdoaChan] {
            assert!(q < out.cell(b, 5, 0.05).unwrap().rmse.unwrap());
        }
    }

    #[test]
    fn results_csv_layout() {
        let mut cfg = small(ExperimentKind::Main, 3);
        cfg.m_list = vec![3];
        cfg.rho_grid = vec![0.0, 0.01];
        let out = run_campaign(&cfg).unwrap();
        let mut buf = Vec::new();
        out.write_results_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], RESULTS_HEADER.join(","));
        assert_eq!(lines.len(), 1 + 3 * 2);
        assert!(lines[2].starts_with("main,QuERLoc,3,1.0000000000000000e-2,3,0,"));
        let mut buf = Vec::new();
        out.write_errors_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + 3 * 2 * 3);
    }

    #[test]
    fn toml_overrides() {
        let cfg = ExperimentConfig::from_toml_str(
            r#"
            experiment = "mimic"
            m = [4]
            trials = 12
            seed = 3
            rho_grid = [0.01, 0.02]
            "#,
        )
        .unwrap();
        assert_eq!(cfg.methods, vec![Method::QuERLoc, Method::QuERLocSim]);
        assert_eq!(cfg.m_list, vec![4]);
        assert_eq!(cfg.seed, 3);
        cfg.validate().unwrap();

        let custom = ExperimentConfig::from_toml_str(
            r#"
            d = 2
            anchors = [[0.0, 0.0], [50.0, 0.0], [0.0, 50.0], [50.0, 50.0]]
            m = [2]
            methods = ["QuERLoc", "TDoA-Chan"]
            "#,
        )
        .unwrap();
        assert_eq!(custom.n, 4);
        custom.validate().unwrap();

        assert!(ExperimentConfig::from_toml_str("bogus = 1").is_err());
        assert!(ExperimentConfig::from_toml_str("anchors = \"ring\"").is_err());
        let mut too_many = ExperimentConfig::table1();
        too_many.m_list = vec![6];
        assert!(too_many.validate().is_err());
    }

    #[test]
    fn crlb_rejects_zero_noise() {
        let cfg = small(ExperimentKind::Main, 200);
        assert!(crlb_table(&cfg).is_err());
        let mut ok = cfg.clone();
        ok.rho_grid = vec![0.01, 0.02];
        ok.m_list = vec![5];
        let rows = crlb_table(&ok).unwrap();
        let ratio = rows[1].2 / rows[0].2;
        assert!((ratio - 2.0).abs() < 0.01, "{ratio}");
    }
}
