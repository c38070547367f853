//! Command-line front end: argument parsing, the four subcommands and the
//! exit-code contract.
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | ran, but the outcome is negative: not certifiable, fitted rate below the certified rate, or a sweep row at or below `tau_bar` that failed to flock |
//! | 2 | bad input: config, CLI arguments, step constraint, unreadable CSV, I/O |
//! | 3 | numeric blow-up |
//! | 4 | internal error (a broken invariant) |

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certificate::{certify, Certification, FlockingCertificate};
use crate::config::{initial_data, CertificateConfig, RunConfig};
use crate::diagnostics::{
    self, check_delta_small_time, check_dissipative_inequalities, check_envelope, check_position_bound,
    check_velocity_bound, CheckReport, DecayFit, DiagnosticsRecord, DissipativeReport, DissipativeTolerance,
};
use crate::error::{Error, Result};
use crate::integrator::{simulate, Scenario, SimulationOutput};
use crate::kernel::{CommunicationWeight, KernelSpec};
use crate::rng::RNG_ALGORITHM;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Slack on the velocity bound and the small-time delay bound.
pub const BOUND_TOL: f64 = 1e-8;
/// Relative slack on the certified envelope.
pub const ENVELOPE_REL_TOL: f64 = 1e-6;
/// Allowed shortfall of a fitted rate below the certified rate.
pub const FIT_RATE_TOL: f64 = 1e-3;
/// A run has flocked when `d_V(t_end) <= FLOCK_RATIO * d_V(0)`.
pub const FLOCK_RATIO: f64 = 1e-2;

#[derive(Debug, Parser)]
#[command(name = "delayflock", version, about = "Delayed Cucker-Smale flocking simulator and certificate toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub global: GlobalArgs,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// Run config or a manifest written by an earlier run.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides `scenario.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub quiet: bool,
    /// Overrides `integrator.dt`.
    #[arg(long, global = true)]
    pub dt: Option<f64>,
    /// Overrides `integrator.t_end`.
    #[arg(long, global = true)]
    pub t_end: Option<f64>,
    /// Overrides `integrator.output_stride`.
    #[arg(long, global = true)]
    pub output_stride: Option<usize>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Integrate a scenario and write diagnostics.
    Simulate,
    /// Compute a flocking certificate for the scenario's initial data.
    Certify,
    /// Rerun the scenario with the delay matrix rescaled to each tau.
    Sweep {
        /// Comma-separated, strictly increasing maximal delays.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        taus: Vec<f64>,
    },
    /// Fit an exponential decay to a diagnostics CSV.
    Fit {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        t_start: f64,
    },
}

/// Non-error outcome of a command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success,
    Negative,
}

pub fn exit_code(result: &Result<Status>) -> i32 {
    match result {
        Ok(Status::Success) => 0,
        Ok(Status::Negative) => 1,
        Err(e) => error_code(e),
    }
}

pub fn error_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. }
        | Error::Usage(_)
        | Error::StepConstraint { .. }
        | Error::InsufficientData { .. }
        | Error::Io(_)
        | Error::Json(_)
        | Error::Csv(_) => 2,
        Error::NumericBlowUp { .. } => 3,
        Error::Domain(_) | Error::Window { .. } | Error::State(_) | Error::Precondition(_) => 4,
    }
}

/// Written next to every output set; feeding it back through `--config`
/// reproduces the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub rng_algorithm: String,
    pub config: RunConfig,
    /// Output files relative to the manifest.
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    fn new(command: &str, config: &RunConfig, outputs: &[(&str, &str)]) -> Self {
        RunManifest {
            tool: "delayflock".into(),
            version: VERSION.into(),
            command: command.into(),
            seed: config.scenario.seed,
            rng_algorithm: RNG_ALGORITHM.into(),
            config: config.clone(),
            outputs: outputs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

/// Reads a run config, or the config embedded in a manifest.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::config("--config", format!("{}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::config("config", e.to_string()))?;
    if value.get("tool").is_some() && value.get("config").is_some() {
        let manifest: RunManifest = serde_json::from_value(value).map_err(|e| Error::config("manifest", e.to_string()))?;
        return Ok(manifest.config);
    }
    serde_json::from_value(value).map_err(|e| Error::config("config", e.to_string()))
}

impl GlobalArgs {
    /// Loads `--config` and applies the overrides.
    pub fn resolve_config(&self) -> Result<RunConfig> {
        let path = self.config.as_ref().ok_or_else(|| Error::Usage("--config is required".into()))?;
        let mut cfg = load_config(path)?;
        if let Some(seed) = self.seed {
            cfg.scenario.seed = seed;
        }
        if let Some(dt) = self.dt {
            cfg.integrator.dt = dt;
        }
        if let Some(t_end) = self.t_end {
            cfg.integrator.t_end = t_end;
        }
        if let Some(stride) = self.output_stride {
            cfg.integrator.output_stride = stride;
        }
        Ok(cfg)
    }

    fn out_dir(&self) -> Result<Option<&Path>> {
        match &self.out {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                Ok(Some(dir))
            }
            None => Ok(None),
        }
    }

    fn say(&self, text: &str) {
        if !self.quiet {
            println!("{text}");
        }
    }
}

pub fn run(cli: &Cli) -> Result<Status> {
    let g = &cli.global;
    match &cli.command {
        Command::Simulate => {
            let cfg = g.resolve_config()?;
            let out = g.out_dir()?.ok_or_else(|| Error::Usage("simulate needs --out".into()))?;
            let scenario = cfg.scenario.build()?;
            simulate_scenario(&cfg, &scenario, out, g.quiet)
        }
        Command::Certify => {
            let cfg = g.resolve_config()?;
            run_certify(&cfg, g.out_dir()?, g)
        }
        Command::Sweep { taus } => {
            check_taus(taus)?;
            let cfg = g.resolve_config()?;
            let out = g.out_dir()?.ok_or_else(|| Error::Usage("sweep needs --out".into()))?;
            run_sweep(&cfg, taus, out, g)
        }
        Command::Fit { csv, t_start } => run_fit(csv, *t_start, g.out_dir()?, g),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Certificate for the scenario's initial data, if one is requested and exists.
fn scenario_certificate<K: CommunicationWeight>(
    cfg: &RunConfig,
    scenario: &Scenario<K>,
) -> Result<Option<Certification>> {
    let Some(cc) = &cfg.certificate else {
        return Ok(None);
    };
    let data = initial_data(scenario)?;
    let tau0 = cc.tau0_for(&scenario.delays)?;
    certify(&data, scenario.n_agents, tau0, cc.alpha_choice()?, &cfg.scenario.kernel).map(Some)
}

#[derive(Debug, Clone, Serialize)]
pub struct FinalValues {
    pub t: f64,
    #[serde(rename = "d_X")]
    pub d_x: f64,
    #[serde(rename = "d_V")]
    pub d_v: f64,
    #[serde(rename = "R_v")]
    pub r_v: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Checks {
    pub velocity_bound: CheckReport,
    pub delta_small_time: CheckReport,
    pub dissipative: Option<DissipativeReport>,
    pub envelope: Option<CheckReport>,
    pub position_bound: Option<CheckReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitSummary {
    pub t_start: f64,
    #[serde(flatten)]
    pub fit: DecayFit,
}

/// Contents of `summary.json` for `simulate`.
#[derive(Debug, Clone, Serialize)]
pub struct SimulationSummary {
    pub n_agents: usize,
    pub dimension: usize,
    pub reference_mode: bool,
    pub steps: usize,
    pub records: usize,
    pub tau_min: f64,
    pub tau_max: f64,
    #[serde(rename = "R_v_tau")]
    pub r_v_tau: f64,
    pub initial: FinalValues,
    #[serde(rename = "final")]
    pub final_values: FinalValues,
    pub fit: Option<FitSummary>,
    pub certified: Option<bool>,
    pub checks: Checks,
}

fn values(r: &DiagnosticsRecord) -> FinalValues {
    FinalValues {
        t: r.t,
        d_x: r.d_x,
        d_v: r.d_v,
        r_v: r.r_v,
    }
}

/// Runs the invariant checks and the decay fit over a finished simulation.
pub fn summarize<K>(cfg: &RunConfig, scenario: &Scenario<K>, out: &SimulationOutput, cert: Option<&FlockingCertificate>) -> Result<SimulationSummary> {
    let s = &out.series;
    let first = s.records.first().ok_or(Error::InsufficientData { usable: 0, needed: 1 })?;
    let last = s.records.last().expect("non-empty");
    let dissipative = if s.records.len() >= 2 {
        Some(check_dissipative_inequalities(s, DissipativeTolerance::calibrated())?)
    } else {
        None
    };
    let t_start = cfg.analysis.fit_t_start.unwrap_or(5.0 * s.tau_max);
    let fit = match diagnostics::fit_decay_rate(s, t_start) {
        Ok(fit) => Some(FitSummary { t_start, fit }),
        Err(Error::InsufficientData { .. }) => None,
        Err(e) => return Err(e),
    };
    Ok(SimulationSummary {
        n_agents: scenario.n_agents,
        dimension: scenario.dim,
        reference_mode: s.reference_mode,
        steps: out.steps,
        records: s.records.len(),
        tau_min: scenario.delays.tau_min(),
        tau_max: s.tau_max,
        r_v_tau: s.r_v_tau,
        initial: values(first),
        final_values: values(last),
        fit,
        certified: cfg.certificate.as_ref().map(|_| cert.is_some()),
        checks: Checks {
            velocity_bound: check_velocity_bound(s, s.r_v_tau, BOUND_TOL),
            delta_small_time: check_delta_small_time(s, s.r_v_tau, s.tau_max, BOUND_TOL),
            dissipative,
            envelope: cert.map(|_| check_envelope(s, ENVELOPE_REL_TOL)),
            position_bound: cert.map(|c| check_position_bound(s, c.d_x_bound)),
        },
    })
}

fn write_trajectory(path: &Path, trajectory: &[crate::dynamics::SystemState]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let dim = trajectory.first().map_or(0, |s| s.dim());
    let mut header = vec!["t".to_string(), "agent".to_string()];
    header.extend((0..dim).map(|k| format!("x{k}")));
    header.extend((0..dim).map(|k| format!("v{k}")));
    w.write_record(&header)?;
    for s in trajectory {
        for i in 0..s.n_agents() {
            let mut row = vec![s.t.to_string(), i.to_string()];
            row.extend(s.position(i).iter().map(f64::to_string));
            row.extend(s.velocity(i).iter().map(f64::to_string));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `simulate` with an already-built scenario; the kernel may be any weight,
/// while a requested certificate always uses the configured kernel.
pub fn simulate_scenario<K: CommunicationWeight>(cfg: &RunConfig, scenario: &Scenario<K>, out: &Path, quiet: bool) -> Result<Status> {
    cfg.integrator.validate(&scenario.delays)?;
    let cert = match scenario_certificate(cfg, scenario)? {
        Some(Certification::Certified(c)) => Some(c),
        _ => None,
    };
    let result = simulate(scenario, &cfg.integrator, cert.as_ref())?;
    let summary = summarize(cfg, scenario, &result, cert.as_ref())?;

    let mut outputs = vec![("diagnostics", "diagnostics.csv"), ("summary", "summary.json")];
    diagnostics::write_csv(&result.series.records, fs::File::create(out.join("diagnostics.csv"))?)?;
    if cfg.integrator.record_trajectory {
        write_trajectory(&out.join("trajectory.csv"), &result.trajectory)?;
        outputs.push(("trajectory", "trajectory.csv"));
    }
    if let Some(c) = &cert {
        write_json(&out.join("certificate.json"), c)?;
        outputs.push(("certificate", "certificate.json"));
    }
    write_json(&out.join("summary.json"), &summary)?;
    write_json(&out.join("manifest.json"), &RunManifest::new("simulate", cfg, &outputs))?;
    if !quiet {
        let f = &summary.final_values;
        println!("t = {}  d_X = {}  d_V = {}  R_v = {}", f.t, f.d_x, f.d_v, f.r_v);
        if let Some(fit) = &summary.fit {
            println!("fitted rate {} (amplitude {})", fit.fit.rate, fit.fit.amplitude);
        }
        println!("wrote {}", out.display());
    }
    Ok(Status::Success)
}

#[derive(Debug, Clone, Serialize)]
struct NotCertified {
    certified: bool,
    alpha: Option<f64>,
    margin: Option<f64>,
}

fn run_certify(cfg: &RunConfig, out: Option<&Path>, g: &GlobalArgs) -> Result<Status> {
    let mut cfg = cfg.clone();
    let cc = cfg.certificate.get_or_insert_with(CertificateConfig::default).clone();
    let scenario = cfg.scenario.build()?;
    let data = initial_data(&scenario)?;
    let tau0 = cc.tau0_for(&scenario.delays)?;
    let outcome = certify(&data, scenario.n_agents, tau0, cc.alpha_choice()?, &cfg.scenario.kernel)?;
    let (text, status) = match &outcome {
        Certification::Certified(c) => (serde_json::to_string_pretty(c)?, Status::Success),
        Certification::NotCertifiable { alpha, margin } => (
            serde_json::to_string_pretty(&NotCertified { certified: false, alpha: *alpha, margin: *margin })?,
            Status::Negative,
        ),
    };
    g.say(&text);
    if status == Status::Negative && !g.quiet {
        eprintln!("flocking condition fails on the searched alpha range");
    }
    if let Some(dir) = out {
        fs::write(dir.join("certificate.json"), format!("{text}\n"))?;
        write_json(&dir.join("manifest.json"), &RunManifest::new("certify", &cfg, &[("certificate", "certificate.json")]))?;
    }
    Ok(status)
}

fn check_taus(taus: &[f64]) -> Result<()> {
    if taus.is_empty() {
        return Err(Error::Usage("--taus must list at least one delay".into()));
    }
    if let Some(bad) = taus.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
        return Err(Error::Usage(format!("--taus entries must be positive, got {bad}")));
    }
    if taus.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Usage("--taus must be strictly increasing".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub tau: f64,
    pub dt: f64,
    pub run_dir: String,
    #[serde(rename = "final_d_V")]
    pub final_d_v: f64,
    #[serde(rename = "final_d_X")]
    pub final_d_x: f64,
    pub fitted_rate: Option<f64>,
    pub flocked: bool,
    pub envelope_violated: Option<bool>,
    pub below_tau_bar: Option<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary {
    pub tau_bar: Option<f64>,
    pub certificate: Option<FlockingCertificate>,
    /// Largest swept tau such that every run up to it flocked.
    pub observed_threshold: Option<f64>,
    /// False only when a run with `tau <= tau_bar` failed to flock or broke
    /// the envelope.
    pub consistent_with_certificate: bool,
    pub flock_ratio: f64,
    pub rows: Vec<SweepRow>,
}

fn sweep_one(cfg: &RunConfig, base: &Scenario<KernelSpec>, tau: f64, index: usize, cert: Option<&FlockingCertificate>, out: &Path) -> Result<SweepRow> {
    let delays = base.delays.rescaled_to_max(tau)?;
    let mut run_cfg = cfg.clone();
    let tau_min = delays.tau_min_positive().unwrap_or(tau);
    run_cfg.integrator.dt = cfg.integrator.dt.min(tau_min);
    let scenario = Scenario {
        n_agents: base.n_agents,
        dim: base.dim,
        kernel: base.kernel,
        delays,
        history: base.history.clone(),
    };
    let result = simulate(&scenario, &run_cfg.integrator, cert)?;
    let summary = summarize(&run_cfg, &scenario, &result, cert)?;
    let run_dir = format!("run_{index:03}");
    let dir = out.join(&run_dir);
    fs::create_dir_all(&dir)?;
    diagnostics::write_csv(&result.series.records, fs::File::create(dir.join("diagnostics.csv"))?)?;
    write_json(&dir.join("summary.json"), &summary)?;
    let first = &summary.initial;
    let last = &summary.final_values;
    Ok(SweepRow {
        tau,
        dt: run_cfg.integrator.dt,
        run_dir,
        final_d_v: last.d_v,
        final_d_x: last.d_x,
        fitted_rate: summary.fit.map(|f| f.fit.rate),
        flocked: last.d_v <= FLOCK_RATIO * first.d_v,
        envelope_violated: summary.checks.envelope.map(|r| !r.passed),
        below_tau_bar: cert.map(|c| tau <= c.tau_bar),
    })
}

fn run_sweep(cfg: &RunConfig, taus: &[f64], out: &Path, g: &GlobalArgs) -> Result<Status> {
    let base = cfg.scenario.build()?;
    if base.delays.tau_max() == 0.0 {
        return Err(Error::config("scenario.delays", "a sweep needs positive base delays to rescale"));
    }
    let cert = match scenario_certificate(cfg, &base)? {
        Some(Certification::Certified(c)) => Some(c),
        _ => None,
    };
    let rows: Vec<SweepRow> = taus
        .par_iter()
        .enumerate()
        .map(|(k, &tau)| sweep_one(cfg, &base, tau, k, cert.as_ref(), out))
        .collect::<Result<_>>()?;
    let observed_threshold = rows.iter().take_while(|r| r.flocked).last().map(|r| r.tau);
    let consistent = rows
        .iter()
        .filter(|r| r.below_tau_bar == Some(true))
        .all(|r| r.flocked && r.envelope_violated != Some(true));
    let summary = SweepSummary {
        tau_bar: cert.as_ref().map(|c| c.tau_bar),
        certificate: cert,
        observed_threshold,
        consistent_with_certificate: consistent,
        flock_ratio: FLOCK_RATIO,
        rows,
    };

    let mut w = csv::Writer::from_path(out.join("sweep.csv"))?;
    w.write_record(["tau", "dt", "final_d_V", "final_d_X", "fitted_rate", "flocked", "envelope_violated", "below_tau_bar"])?;
    let opt = |v: Option<String>| v.unwrap_or_default();
    for r in &summary.rows {
        w.write_record([
            r.tau.to_string(),
            r.dt.to_string(),
            r.final_d_v.to_string(),
            r.final_d_x.to_string(),
            opt(r.fitted_rate.map(|x| x.to_string())),
            r.flocked.to_string(),
            opt(r.envelope_violated.map(|x| x.to_string())),
            opt(r.below_tau_bar.map(|x| x.to_string())),
        ])?;
    }
    w.flush()?;
    write_json(&out.join("sweep.json"), &summary)?;
    write_json(&out.join("manifest.json"), &RunManifest::new("sweep", cfg, &[("sweep", "sweep.csv"), ("summary", "sweep.json")]))?;

    if !g.quiet {
        let mut stdout = std::io::stdout().lock();
        writeln!(stdout, "{:>12} {:>14} {:>12} {:>8}", "tau", "final d_V", "rate", "flocked")?;
        for r in &summary.rows {
            let mark = match (r.below_tau_bar, summary.tau_bar) {
                (Some(false), Some(_)) => "",
                (Some(true), _) => "  <= tau_bar",
                _ => "",
            };
            let rate = r.fitted_rate.map_or("-".to_string(), |x| format!("{x:.6}"));
            writeln!(stdout, "{:>12} {:>14.6e} {:>12} {:>8}{mark}", r.tau, r.final_d_v, rate, r.flocked)?;
        }
        if let Some(tb) = summary.tau_bar {
            writeln!(stdout, "tau_bar = {tb}")?;
        }
    }
    Ok(if summary.consistent_with_certificate { Status::Success } else { Status::Negative })
}

#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub t_start: f64,
    #[serde(flatten)]
    pub fit: DecayFit,
    /// Rate read off the envelope column, when present.
    pub certificate_rate: Option<f64>,
    pub passed: Option<bool>,
}

/// Decay rate implied by the first and last envelope entries.
pub fn envelope_rate(records: &[DiagnosticsRecord]) -> Option<f64> {
    let mut with_env = records.iter().filter_map(|r| r.envelope_dv.map(|e| (r.t, e)));
    let (t0, e0) = with_env.next()?;
    let (t1, e1) = with_env.next_back()?;
    if t1 <= t0 || !(e0 > 0.0 && e1 > 0.0) {
        return None;
    }
    Some((e0 / e1).ln() / (t1 - t0))
}

pub fn fit_records(records: &[DiagnosticsRecord], t_start: f64) -> Result<FitReport> {
    let fit = diagnostics::fit_decay(records.iter().map(|r| (r.t, r.d_v)), t_start)?;
    let certificate_rate = envelope_rate(records);
    Ok(FitReport {
        t_start,
        fit,
        certificate_rate,
        passed: certificate_rate.map(|rate| fit.rate >= rate - FIT_RATE_TOL),
    })
}

fn run_fit(csv: &Path, t_start: f64, out: Option<&Path>, g: &GlobalArgs) -> Result<Status> {
    if !t_start.is_finite() {
        return Err(Error::Usage(format!("--t-start must be finite, got {t_start}")));
    }
    let file = fs::File::open(csv).map_err(|e| Error::Usage(format!("{}: {e}", csv.display())))?;
    let records = diagnostics::read_csv(file)?;
    let report = fit_records(&records, t_start)?;
    let text = serde_json::to_string_pretty(&report)?;
    g.say(&text);
    if let Some(dir) = out {
        fs::write(dir.join("fit.json"), format!("{text}\n"))?;
    }
    Ok(if report.passed == Some(false) { Status::Negative } else { Status::Success })
}
