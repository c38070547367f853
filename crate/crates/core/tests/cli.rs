mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::random_scenario;
use delayflock::certificate::FlockingCertificate;
use delayflock::cli::{exit_code, simulate_scenario};
use delayflock::config::{
    AlphaSpec, AnalysisConfig, CertificateConfig, DelayConfig, InitialConfig, PositionSpec, RunConfig, VelocitySpec,
};
use delayflock::diagnostics::{write_csv, DiagnosticsRecord, CSV_HEADER};
use delayflock::integrator::{IntegratorConfig, Scenario};
use delayflock::kernel::CommunicationWeight;
use serde_json::Value;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_delayflock")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn base_config() -> RunConfig {
    RunConfig {
        scenario: random_scenario(4, 2, 1, 0.5, DelayConfig::Uniform([0.02, 0.05]), 0.1),
        integrator: IntegratorConfig {
            dt: 0.01,
            t_end: 5.0,
            output_stride: 1,
            record_trajectory: false,
        },
        certificate: Some(CertificateConfig {
            tau0: Some(1.0),
            alpha: AlphaSpec::Value(2.0),
        }),
        analysis: AnalysisConfig::default(),
    }
}

fn write_config(dir: &Path, cfg: &RunConfig) -> PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, cfg.to_json().unwrap()).unwrap();
    p
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn simulate_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base_config();
    cfg.integrator.record_trajectory = true;
    let c = write_config(dir.path(), &cfg);
    let out_dir = dir.path().join("run");
    let out = bin(&["simulate", "--quiet", "--config", c.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(out_dir.join("diagnostics.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "t,d_X,d_V,R_v,delta_N_tau,psi_floor,envelope_dV,residual_dV");
    assert_eq!(csv.lines().count(), 1 + 501);
    let summary = read_json(&out_dir.join("summary.json"));
    assert_eq!(summary["checks"]["velocity_bound"]["passed"], Value::Bool(true));
    assert_eq!(summary["checks"]["envelope"]["passed"], Value::Bool(true));
    assert!(summary["final"]["d_V"].as_f64().unwrap() < summary["initial"]["d_V"].as_f64().unwrap());
    assert!(summary["fit"]["rate"].as_f64().unwrap() > 0.0);
    let manifest = read_json(&out_dir.join("manifest.json"));
    assert_eq!(manifest["rng_algorithm"], "splitmix64/v1");
    assert_eq!(manifest["seed"], 1);
    assert_eq!(manifest["outputs"]["trajectory"], "trajectory.csv");
    let traj = fs::read_to_string(out_dir.join("trajectory.csv")).unwrap();
    assert_eq!(traj.lines().next().unwrap(), "t,agent,x0,x1,v0,v1");
    assert_eq!(traj.lines().count(), 1 + 501 * 4);
}

#[test]
fn overrides_land_in_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let c = write_config(dir.path(), &base_config());
    let out_dir = dir.path().join("run");
    let out = bin(&[
        "simulate", "--quiet", "--config", c.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "--seed", "9",
        "--dt", "0.005", "--t-end", "1", "--output-stride", "4",
    ]);
    assert_eq!(code(&out), 0);
    let m = read_json(&out_dir.join("manifest.json"));
    assert_eq!(m["seed"], 9);
    assert_eq!(m["config"]["scenario"]["seed"], 9);
    assert_eq!(m["config"]["integrator"]["dt"], 0.005);
    assert_eq!(m["config"]["integrator"]["output_stride"], 4);
    let csv = fs::read_to_string(out_dir.join("diagnostics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 51);
}

#[test]
fn step_constraint_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base_config();
    cfg.integrator.dt = 0.03;
    let c = write_config(dir.path(), &cfg);
    let out = bin(&["simulate", "--config", c.to_str().unwrap(), "--out", dir.path().join("run").to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("tau_min"), "{err}");
}

#[test]
fn malformed_configs_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    fs::write(&p, r#"{"scenario": {"n_agents": 1}}"#).unwrap();
    let out = bin(&["simulate", "--config", p.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 2);

    let mut cfg = base_config();
    cfg.scenario.n_agents = 1;
    let c = write_config(dir.path(), &cfg);
    let out = bin(&["certify", "--config", c.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("scenario.n_agents"));

    let out = bin(&["simulate", "--config", dir.path().join("missing.json").to_str().unwrap(), "--out", "x"]);
    assert_eq!(code(&out), 2);
}

/// Alignment weight large enough to make RK4 unstable at the configured step.
struct Stiff;

impl CommunicationWeight for Stiff {
    fn weight(&self, _r: f64) -> f64 {
        1e3
    }
}

#[test]
fn blow_up_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base_config();
    cfg.certificate = None;
    let built = cfg.scenario.build().unwrap();
    let sc = Scenario {
        n_agents: built.n_agents,
        dim: built.dim,
        kernel: Stiff,
        delays: built.delays,
        history: built.history,
    };
    let result = simulate_scenario(&cfg, &sc, dir.path(), true);
    match &result {
        Err(delayflock::Error::NumericBlowUp { t }) => assert!(*t > 0.0 && *t <= cfg.integrator.t_end),
        other => panic!("{other:?}"),
    }
    assert_eq!(exit_code(&result), 3);
    assert!(result.unwrap_err().to_string().contains("t ="));
}

#[test]
fn certify_long_range_kernel() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base_config();
    cfg.certificate = Some(CertificateConfig { tau0: None, alpha: AlphaSpec::Auto });
    let c = write_config(dir.path(), &cfg);
    let out = bin(&["certify", "--config", c.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let printed: Value = serde_json::from_slice(&out.stdout).unwrap();
    let written = read_json(&dir.path().join("certificate.json"));
    assert_eq!(printed, written);
    for key in ["alpha", "tau0", "psi_inf", "beta_proof", "c", "tau_bar", "C0", "rate", "d_X_bound", "strengthened_step_b"] {
        assert!(!written[key].is_null(), "missing {key}");
    }
    assert_eq!(written["strengthened_step_b"], Value::Bool(true));
    let tau_bar = written["tau_bar"].as_f64().unwrap();
    assert!(tau_bar > 0.0 && tau_bar < written["tau0"].as_f64().unwrap());
    // default tau0 is ten times the largest delay
    let cert: FlockingCertificate = serde_json::from_value(written).unwrap();
    let tau_max = cfg.scenario.build().unwrap().delays.tau_max();
    assert!((cert.tau0 - 10.0 * tau_max).abs() < 1e-15);
    cert.validate().unwrap();
}

#[test]
fn certify_fails_for_fast_decaying_kernel_and_large_spread() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base_config();
    cfg.scenario.kernel = delayflock::kernel::KernelSpec::power_law(2.0).unwrap();
    cfg.scenario.n_agents = 2;
    cfg.scenario.initial = Some(InitialConfig {
        positions: PositionSpec::Explicit(vec![vec![0.0, 0.0], vec![1.0, 0.0]]),
        velocities: VelocitySpec::Explicit(vec![vec![10.0, 0.0], vec![-10.0, 0.0]]),
    });
    cfg.certificate = Some(CertificateConfig { tau0: Some(1.0), alpha: AlphaSpec::Auto });
    let c = write_config(dir.path(), &cfg);
    let out = bin(&["certify", "--config", c.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    let printed: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(printed["certified"], Value::Bool(false));
}

#[test]
fn certify_at_consensus() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base_config();
    cfg.scenario.initial.as_mut().unwrap().velocities = VelocitySpec::Explicit(vec![vec![0.3, 0.1]; 4]);
    let c = write_config(dir.path(), &cfg);
    let out = bin(&["certify", "--quiet", "--config", c.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let cert: FlockingCertificate = serde_json::from_str(&fs::read_to_string(dir.path().join("certificate.json")).unwrap()).unwrap();
    assert_eq!(cert.d_v0, 0.0);
    let expected = 2.0 * cert.beta_proof * cert.psi_inf / (1.0 - cert.c);
    assert!((cert.c0 - expected).abs() <= 1e-15 * expected);
    assert_eq!(cert.c, 0.5);
}

#[test]
fn sweep_validation() {
    let dir = tempfile::tempdir().unwrap();
    let c = write_config(dir.path(), &base_config());
    let out_dir = dir.path().join("sweep");
    let (c, o) = (c.to_str().unwrap(), out_dir.to_str().unwrap());
    assert_eq!(code(&bin(&["sweep", "--config", c, "--out", o])), 2);
    assert_eq!(code(&bin(&["sweep", "--config", c, "--out", o, "--taus"])), 2);
    assert_eq!(code(&bin(&["sweep", "--config", c, "--out", o, "--taus", "0.1,abc"])), 2);
    assert_eq!(code(&bin(&["sweep", "--config", c, "--out", o, "--taus", "0.02,0.01"])), 2);
    assert_eq!(code(&bin(&["sweep", "--config", c, "--out", o, "--taus", "-0.01"])), 2);
}

#[test]
fn sweep_below_and_above_tau_bar() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base_config();
    cfg.integrator.t_end = 20.0;
    cfg.integrator.output_stride = 5;
    let c = write_config(dir.path(), &cfg);
    let cert_out = bin(&["certify", "--config", c.to_str().unwrap()]);
    let tau_bar = serde_json::from_slice::<Value>(&cert_out.stdout).unwrap()["tau_bar"].as_f64().unwrap();
    let taus: Vec<String> = [0.25, 0.5, 0.99, 20.0].iter().map(|f| (f * tau_bar).to_string()).collect();
    let out_dir = dir.path().join("sweep");
    let out = bin(&[
        "sweep", "--quiet", "--config", c.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "--taus", &taus.join(","),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary = read_json(&out_dir.join("sweep.json"));
    assert_eq!(summary["tau_bar"].as_f64().unwrap(), tau_bar);
    assert_eq!(summary["consistent_with_certificate"], Value::Bool(true));
    let rows = summary["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    for row in &rows[..3] {
        assert_eq!(row["below_tau_bar"], Value::Bool(true));
        assert_eq!(row["flocked"], Value::Bool(true));
        assert_eq!(row["envelope_violated"], Value::Bool(false));
    }
    assert_eq!(rows[3]["below_tau_bar"], Value::Bool(false));
    assert!(summary["observed_threshold"].as_f64().unwrap() >= tau_bar * 0.99);
    let csv = fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "tau,dt,final_d_V,final_d_X,fitted_rate,flocked,envelope_violated,below_tau_bar");
    assert_eq!(csv.lines().count(), 5);
    for k in 0..4 {
        assert!(out_dir.join(format!("run_{k:03}")).join("diagnostics.csv").exists());
    }
}

#[test]
fn fit_reference_run_recovers_unit_rate() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base_config();
    cfg.scenario.kernel = delayflock::kernel::KernelSpec::constant();
    cfg.scenario.delays = DelayConfig::Constant(0.0);
    cfg.scenario.reference_mode = true;
    cfg.scenario.initial.as_mut().unwrap().velocities = VelocitySpec::Explicit(vec![
        vec![1.0, 0.0],
        vec![0.0, 1.0],
        vec![-1.0, 0.5],
        vec![0.2, -0.7],
    ]);
    cfg.certificate = None;
    cfg.integrator.dt = 1e-3;
    let c = write_config(dir.path(), &cfg);
    let run = dir.path().join("run");
    assert_eq!(code(&bin(&["simulate", "--quiet", "--config", c.to_str().unwrap(), "--out", run.to_str().unwrap()])), 0);
    let out = bin(&["fit", "--csv", run.join("diagnostics.csv").to_str().unwrap(), "--t-start", "0.5"]);
    assert_eq!(code(&out), 0);
    let fit: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((fit["rate"].as_f64().unwrap() - 1.0).abs() < 1e-4, "{fit}");
    assert!(fit["passed"].is_null());
}

#[test]
fn fit_compares_against_certificate_rate() {
    let dir = tempfile::tempdir().unwrap();
    let c = write_config(dir.path(), &base_config());
    let run = dir.path().join("run");
    assert_eq!(code(&bin(&["simulate", "--quiet", "--config", c.to_str().unwrap(), "--out", run.to_str().unwrap()])), 0);
    let out = bin(&["fit", "--csv", run.join("diagnostics.csv").to_str().unwrap(), "--out", run.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let fit = read_json(&run.join("fit.json"));
    assert_eq!(fit["passed"], Value::Bool(true));
    let cert = read_json(&run.join("certificate.json"));
    assert!((fit["certificate_rate"].as_f64().unwrap() - cert["rate"].as_f64().unwrap()).abs() < 1e-9);
}

#[test]
fn fit_synthetic_series_and_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let recs: Vec<DiagnosticsRecord> = (0..200)
        .map(|k| {
            let t = k as f64 * 0.05;
            DiagnosticsRecord {
                t,
                d_x: 1.0,
                d_v: 2.0 * (-0.7 * t).exp(),
                r_v: 1.0,
                delta_n_tau: 0.0,
                psi_floor: 1.0,
                envelope_dv: None,
                residual_dv: None,
            }
        })
        .collect();
    let p = dir.path().join("synthetic.csv");
    write_csv(&recs, fs::File::create(&p).unwrap()).unwrap();
    let out = bin(&["fit", "--csv", p.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let fit: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((fit["rate"].as_f64().unwrap() - 0.7).abs() < 1e-9);
    assert!((fit["amplitude"].as_f64().unwrap() - 2.0).abs() < 1e-9);

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "t,d_V\n0,1\n").unwrap();
    assert_eq!(code(&bin(&["fit", "--csv", bad.to_str().unwrap()])), 2);
    fs::write(&bad, format!("{}\n0,1,x,1,0,1,,\n", CSV_HEADER.join(","))).unwrap();
    assert_eq!(code(&bin(&["fit", "--csv", bad.to_str().unwrap()])), 2);
    assert_eq!(code(&bin(&["fit", "--csv", dir.path().join("none.csv").to_str().unwrap()])), 2);
}

/// A run with unit weights uses only arithmetic and square roots, so its
/// output is reproducible to the byte on any IEEE-754 platform.
#[test]
fn golden_diagnostics() {
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let dir = tempfile::tempdir().unwrap();
    let out = bin(&[
        "simulate", "--quiet", "--config", golden.join("config.json").to_str().unwrap(), "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let got = fs::read_to_string(dir.path().join("diagnostics.csv")).unwrap();
    let want = fs::read_to_string(golden.join("diagnostics.csv")).unwrap();
    assert_eq!(got, want);
}
