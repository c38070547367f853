//! Fixed-step RK4 by the method of steps.
//!
//! With `dt <= tau_min` every stage time `t + c dt - tau_ji` is at most the
//! current knot time, so delayed arguments are always read from history that
//! already exists. The solution is only piecewise smooth at sums of delays
//! (propagated from the derivative jump at `t = 0`); steps are not aligned with
//! those times, so steps that straddle one lose local order.

use serde::{Deserialize, Serialize};

use crate::certificate::FlockingCertificate;
use crate::diagnostics::{self, DiagnosticsSeries};
use crate::dynamics::{rhs_into, DelayMatrix, HistoryBuffer, InitialHistory, Knot, SystemState};
use crate::error::{Error, Result};
use crate::kernel::CommunicationWeight;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub t_end: f64,
    #[serde(default = "default_stride")]
    pub output_stride: usize,
    #[serde(default)]
    pub record_trajectory: bool,
}

fn default_stride() -> usize {
    1
}

impl IntegratorConfig {
    pub fn validate(&self, delays: &DelayMatrix) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config("integrator.dt", format!("must be positive, got {}", self.dt)));
        }
        if !(self.t_end >= self.dt && self.t_end.is_finite()) {
            return Err(Error::config("integrator.t_end", format!("must be at least dt, got {}", self.t_end)));
        }
        if self.output_stride == 0 {
            return Err(Error::config("integrator.output_stride", "must be at least 1"));
        }
        check_step(self.dt, 0.0, delays)
    }

    /// Number of steps; the run ends at `steps * dt >= t_end`.
    pub fn steps(&self) -> usize {
        (self.t_end / self.dt - 1e-9).ceil().max(1.0) as usize
    }
}

/// `dt <= tau_min`, up to the rounding of `t_next - t` near time `t`.
fn check_step(dt: f64, t: f64, delays: &DelayMatrix) -> Result<()> {
    match delays.tau_min_positive() {
        Some(tau_min) if dt > tau_min * (1.0 + 1e-12) + 1e-12 * t.abs() => Err(Error::StepConstraint { dt, tau_min }),
        _ => Ok(()),
    }
}

/// A delayed system ready to integrate.
#[derive(Debug, Clone)]
pub struct Scenario<K> {
    pub n_agents: usize,
    pub dim: usize,
    pub kernel: K,
    pub delays: DelayMatrix,
    pub history: InitialHistory,
}

impl<K: CommunicationWeight> Scenario<K> {
    pub fn initial_state(&self) -> Result<SystemState> {
        let (x0, v0) = self.history.at_zero();
        SystemState::new(0.0, self.n_agents, self.dim, x0.to_vec(), v0.to_vec())
    }

    /// `R_v^tau` over `[-tau_max, 0]`.
    pub fn r_v_tau(&self) -> Result<f64> {
        self.history.max_speed(self.n_agents, self.dim, self.delays.tau_max())
    }

    /// A fresh history buffer holding the initial history and the knot at `t = 0`.
    pub fn start(&self) -> Result<(SystemState, HistoryBuffer)> {
        let state = self.initial_state()?;
        let mut history = HistoryBuffer::new(self.n_agents, self.dim, self.delays.tau_max(), self.history.clone())?;
        let mut a = vec![0.0; self.n_agents * self.dim];
        rhs_into(&state, &history, &self.delays, &self.kernel, &mut a)?;
        history.push(Knot {
            t: 0.0,
            x: state.positions().to_vec(),
            v: state.velocities().to_vec(),
            a,
        })?;
        Ok((state, history))
    }
}

fn stage_error(e: Error, dt: f64, delays: &DelayMatrix) -> Error {
    match e {
        Error::Window { .. } => Error::StepConstraint {
            dt,
            tau_min: delays.tau_min_positive().unwrap_or(0.0),
        },
        other => other,
    }
}

/// One RK4 step of size `dt` from the state at the latest history knot.
pub fn step<K: CommunicationWeight>(
    state: &SystemState,
    history: &mut HistoryBuffer,
    delays: &DelayMatrix,
    kernel: &K,
    dt: f64,
) -> Result<SystemState> {
    step_to(state, history, delays, kernel, state.t + dt)
}

/// RK4 step landing exactly on `t_next`. Appends the new knot (with its
/// acceleration) and trims history older than `t_next - tau_max - dt`.
pub fn step_to<K: CommunicationWeight>(
    state: &SystemState,
    history: &mut HistoryBuffer,
    delays: &DelayMatrix,
    kernel: &K,
    t_next: f64,
) -> Result<SystemState> {
    let dt = t_next - state.t;
    check_step(dt, t_next, delays)?;
    let (n, dim) = (state.n_agents(), state.dim());
    let len = n * dim;
    let latest = history.latest().ok_or_else(|| Error::State("history has no knot to step from".into()))?;
    if latest.t != state.t {
        return Err(Error::State(format!(
            "state at t = {} does not match the latest knot at t = {}",
            state.t, latest.t
        )));
    }
    let x0 = state.positions();
    let v0 = state.velocities();
    let k1v = latest.a.clone();

    let stage = |t: f64, dx: &[f64], dv: &[f64], w: f64, out: &mut [f64]| -> Result<SystemState> {
        let x: Vec<f64> = x0.iter().zip(dx).map(|(a, b)| a + w * b).collect();
        let v: Vec<f64> = v0.iter().zip(dv).map(|(a, b)| a + w * b).collect();
        let s = SystemState::from_parts_unchecked(t, n, dim, x, v);
        rhs_into(&s, history, delays, kernel, out).map_err(|e| stage_error(e, dt, delays))?;
        Ok(s)
    };

    let mut k2v = vec![0.0; len];
    let s2 = stage(state.t + 0.5 * dt, v0, &k1v, 0.5 * dt, &mut k2v)?;
    let mut k3v = vec![0.0; len];
    let s3 = stage(state.t + 0.5 * dt, s2.velocities(), &k2v, 0.5 * dt, &mut k3v)?;
    let mut k4v = vec![0.0; len];
    let s4 = stage(t_next, s3.velocities(), &k3v, dt, &mut k4v)?;

    let (k2x, k3x, k4x) = (s2.velocities(), s3.velocities(), s4.velocities());
    let mut x = vec![0.0; len];
    let mut v = vec![0.0; len];
    for c in 0..len {
        x[c] = x0[c] + dt / 6.0 * (v0[c] + 2.0 * k2x[c] + 2.0 * k3x[c] + k4x[c]);
        v[c] = v0[c] + dt / 6.0 * (k1v[c] + 2.0 * k2v[c] + 2.0 * k3v[c] + k4v[c]);
    }
    let next = SystemState::from_parts_unchecked(t_next, n, dim, x, v);
    if !next.is_finite() {
        return Err(Error::NumericBlowUp { t: t_next });
    }
    let mut a = vec![0.0; len];
    rhs_into(&next, history, delays, kernel, &mut a).map_err(|e| stage_error(e, dt, delays))?;
    history.push(Knot {
        t: t_next,
        x: next.positions().to_vec(),
        v: next.velocities().to_vec(),
        a,
    })?;
    history.trim(t_next - delays.tau_max() - dt);
    debug_assert!(history.window().0 <= t_next - delays.tau_max());
    Ok(next)
}

#[derive(Debug, Clone)]
pub struct SimulationOutput {
    pub series: DiagnosticsSeries,
    /// States at every output record when `record_trajectory` is set.
    pub trajectory: Vec<SystemState>,
    pub final_state: SystemState,
    pub steps: usize,
}

/// Runs from `t = 0` for [`IntegratorConfig::steps`] steps, recording
/// diagnostics at step 0 and every `output_stride` steps.
pub fn simulate<K: CommunicationWeight>(
    scenario: &Scenario<K>,
    config: &IntegratorConfig,
    certificate: Option<&FlockingCertificate>,
) -> Result<SimulationOutput> {
    config.validate(&scenario.delays)?;
    let r_v_tau = scenario.r_v_tau()?;
    let (mut state, mut history) = scenario.start()?;
    let steps = config.steps();
    let mut records = Vec::with_capacity(steps / config.output_stride + 1);
    let mut trajectory = Vec::new();
    let emit = |state: &SystemState, history: &HistoryBuffer, records: &mut Vec<_>, trajectory: &mut Vec<SystemState>| -> Result<()> {
        records.push(diagnostics::record(state, history, &scenario.delays, &scenario.kernel, r_v_tau, certificate)?);
        if config.record_trajectory {
            trajectory.push(state.clone());
        }
        Ok(())
    };
    emit(&state, &history, &mut records, &mut trajectory)?;
    for k in 1..=steps {
        let t_next = k as f64 * config.dt;
        state = step_to(&state, &mut history, &scenario.delays, &scenario.kernel, t_next)?;
        if k % config.output_stride == 0 {
            emit(&state, &history, &mut records, &mut trajectory)?;
        }
    }
    diagnostics::fill_residuals(&mut records);
    Ok(SimulationOutput {
        series: DiagnosticsSeries {
            records,
            r_v_tau,
            tau_max: scenario.delays.tau_max(),
            reference_mode: scenario.delays.reference_mode(),
        },
        trajectory,
        final_state: state,
        steps,
    })
}
