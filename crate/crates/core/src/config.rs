//! JSON run configuration and seeded scenario construction.
//!
//! Random draws happen in a fixed order from one [`ScenarioRng`] seeded with
//! `scenario.seed`: positions (agent-major, component-minor), then velocities
//! (agent by agent, rejection-sampled), then the upper triangle of the delay
//! matrix in row-major order.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::certificate::{AlphaChoice, AlphaGrid, InitialData};
use crate::diagnostics::diameters;
use crate::dynamics::{DelayMatrix, InitialHistory, Knot, SampledHistory};
use crate::error::{Error, Result};
use crate::integrator::{IntegratorConfig, Scenario};
use crate::kernel::KernelSpec;
use crate::rng::ScenarioRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_agents: usize,
    pub dimension: usize,
    pub seed: u64,
    pub kernel: KernelSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialConfig>,
    #[serde(default)]
    pub history: HistoryConfig,
    pub delays: DelayConfig,
    #[serde(default)]
    pub reference_mode: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub positions: PositionSpec,
    pub velocities: VelocitySpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PositionSpec {
    Explicit(Vec<Vec<f64>>),
    Random(RandomBox),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomBox {
    pub random_box: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VelocitySpec {
    Explicit(Vec<Vec<f64>>),
    Random(RandomBall),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomBall {
    pub random_ball: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistoryConfig {
    #[default]
    Ballistic,
    Sampled(SampledConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampledConfig {
    pub knots: Vec<SampledKnot>,
}

/// One history sample; `positions[i]` and `velocities[i]` belong to agent `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampledKnot {
    pub s: f64,
    pub positions: Vec<Vec<f64>>,
    pub velocities: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accelerations: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayConfig {
    Constant(f64),
    Uniform([f64; 2]),
}

/// `"auto"` or a fixed positive number.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum AlphaSpec {
    #[default]
    Auto,
    Value(f64),
}

impl Serialize for AlphaSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            AlphaSpec::Auto => s.serialize_str("auto"),
            AlphaSpec::Value(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for AlphaSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(AlphaSpec::Value(v)),
            Raw::Str(s) if s == "auto" => Ok(AlphaSpec::Auto),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("alpha must be a number or \"auto\", got \"{s}\""))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateConfig {
    /// Defaults to ten times the largest delay of the scenario.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau0: Option<f64>,
    #[serde(default)]
    pub alpha: AlphaSpec,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Start of the decay-fit window; defaults to `5 * tau_max`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_t_start: Option<f64>,
}

/// Everything a run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub integrator: IntegratorConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<CertificateConfig>,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn agent_rows(field: &str, rows: &[Vec<f64>], n: usize, dim: usize) -> Result<Vec<f64>> {
    if rows.len() != n {
        return Err(Error::config(field, format!("expected {n} agents, got {}", rows.len())));
    }
    if let Some(bad) = rows.iter().position(|r| r.len() != dim) {
        return Err(Error::config(field, format!("agent {bad} does not have dimension {dim}")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    if flat.iter().any(|c| !c.is_finite()) {
        return Err(Error::config(field, "all components must be finite"));
    }
    Ok(flat)
}

impl ScenarioConfig {
    pub fn build(&self) -> Result<Scenario<KernelSpec>> {
        let (n, dim) = (self.n_agents, self.dimension);
        if n < 2 {
            return Err(Error::config("scenario.n_agents", format!("need at least 2 agents, got {n}")));
        }
        if dim == 0 {
            return Err(Error::config("scenario.dimension", "must be at least 1"));
        }
        let mut rng = ScenarioRng::new(self.seed);
        let initial = match &self.initial {
            Some(init) => {
                let x0 = match &init.positions {
                    PositionSpec::Explicit(rows) => agent_rows("scenario.initial.positions", rows, n, dim)?,
                    PositionSpec::Random(RandomBox { random_box: [lo, hi] }) => {
                        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                            return Err(Error::config("scenario.initial.positions.random_box", "need finite lo <= hi"));
                        }
                        (0..n * dim).map(|_| rng.uniform(*lo, *hi)).collect()
                    }
                };
                let v0 = match &init.velocities {
                    VelocitySpec::Explicit(rows) => agent_rows("scenario.initial.velocities", rows, n, dim)?,
                    VelocitySpec::Random(RandomBall { random_ball: r }) => {
                        if !(r.is_finite() && *r >= 0.0) {
                            return Err(Error::config("scenario.initial.velocities.random_ball", "radius must be finite and non-negative"));
                        }
                        (0..n).flat_map(|_| rng.in_ball(dim, *r)).collect()
                    }
                };
                Some((x0, v0))
            }
            None => None,
        };
        let delays = match &self.delays {
            DelayConfig::Constant(tau) => DelayMatrix::constant(n, *tau, self.reference_mode),
            DelayConfig::Uniform([lo, hi]) => DelayMatrix::uniform(n, *lo, *hi, &mut rng, self.reference_mode),
        }
        .map_err(|e| match e {
            Error::Config { message, .. } => Error::config("scenario.delays", message),
            other => other,
        })?;
        let history = match (&self.history, initial) {
            (HistoryConfig::Ballistic, Some((x0, v0))) => InitialHistory::Ballistic { x0, v0 },
            (HistoryConfig::Ballistic, None) => {
                return Err(Error::config("scenario.initial", "required for a ballistic history"));
            }
            (HistoryConfig::Sampled(cfg), initial) => {
                let sampled = self.sampled_history(cfg)?;
                if let Some((x0, v0)) = initial {
                    let last = &sampled.knots()[sampled.knots().len() - 1];
                    let same = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(p, q)| (p - q).abs() <= 1e-12 * (1.0 + p.abs()));
                    if !same(&x0, &last.x) || !same(&v0, &last.v) {
                        return Err(Error::config(
                            "scenario.initial",
                            "conflicts with the sampled history at s = 0",
                        ));
                    }
                }
                InitialHistory::Sampled(sampled)
            }
        };
        if history.earliest() > -delays.tau_max() {
            return Err(Error::config(
                "scenario.history.sampled",
                format!(
                    "history starts at s = {} but the largest delay is {}",
                    history.earliest(),
                    delays.tau_max()
                ),
            ));
        }
        Ok(Scenario {
            n_agents: n,
            dim,
            kernel: self.kernel,
            delays,
            history,
        })
    }

    fn sampled_history(&self, cfg: &SampledConfig) -> Result<SampledHistory> {
        let (n, dim) = (self.n_agents, self.dimension);
        let field = "scenario.history.sampled";
        let mut knots = Vec::with_capacity(cfg.knots.len());
        for k in &cfg.knots {
            let a = match &k.accelerations {
                Some(rows) => agent_rows(field, rows, n, dim)?,
                None => Vec::new(),
            };
            knots.push(Knot {
                t: k.s,
                x: agent_rows(field, &k.positions, n, dim)?,
                v: agent_rows(field, &k.velocities, n, dim)?,
                a,
            });
        }
        SampledHistory::new(n, dim, knots)
    }
}

/// Initial diameters and speed bound of a built scenario.
pub fn initial_data<K: crate::kernel::CommunicationWeight>(scenario: &Scenario<K>) -> Result<InitialData> {
    let state = scenario.initial_state()?;
    let (d_x0, d_v0) = diameters(&state);
    Ok(InitialData {
        d_x0,
        d_v0,
        r_v_tau: scenario.r_v_tau()?,
    })
}

impl CertificateConfig {
    pub fn tau0_for(&self, delays: &DelayMatrix) -> Result<f64> {
        match self.tau0 {
            Some(t) if t > 0.0 && t.is_finite() => Ok(t),
            Some(t) => Err(Error::config("certificate.tau0", format!("must be positive, got {t}"))),
            None if delays.tau_max() > 0.0 => Ok(10.0 * delays.tau_max()),
            None => Err(Error::config("certificate.tau0", "required when all delays are zero")),
        }
    }

    pub fn alpha_choice(&self) -> Result<AlphaChoice> {
        match self.alpha {
            AlphaSpec::Auto => Ok(AlphaChoice::Search(AlphaGrid::default())),
            AlphaSpec::Value(a) if a > 0.0 && a.is_finite() => Ok(AlphaChoice::Fixed(a)),
            AlphaSpec::Value(a) => Err(Error::config("certificate.alpha", format!("must be positive, got {a}"))),
        }
    }
}
