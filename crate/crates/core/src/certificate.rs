//! Constructive flocking certificates.
//!
//! Given the initial diameters `d_X(0)`, `d_V(0)`, the initial-history speed
//! bound `R_v^tau`, a horizon `tau0` and a margin `alpha`, the sufficient
//! condition
//!
//! ```text
//! d_V(0) < alpha * psi(d_X(0) + R_v^tau * tau0 + alpha)
//! ```
//!
//! yields constants `c in (0, 1)` and `beta > 0`, an admissible delay bound
//! `tau_bar in (0, tau0)` and the decay envelope
//!
//! ```text
//! d_V(t)       <= C0 * exp(-c psi_inf t),   C0 = d_V(0) + 2 beta psi_inf / (1 - c)
//! Delta(t)     <  beta psi_inf^2 exp(-c psi_inf t)
//! d_X(t)       <  d_X(0) + alpha
//! ```
//!
//! valid for every delay matrix whose largest entry is at most `tau_bar`.
//!
//! The constants are chosen so that `(d_V(0) + 2 beta psi_inf/(1 - c)) / (c psi_inf) < alpha`.
//! That is the bound the position-diameter closure integrates to, and it is
//! stronger than `d_V(0)/psi_inf + 2 beta/(1 - c) < alpha` by the factor `1/c`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;

/// Relative tolerance of the root brackets in [`compute_tau_bar`].
pub const BISECTION_REL_TOL: f64 = 1e-12;

/// Roots are multiplied by this factor so the strict inequalities survive
/// round-off.
pub const TAU_SHRINK: f64 = 1.0 - 1e-6;

/// Initial quantities the certificate is built from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialData {
    #[serde(rename = "d_X0")]
    pub d_x0: f64,
    #[serde(rename = "d_V0")]
    pub d_v0: f64,
    #[serde(rename = "R_v_tau")]
    pub r_v_tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionCheck {
    pub satisfied: bool,
    pub psi_inf: f64,
    /// `alpha * psi_inf - d_V(0)`; positive iff the condition holds.
    pub margin: f64,
}

pub fn check_condition(data: &InitialData, tau0: f64, alpha: f64, kernel: &KernelSpec) -> Result<ConditionCheck> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Domain(format!("alpha must be positive and finite, got {alpha}")));
    }
    if !(tau0 > 0.0 && tau0.is_finite()) {
        return Err(Error::Domain(format!("tau0 must be positive and finite, got {tau0}")));
    }
    if !(data.d_v0 >= 0.0 && data.d_x0 >= 0.0 && data.r_v_tau >= 0.0) {
        return Err(Error::Domain("initial diameters and speed bound must be non-negative".into()));
    }
    let psi_inf = kernel.evaluate(data.d_x0 + data.r_v_tau * tau0 + alpha)?;
    let margin = alpha * psi_inf - data.d_v0;
    Ok(ConditionCheck {
        satisfied: margin > 0.0,
        psi_inf,
        margin,
    })
}

/// Logarithmic grid for [`search_alpha`], relative to the data scale
/// `max(d_X(0) + R_v^tau tau0, d_V(0), 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaGrid {
    pub lo_factor: f64,
    pub hi_factor: f64,
    pub points_per_decade: usize,
}

impl Default for AlphaGrid {
    fn default() -> Self {
        AlphaGrid {
            lo_factor: 1e-4,
            hi_factor: 1e4,
            points_per_decade: 20,
        }
    }
}

impl AlphaGrid {
    fn points(&self, scale: f64) -> Vec<f64> {
        let (lo, hi) = (self.lo_factor.log10(), self.hi_factor.log10());
        let count = ((hi - lo) * self.points_per_decade as f64).round().max(1.0) as usize;
        (0..=count)
            .map(|k| scale * 10f64.powf(lo + (hi - lo) * k as f64 / count as f64))
            .collect()
    }
}

/// Alpha maximising the condition margin `alpha psi(D + alpha) - d_V(0)`.
///
/// Scans the grid, then refines with golden-section search between the
/// neighbours of the best grid point (the margin is unimodal in alpha for the
/// power-law kernel). Returns `None` when no grid point satisfies the
/// condition. For `beta < 1` the margin grows without bound, so the result is
/// the top of the grid.
pub fn search_alpha(data: &InitialData, tau0: f64, kernel: &KernelSpec, grid: &AlphaGrid) -> Option<f64> {
    let scale = (data.d_x0 + data.r_v_tau * tau0).max(data.d_v0).max(1.0);
    let margin = |a: f64| check_condition(data, tau0, a, kernel).map(|c| c.margin).unwrap_or(f64::NEG_INFINITY);
    let pts = grid.points(scale);
    let (best, best_margin) = pts
        .iter()
        .enumerate()
        .map(|(k, &a)| (k, margin(a)))
        .fold((0, f64::NEG_INFINITY), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
    if !(best_margin > 0.0) {
        return None;
    }
    if best == 0 || best == pts.len() - 1 {
        return Some(pts[best]);
    }
    // golden section on log(alpha)
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (pts[best - 1].ln(), pts[best + 1].ln());
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (margin(c.exp()), margin(d.exp()));
    for _ in 0..100 {
        if (b - a).abs() < 1e-12 {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = margin(c.exp());
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = margin(d.exp());
        }
    }
    let refined = (0.5 * (a + b)).exp();
    if margin(refined) >= best_margin {
        Some(refined)
    } else {
        Some(pts[best])
    }
}

/// Constants of the continuity argument.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProofConstants {
    pub alpha: f64,
    pub psi_inf: f64,
    pub beta_proof: f64,
    pub c: f64,
}

impl ProofConstants {
    /// `d_V(0) + 2 beta psi_inf / (1 - c)`.
    pub fn c0(&self, d_v0: f64) -> f64 {
        d_v0 + 2.0 * self.beta_proof * self.psi_inf / (1.0 - self.c)
    }

    pub fn rate(&self) -> f64 {
        self.c * self.psi_inf
    }
}

/// Picks `c = (1 + d_V(0)/(alpha psi_inf)) / 2` and
/// `beta = (1 - c)(c alpha - d_V(0)/psi_inf) / 4`.
pub fn choose_proof_constants(d_v0: f64, psi_inf: f64, alpha: f64) -> Result<ProofConstants> {
    if !(psi_inf > 0.0 && psi_inf <= 1.0) || !(alpha > 0.0) || !(d_v0 >= 0.0) {
        return Err(Error::Precondition(format!(
            "need alpha > 0, psi_inf in (0, 1], d_V0 >= 0; got alpha = {alpha}, psi_inf = {psi_inf}, d_V0 = {d_v0}"
        )));
    }
    let ratio = d_v0 / (alpha * psi_inf);
    if !(ratio < 1.0) {
        return Err(Error::Precondition(format!(
            "flocking condition fails: d_V0 / (alpha psi_inf) = {ratio} >= 1"
        )));
    }
    let c = 0.5 * (1.0 + ratio);
    let beta_proof = (1.0 - c) * (c * alpha - d_v0 / psi_inf) / 4.0;
    if !(beta_proof > 0.0 && c < 1.0) {
        return Err(Error::Precondition(format!(
            "condition margin too small to separate constants in floating point (ratio = {ratio})"
        )));
    }
    Ok(ProofConstants {
        alpha,
        psi_inf,
        beta_proof,
        c,
    })
}

/// Left-hand side minus right-hand side of `2 R tau e^{c psi tau} < beta psi^2`.
pub fn smallness_a(k: &ProofConstants, r_v_tau: f64, tau: f64) -> f64 {
    2.0 * r_v_tau * tau * (k.rate() * tau).exp() - k.beta_proof * k.psi_inf * k.psi_inf
}

/// Left-hand side minus right-hand side of
/// `(C_{N,1} C0 + beta psi^2)(e^{c psi tau} - 1)/(c psi) < beta psi^2`.
pub fn smallness_b(k: &ProofConstants, d_v0: f64, n: usize, tau: f64) -> f64 {
    let cn1 = (n as f64 - 1.0) / n as f64;
    let target = k.beta_proof * k.psi_inf * k.psi_inf;
    (cn1 * k.c0(d_v0) + target) * (k.rate() * tau).exp_m1() / k.rate() - target
}

/// Root of a strictly increasing function with `f(0) < 0`, bracketed to
/// [`BISECTION_REL_TOL`]; returns the lower end of the final bracket.
fn increasing_root(f: impl Fn(f64) -> f64, first_guess: f64) -> Result<f64> {
    let mut lo = 0.0;
    let mut hi = first_guess.max(f64::MIN_POSITIVE);
    let mut grow = 0;
    while f(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
        grow += 1;
        if grow > 2100 || !hi.is_finite() {
            return Err(Error::Precondition("smallness function never crosses zero".into()));
        }
    }
    while hi - lo > BISECTION_REL_TOL * hi {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayBound {
    /// Root of the first smallness condition; `None` when `R_v^tau = 0`.
    pub tau_a: Option<f64>,
    /// Root of the second smallness condition.
    pub tau_b: f64,
    /// `min(tau0, tau_a, tau_b)` shrunk by [`TAU_SHRINK`].
    pub tau_bar: f64,
}

pub fn compute_tau_bar(k: &ProofConstants, tau0: f64, d_v0: f64, r_v_tau: f64, n: usize) -> Result<DelayBound> {
    if n < 2 {
        return Err(Error::Precondition(format!("need N >= 2, got {n}")));
    }
    let target = k.beta_proof * k.psi_inf * k.psi_inf;
    let tau_a = if r_v_tau > 0.0 {
        Some(increasing_root(|t| smallness_a(k, r_v_tau, t), target / (2.0 * r_v_tau))?)
    } else {
        None
    };
    let tau_b = increasing_root(|t| smallness_b(k, d_v0, n, t), 1.0 / k.rate())?;
    let raw = tau_a.map_or(tau_b, |a| a.min(tau_b)).min(tau0);
    let tau_bar = raw * TAU_SHRINK;
    if !(tau_bar > 0.0) {
        return Err(Error::Precondition("delay bound underflowed to zero".into()));
    }
    Ok(DelayBound { tau_a, tau_b, tau_bar })
}

/// Predicted bounds at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Envelope {
    pub d_v: f64,
    pub delta: f64,
    pub d_x: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlockingCertificate {
    pub alpha: f64,
    pub tau0: f64,
    #[serde(rename = "R_v_tau")]
    pub r_v_tau: f64,
    #[serde(rename = "d_X0")]
    pub d_x0: f64,
    #[serde(rename = "d_V0")]
    pub d_v0: f64,
    pub n_agents: usize,
    pub psi_inf: f64,
    pub beta_proof: f64,
    pub c: f64,
    pub tau_a: Option<f64>,
    pub tau_b: f64,
    pub tau_bar: f64,
    #[serde(rename = "C0")]
    pub c0: f64,
    pub rate: f64,
    #[serde(rename = "d_X_bound")]
    pub d_x_bound: f64,
    pub strengthened_step_b: bool,
}

impl FlockingCertificate {
    /// Assembles a certificate and checks its invariants.
    pub fn build(data: &InitialData, n: usize, tau0: f64, alpha: f64, kernel: &KernelSpec) -> Result<Self> {
        let cond = check_condition(data, tau0, alpha, kernel)?;
        if !cond.satisfied {
            return Err(Error::Precondition(format!(
                "flocking condition fails for alpha = {alpha}: margin {}",
                cond.margin
            )));
        }
        let k = choose_proof_constants(data.d_v0, cond.psi_inf, alpha)?;
        let bound = compute_tau_bar(&k, tau0, data.d_v0, data.r_v_tau, n)?;
        let cert = FlockingCertificate {
            alpha,
            tau0,
            r_v_tau: data.r_v_tau,
            d_x0: data.d_x0,
            d_v0: data.d_v0,
            n_agents: n,
            psi_inf: cond.psi_inf,
            beta_proof: k.beta_proof,
            c: k.c,
            tau_a: bound.tau_a,
            tau_b: bound.tau_b,
            tau_bar: bound.tau_bar,
            c0: k.c0(data.d_v0),
            rate: k.rate(),
            d_x_bound: data.d_x0 + alpha,
            strengthened_step_b: true,
        };
        cert.validate()?;
        Ok(cert)
    }

    pub fn constants(&self) -> ProofConstants {
        ProofConstants {
            alpha: self.alpha,
            psi_inf: self.psi_inf,
            beta_proof: self.beta_proof,
            c: self.c,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |what: &str| Err(Error::Precondition(format!("certificate invariant violated: {what}")));
        if !(self.d_v0 / (self.alpha * self.psi_inf) < 1.0) {
            return fail("flocking condition");
        }
        if !(self.c0 / (self.c * self.psi_inf) < self.alpha) {
            return fail("strengthened position-diameter closure");
        }
        if !(self.tau_bar > 0.0 && self.tau_bar < self.tau0) {
            return fail("tau_bar in (0, tau0)");
        }
        if !(self.c0 >= self.d_v0) {
            return fail("C0 >= d_V(0)");
        }
        if !(self.c > 0.0 && self.c < 1.0 && self.beta_proof > 0.0) {
            return fail("c in (0, 1), beta > 0");
        }
        Ok(())
    }

    pub fn envelope(&self, t: f64) -> Result<Envelope> {
        if !(t >= 0.0) {
            return Err(Error::Domain(format!("envelope time must be non-negative, got {t}")));
        }
        let decay = (-self.rate * t).exp();
        Ok(Envelope {
            d_v: self.c0 * decay,
            delta: self.beta_proof * self.psi_inf * self.psi_inf * decay,
            d_x: self.d_x_bound,
        })
    }
}

/// How `alpha` is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaChoice {
    Fixed(f64),
    Search(AlphaGrid),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Certification {
    Certified(FlockingCertificate),
    /// The condition failed; carries the alpha tried (if any grid point was
    /// evaluated) and its margin.
    NotCertifiable { alpha: Option<f64>, margin: Option<f64> },
}

pub fn certify(data: &InitialData, n: usize, tau0: f64, alpha: AlphaChoice, kernel: &KernelSpec) -> Result<Certification> {
    let alpha = match alpha {
        AlphaChoice::Fixed(a) => a,
        AlphaChoice::Search(grid) => match search_alpha(data, tau0, kernel, &grid) {
            Some(a) => a,
            None => return Ok(Certification::NotCertifiable { alpha: None, margin: None }),
        },
    };
    let cond = check_condition(data, tau0, alpha, kernel)?;
    if !cond.satisfied {
        return Ok(Certification::NotCertifiable {
            alpha: Some(alpha),
            margin: Some(cond.margin),
        });
    }
    FlockingCertificate::build(data, n, tau0, alpha, kernel).map(Certification::Certified)
}
