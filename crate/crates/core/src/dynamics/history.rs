//! Dense trajectory history for delayed lookups.
//!
//! Times in `[-tau_max, 0]` are served by the configured initial history.
//! Simulated times are served by cubic Hermite interpolation between stored
//! knots: positions from `(x, v)` pairs and velocities from `(v, a)` pairs.
//! Lookups outside the covered window fail; nothing is extrapolated.

use crate::error::{Error, Result};

/// All agents at one time, with the acceleration evaluated there.
#[derive(Debug, Clone, PartialEq)]
pub struct Knot {
    pub t: f64,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub a: Vec<f64>,
}

/// User-supplied history samples on `[t_first, 0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledHistory {
    knots: Vec<Knot>,
}

impl SampledHistory {
    /// Builds a sampled history. `a` may be left empty in every knot, in which
    /// case accelerations are estimated by second-order finite differences of
    /// the sampled velocities.
    pub fn new(n: usize, dim: usize, mut knots: Vec<Knot>) -> Result<Self> {
        let field = "history.sampled";
        if knots.len() < 2 {
            return Err(Error::config(field, "need at least two knots"));
        }
        if knots.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(Error::config(field, "knot times must be strictly increasing"));
        }
        if knots.last().map(|k| k.t) != Some(0.0) {
            return Err(Error::config(field, "the last knot must be at s = 0"));
        }
        let with_acc = knots.iter().filter(|k| !k.a.is_empty()).count();
        if with_acc != 0 && with_acc != knots.len() {
            return Err(Error::config(field, "accelerations must be given for all knots or none"));
        }
        for k in &knots {
            let ok = k.x.len() == n * dim && k.v.len() == n * dim && (k.a.is_empty() || k.a.len() == n * dim);
            if !ok {
                return Err(Error::config(field, format!("knot at s = {} has the wrong shape", k.t)));
            }
            if k.x.iter().chain(&k.v).chain(&k.a).any(|c| !c.is_finite()) {
                return Err(Error::config(field, format!("knot at s = {} has non-finite entries", k.t)));
            }
        }
        if with_acc == 0 {
            let acc = finite_difference_accelerations(&knots);
            for (k, a) in knots.iter_mut().zip(acc) {
                k.a = a;
            }
        }
        Ok(SampledHistory { knots })
    }

    pub fn knots(&self) -> &[Knot] {
        &self.knots
    }

    pub fn first_time(&self) -> f64 {
        self.knots[0].t
    }
}

fn finite_difference_accelerations(knots: &[Knot]) -> Vec<Vec<f64>> {
    let m = knots.len();
    let len = knots[0].v.len();
    let mut out = vec![vec![0.0; len]; m];
    if m == 2 {
        let h = knots[1].t - knots[0].t;
        let slope: Vec<f64> = knots[1].v.iter().zip(&knots[0].v).map(|(b, a)| (b - a) / h).collect();
        out[0] = slope.clone();
        out[1] = slope;
        return out;
    }
    // Three-point Lagrange derivative on non-uniform grids, one-sided at the ends.
    let deriv = |t: f64, k0: &Knot, k1: &Knot, k2: &Knot, c: usize| {
        let (t0, t1, t2) = (k0.t, k1.t, k2.t);
        let l0 = (2.0 * t - t1 - t2) / ((t0 - t1) * (t0 - t2));
        let l1 = (2.0 * t - t0 - t2) / ((t1 - t0) * (t1 - t2));
        let l2 = (2.0 * t - t0 - t1) / ((t2 - t0) * (t2 - t1));
        l0 * k0.v[c] + l1 * k1.v[c] + l2 * k2.v[c]
    };
    for (idx, row) in out.iter_mut().enumerate() {
        let base = idx.saturating_sub(1).min(m - 3);
        let (k0, k1, k2) = (&knots[base], &knots[base + 1], &knots[base + 2]);
        for (c, slot) in row.iter_mut().enumerate() {
            *slot = deriv(knots[idx].t, k0, k1, k2, c);
        }
    }
    out
}

/// The prescribed trajectory on `[-tau, 0]`.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialHistory {
    /// Constant-velocity motion: `x(s) = x(0) + s v(0)`, `v(s) = v(0)`.
    Ballistic { x0: Vec<f64>, v0: Vec<f64> },
    Sampled(SampledHistory),
}

impl InitialHistory {
    /// Positions and velocities at `s = 0`.
    pub fn at_zero(&self) -> (&[f64], &[f64]) {
        match self {
            InitialHistory::Ballistic { x0, v0 } => (x0, v0),
            InitialHistory::Sampled(h) => {
                let k = h.knots.last().expect("validated non-empty");
                (&k.x, &k.v)
            }
        }
    }

    /// Earliest time at which the history is defined.
    pub fn earliest(&self) -> f64 {
        match self {
            InitialHistory::Ballistic { .. } => f64::NEG_INFINITY,
            InitialHistory::Sampled(h) => h.first_time(),
        }
    }

    fn eval(&self, dim: usize, agent: usize, s: f64, x: &mut [f64], v: &mut [f64]) {
        let r = agent * dim..(agent + 1) * dim;
        match self {
            InitialHistory::Ballistic { x0, v0 } => {
                for ((xo, vo), (xc, vc)) in x.iter_mut().zip(v.iter_mut()).zip(x0[r.clone()].iter().zip(&v0[r])) {
                    *xo = xc + s * vc;
                    *vo = *vc;
                }
            }
            InitialHistory::Sampled(h) => interpolate(&h.knots, dim, agent, s, x, v),
        }
    }

    /// `R_v^tau`, the largest speed on `[-horizon, 0]`.
    ///
    /// Ballistic histories are exact. Sampled histories are scanned at every
    /// knot and at [`SPEED_SUBSAMPLES`] interior points per knot interval of
    /// the Hermite interpolant the simulation actually reads.
    pub fn max_speed(&self, n: usize, dim: usize, horizon: f64) -> Result<f64> {
        let speed = |v: &[f64], i: usize| super::state::norm(&v[i * dim..(i + 1) * dim]);
        match self {
            InitialHistory::Ballistic { v0, .. } => {
                if v0.is_empty() {
                    return Err(Error::State("empty initial history".into()));
                }
                Ok((0..n).map(|i| speed(v0, i)).fold(0.0, f64::max))
            }
            InitialHistory::Sampled(h) => {
                let mut best: f64 = 0.0;
                let mut xs = vec![0.0; dim];
                let mut vs = vec![0.0; dim];
                for w in h.knots.windows(2) {
                    if w[1].t < -horizon {
                        continue;
                    }
                    for i in 0..n {
                        best = best.max(speed(&w[0].v, i)).max(speed(&w[1].v, i));
                        for q in 1..=SPEED_SUBSAMPLES {
                            let s = w[0].t + (w[1].t - w[0].t) * q as f64 / (SPEED_SUBSAMPLES + 1) as f64;
                            if s < -horizon {
                                continue;
                            }
                            interpolate(&h.knots, dim, i, s, &mut xs, &mut vs);
                            best = best.max(super::state::norm(&vs));
                        }
                    }
                }
                Ok(best)
            }
        }
    }
}

/// Interior sampling density used by [`InitialHistory::max_speed`] for
/// sampled histories.
pub const SPEED_SUBSAMPLES: usize = 8;

/// Hermite interpolation in a knot sequence; `s` must lie within it.
fn interpolate(knots: &[Knot], dim: usize, agent: usize, s: f64, x: &mut [f64], v: &mut [f64]) {
    // index of the left end of the bracketing interval
    let k = knots.partition_point(|kn| kn.t <= s).saturating_sub(1).min(knots.len() - 2);
    let (k0, k1) = (&knots[k], &knots[k + 1]);
    let h = k1.t - k0.t;
    let th = ((s - k0.t) / h).clamp(0.0, 1.0);
    let th2 = th * th;
    let th3 = th2 * th;
    let h00 = 2.0 * th3 - 3.0 * th2 + 1.0;
    let h10 = th3 - 2.0 * th2 + th;
    let h01 = -2.0 * th3 + 3.0 * th2;
    let h11 = th3 - th2;
    let off = agent * dim;
    for c in 0..dim {
        let i = off + c;
        x[c] = h00 * k0.x[i] + h10 * h * k0.v[i] + h01 * k1.x[i] + h11 * h * k1.v[i];
        v[c] = h00 * k0.v[i] + h10 * h * k0.a[i] + h01 * k1.v[i] + h11 * h * k1.a[i];
    }
}

/// Initial history plus the simulated knots still inside the delay window.
#[derive(Debug, Clone)]
pub struct HistoryBuffer {
    n: usize,
    dim: usize,
    horizon: f64,
    initial: InitialHistory,
    knots: Vec<Knot>,
    trimmed: bool,
}

impl HistoryBuffer {
    /// `horizon` is the largest delay `tau_max`; the initial history must be
    /// defined on `[-horizon, 0]`.
    pub fn new(n: usize, dim: usize, horizon: f64, initial: InitialHistory) -> Result<Self> {
        let (x0, v0) = initial.at_zero();
        if x0.len() != n * dim || v0.len() != n * dim {
            return Err(Error::State("initial history does not match the agent layout".into()));
        }
        if initial.earliest() > -horizon {
            return Err(Error::config(
                "history",
                format!(
                    "initial history starts at s = {} but delays reach back to s = {}",
                    initial.earliest(),
                    -horizon
                ),
            ));
        }
        Ok(HistoryBuffer {
            n,
            dim,
            horizon,
            initial,
            knots: Vec::new(),
            trimmed: false,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn initial(&self) -> &InitialHistory {
        &self.initial
    }

    pub fn knots(&self) -> impl Iterator<Item = &Knot> {
        self.knots.iter()
    }

    pub fn latest(&self) -> Option<&Knot> {
        self.knots.last()
    }

    /// Latest covered time; 0 before the first simulated knot.
    pub fn t_now(&self) -> f64 {
        self.knots.last().map_or(0.0, |k| k.t)
    }

    /// Covered window `[lo, hi]`.
    pub fn window(&self) -> (f64, f64) {
        let lo = if self.trimmed {
            self.knots.first().map_or(-self.horizon, |k| k.t)
        } else {
            -self.horizon
        };
        (lo, self.t_now())
    }

    pub fn push(&mut self, knot: Knot) -> Result<()> {
        if knot.x.len() != self.n * self.dim || knot.v.len() != knot.x.len() || knot.a.len() != knot.x.len() {
            return Err(Error::State("knot does not match the agent layout".into()));
        }
        match self.knots.last() {
            Some(last) if !(knot.t > last.t) => {
                return Err(Error::State(format!(
                    "knot at t = {} does not follow the latest knot at t = {}",
                    knot.t, last.t
                )));
            }
            None if knot.t != 0.0 => {
                return Err(Error::State("the first simulated knot must be at t = 0".into()));
            }
            _ => {}
        }
        self.knots.push(knot);
        Ok(())
    }

    /// Drops knots no longer needed to cover `[keep_from, t_now]`.
    pub fn trim(&mut self, keep_from: f64) {
        let removable = self.knots.len().saturating_sub(2);
        let count = self.knots.iter().skip(1).take(removable).take_while(|k| k.t <= keep_from).count();
        if count > 0 {
            self.knots.drain(..count);
            self.trimmed = true;
        }
    }

    /// Position and velocity of `agent` at time `s`, written into `x` and `v`.
    pub fn lookup_into(&self, agent: usize, s: f64, x: &mut [f64], v: &mut [f64]) -> Result<()> {
        let (lo, hi) = self.window();
        let eps = 1e-12 * (1.0 + hi.abs().max(self.horizon));
        if !(s >= lo - eps && s <= hi + eps) {
            return Err(Error::Window { agent, s, lo, hi });
        }
        let s = s.clamp(lo, hi);
        if s <= 0.0 {
            self.initial.eval(self.dim, agent, s, x, v);
            return Ok(());
        }
        if self.knots.len() < 2 {
            return Err(Error::State("history buffer holds no simulated interval".into()));
        }
        interpolate(&self.knots, self.dim, agent, s, x, v);
        Ok(())
    }

    pub fn lookup(&self, agent: usize, s: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut x = vec![0.0; self.dim];
        let mut v = vec![0.0; self.dim];
        self.lookup_into(agent, s, &mut x, &mut v)?;
        Ok((x, v))
    }
}
