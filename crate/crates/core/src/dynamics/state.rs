use crate::error::{Error, Result};

/// Position and velocity of a single agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

/// All agents at one instant, stored agent-major in flat buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub t: f64,
    n: usize,
    dim: usize,
    x: Vec<f64>,
    v: Vec<f64>,
}

impl SystemState {
    pub fn new(t: f64, n: usize, dim: usize, x: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if n < 2 {
            return Err(Error::config("n_agents", format!("need at least 2 agents, got {n}")));
        }
        if dim == 0 {
            return Err(Error::config("dimension", "dimension must be at least 1"));
        }
        if x.len() != n * dim || v.len() != n * dim {
            return Err(Error::State(format!(
                "expected {} components per buffer, got x: {}, v: {}",
                n * dim,
                x.len(),
                v.len()
            )));
        }
        if x.iter().chain(v.iter()).any(|c| !c.is_finite()) {
            return Err(Error::State("agent components must be finite".into()));
        }
        Ok(SystemState { t, n, dim, x, v })
    }

    pub fn from_agents(t: f64, agents: &[AgentState]) -> Result<Self> {
        let dim = agents.first().map_or(0, |a| a.x.len());
        if agents.iter().any(|a| a.x.len() != dim || a.v.len() != dim) {
            return Err(Error::config("initial", "all agents must share one dimension"));
        }
        let x = agents.iter().flat_map(|a| a.x.iter().copied()).collect();
        let v = agents.iter().flat_map(|a| a.v.iter().copied()).collect();
        SystemState::new(t, agents.len(), dim, x, v)
    }

    pub fn n_agents(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    pub fn velocity(&self, i: usize) -> &[f64] {
        &self.v[i * self.dim..(i + 1) * self.dim]
    }

    pub fn positions(&self) -> &[f64] {
        &self.x
    }

    pub fn velocities(&self) -> &[f64] {
        &self.v
    }

    pub fn agent(&self, i: usize) -> AgentState {
        AgentState {
            x: self.position(i).to_vec(),
            v: self.velocity(i).to_vec(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(self.v.iter()).all(|c| c.is_finite())
    }

    pub(crate) fn from_parts_unchecked(t: f64, n: usize, dim: usize, x: Vec<f64>, v: Vec<f64>) -> Self {
        SystemState { t, n, dim, x, v }
    }

    /// Arithmetic mean of the velocities.
    pub fn mean_velocity(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for i in 0..self.n {
            for (mc, vc) in m.iter_mut().zip(self.velocity(i)) {
                *mc += vc;
            }
        }
        m.iter_mut().for_each(|c| *c /= self.n as f64);
        m
    }
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    a.iter().map(|c| c * c).sum::<f64>().sqrt()
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

/// `R_v(t)`, the largest agent speed.
pub fn max_speed(state: &SystemState) -> f64 {
    (0..state.n_agents())
        .map(|i| norm(state.velocity(i)))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_speed_examples() {
        let s = SystemState::new(0.0, 2, 2, vec![0.0; 4], vec![0.0; 4]).unwrap();
        assert_eq!(max_speed(&s), 0.0);
        let s = SystemState::new(0.0, 2, 2, vec![0.0; 4], vec![3.0, 4.0, 0.0, 1.0]).unwrap();
        assert_eq!(max_speed(&s), 5.0);
    }

    #[test]
    fn max_speed_matches_brute_force() {
        let mut rng = crate::rng::ScenarioRng::new(11);
        let v: Vec<f64> = (0..24).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let mut v = v;
        // agent 5 dominates
        v[15..18].copy_from_slice(&[4.0, -3.0, 12.0]);
        let s = SystemState::new(0.0, 8, 3, vec![0.0; 24], v.clone()).unwrap();
        let mut best: f64 = 0.0;
        for i in 0..8 {
            let sp = (v[3 * i].powi(2) + v[3 * i + 1].powi(2) + v[3 * i + 2].powi(2)).sqrt();
            best = best.max(sp);
        }
        assert_eq!(max_speed(&s), best);
        assert_eq!(best, 13.0);
    }

    #[test]
    fn rejects_degenerate_states() {
        assert!(SystemState::new(0.0, 1, 2, vec![0.0; 2], vec![0.0; 2]).is_err());
        assert!(SystemState::new(0.0, 2, 0, vec![], vec![]).is_err());
        assert!(SystemState::new(0.0, 2, 1, vec![0.0, f64::NAN], vec![0.0; 2]).is_err());
        let mixed = [
            AgentState { x: vec![0.0], v: vec![0.0] },
            AgentState { x: vec![0.0, 1.0], v: vec![0.0, 1.0] },
        ];
        assert!(SystemState::from_agents(0.0, &mixed).is_err());
    }
}
