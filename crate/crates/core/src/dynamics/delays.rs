use crate::error::{Error, Result};
use crate::rng::ScenarioRng;

/// Symmetric matrix of pairwise delays `tau_ji`.
///
/// The diagonal is stored as zero and never read. Off-diagonal entries are
/// strictly positive unless the matrix was built in reference mode, where
/// zero delays reproduce the undelayed system.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayMatrix {
    n: usize,
    entries: Vec<f64>,
    tau_min: f64,
    tau_max: f64,
    tau_min_positive: Option<f64>,
    reference_mode: bool,
}

impl DelayMatrix {
    pub fn from_entries(n: usize, entries: Vec<f64>, reference_mode: bool) -> Result<Self> {
        if n < 2 {
            return Err(Error::config("n_agents", format!("need at least 2 agents, got {n}")));
        }
        if entries.len() != n * n {
            return Err(Error::config(
                "delays",
                format!("expected {} entries, got {}", n * n, entries.len()),
            ));
        }
        let mut entries = entries;
        for i in 0..n {
            entries[i * n + i] = 0.0;
            for j in 0..n {
                if i == j {
                    continue;
                }
                let tau = entries[i * n + j];
                if !tau.is_finite() || tau < 0.0 {
                    return Err(Error::config("delays", format!("tau[{i}][{j}] = {tau} is not a finite non-negative delay")));
                }
                if tau == 0.0 && !reference_mode {
                    return Err(Error::config(
                        "delays",
                        format!("tau[{i}][{j}] = 0; delays must be strictly positive outside reference mode"),
                    ));
                }
                if tau != entries[j * n + i] {
                    return Err(Error::config("delays", format!("matrix is not symmetric at ({i}, {j})")));
                }
            }
        }
        let off_diag = || {
            (0..n).flat_map(move |i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        };
        let tau_max = off_diag().map(|(i, j)| entries[i * n + j]).fold(0.0, f64::max);
        let tau_min = off_diag()
            .map(|(i, j)| entries[i * n + j])
            .fold(f64::INFINITY, f64::min);
        let tau_min_positive = off_diag()
            .map(|(i, j)| entries[i * n + j])
            .filter(|&t| t > 0.0)
            .reduce(f64::min);
        Ok(DelayMatrix {
            n,
            entries,
            tau_min,
            tau_max,
            tau_min_positive,
            reference_mode,
        })
    }

    pub fn constant(n: usize, tau: f64, reference_mode: bool) -> Result<Self> {
        Self::from_entries(n, vec![tau; n * n], reference_mode)
    }

    /// Upper-triangle entries drawn uniformly from `[lo, hi]` in row-major
    /// order (`i < j`), mirrored below the diagonal.
    pub fn uniform(n: usize, lo: f64, hi: f64, rng: &mut ScenarioRng, reference_mode: bool) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(Error::config("delays.uniform", format!("need lo <= hi, got [{lo}, {hi}]")));
        }
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let tau = rng.uniform(lo, hi);
                entries[i * n + j] = tau;
                entries[j * n + i] = tau;
            }
        }
        Self::from_entries(n, entries, reference_mode)
    }

    /// The same matrix rescaled so that its largest delay equals `tau_max`.
    pub fn rescaled_to_max(&self, tau_max: f64) -> Result<Self> {
        if self.tau_max == 0.0 {
            return Err(Error::Usage("cannot rescale an all-zero delay matrix".into()));
        }
        let factor = tau_max / self.tau_max;
        let entries = self.entries.iter().map(|t| t * factor).collect();
        Self::from_entries(self.n, entries, self.reference_mode)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn n_agents(&self) -> usize {
        self.n
    }

    pub fn tau_min(&self) -> f64 {
        self.tau_min
    }

    pub fn tau_max(&self) -> f64 {
        self.tau_max
    }

    /// Smallest strictly positive off-diagonal delay, if any.
    pub fn tau_min_positive(&self) -> Option<f64> {
        self.tau_min_positive
    }

    pub fn reference_mode(&self) -> bool {
        self.reference_mode
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }
}
