//! State, delays, history and the right-hand side of the delayed system.

mod delays;
mod history;
mod rhs;
mod state;

pub use delays::DelayMatrix;
pub use history::{HistoryBuffer, InitialHistory, Knot, SampledHistory, SPEED_SUBSAMPLES};
pub use rhs::{rhs, rhs_into};
pub use state::{max_speed, AgentState, SystemState};

pub(crate) use state::dist;

use crate::error::Result;

/// `R_v^tau`: the largest agent speed over the initial history on `[-horizon, 0]`.
pub fn initial_history_max_speed(history: &InitialHistory, n: usize, dim: usize, horizon: f64) -> Result<f64> {
    history.max_speed(n, dim, horizon)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn initial_max_speed_examples() {
        let h = InitialHistory::Ballistic {
            x0: vec![0.0; 3],
            v0: vec![1.0, -2.0, 0.5],
        };
        assert_eq!(initial_history_max_speed(&h, 3, 1, 0.1).unwrap(), 2.0);
        let rest = InitialHistory::Ballistic { x0: vec![0.0; 4], v0: vec![0.0; 4] };
        assert_eq!(initial_history_max_speed(&rest, 2, 2, 0.1).unwrap(), 0.0);
        let empty = InitialHistory::Ballistic { x0: vec![], v0: vec![] };
        assert!(initial_history_max_speed(&empty, 0, 1, 0.1).is_err());
    }
}
