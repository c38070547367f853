use super::delays::DelayMatrix;
use super::history::HistoryBuffer;
use super::state::{dist, SystemState};
use crate::error::{Error, Result};
use crate::kernel::CommunicationWeight;

/// Accelerations of all agents at `state.t`, written agent-major into `out`.
///
/// `a_i = (1/N) sum_{j != i} psi(|x_j(t - tau_ji) - x_i(t)|) (v_j(t - tau_ji) - v_i(t))`.
/// The normalisation is `1/N` although the sum has `N - 1` terms. Pairs with
/// a zero delay (reference mode) read the other agent from `state` itself.
pub fn rhs_into<K: CommunicationWeight>(
    state: &SystemState,
    history: &HistoryBuffer,
    delays: &DelayMatrix,
    kernel: &K,
    out: &mut [f64],
) -> Result<()> {
    let n = state.n_agents();
    let dim = state.dim();
    let inv_n = 1.0 / n as f64;
    let mut xj = vec![0.0; dim];
    let mut vj = vec![0.0; dim];
    out.iter_mut().for_each(|c| *c = 0.0);
    for i in 0..n {
        let xi = state.position(i);
        let vi = state.velocity(i);
        let acc = &mut out[i * dim..(i + 1) * dim];
        for j in (0..n).filter(|&j| j != i) {
            let tau = delays.get(j, i);
            if tau > 0.0 {
                history.lookup_into(j, state.t - tau, &mut xj, &mut vj)?;
            } else {
                xj.copy_from_slice(state.position(j));
                vj.copy_from_slice(state.velocity(j));
            }
            let w = kernel.weight(dist(&xj, xi));
            for c in 0..dim {
                acc[c] += w * (vj[c] - vi[c]);
            }
        }
        for c in acc.iter_mut() {
            *c *= inv_n;
            if !c.is_finite() {
                return Err(Error::NumericBlowUp { t: state.t });
            }
        }
    }
    Ok(())
}

pub fn rhs<K: CommunicationWeight>(
    state: &SystemState,
    history: &HistoryBuffer,
    delays: &DelayMatrix,
    kernel: &K,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; state.n_agents() * state.dim()];
    rhs_into(state, history, delays, kernel, &mut out)?;
    Ok(out)
}
