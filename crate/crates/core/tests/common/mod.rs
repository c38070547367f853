#![allow(dead_code)]

use delayflock::config::{
    DelayConfig, HistoryConfig, InitialConfig, PositionSpec, RandomBall, RandomBox, ScenarioConfig, VelocitySpec,
};
use delayflock::kernel::KernelSpec;
use delayflock::rng::ScenarioRng;

pub const BETAS: [f64; 5] = [0.0, 0.25, 0.5, 1.0, 2.0];

/// Positions uniform in `[-1, 1]^dim`, velocities uniform in a ball.
pub fn random_scenario(n: usize, dim: usize, seed: u64, beta: f64, delays: DelayConfig, v_radius: f64) -> ScenarioConfig {
    ScenarioConfig {
        n_agents: n,
        dimension: dim,
        seed,
        kernel: KernelSpec::power_law(beta).unwrap(),
        initial: Some(InitialConfig {
            positions: PositionSpec::Random(RandomBox { random_box: [-1.0, 1.0] }),
            velocities: VelocitySpec::Random(RandomBall { random_ball: v_radius }),
        }),
        history: HistoryConfig::Ballistic,
        delays,
        reference_mode: false,
    }
}

/// Seeded family: N in 2..=8, d in 1..=3, kernel exponent from [`BETAS`],
/// delays uniform in `[tau/2, tau]` with `tau` uniform in `(0, 0.1]`,
/// ballistic history, speeds at most 1.
pub fn delayed_family(count: usize, master_seed: u64) -> Vec<ScenarioConfig> {
    let mut rng = ScenarioRng::new(master_seed);
    (0..count)
        .map(|_| {
            let n = 2 + (rng.next_u64() % 7) as usize;
            let dim = 1 + (rng.next_u64() % 3) as usize;
            let beta = BETAS[(rng.next_u64() % 5) as usize];
            let tau = 0.1 * (1.0 - rng.unit());
            let seed = rng.next_u64();
            random_scenario(n, dim, seed, beta, DelayConfig::Uniform([0.5 * tau, tau]), 1.0)
        })
        .collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}

/// Principal branch of the Lambert W function for `x >= 0`, by Halley's method.
pub fn lambert_w0(x: f64) -> f64 {
    assert!(x >= 0.0);
    let mut w = if x < 1.0 { x * (1.0 - x) } else { x.ln() - x.ln().ln().max(0.0) };
    for _ in 0..100 {
        let e = w.exp();
        let f = w * e - x;
        let step = f / (e * (w + 1.0) - (w + 2.0) * f / (2.0 * w + 2.0));
        w -= step;
        if step.abs() <= 1e-16 * w.abs().max(1e-300) {
            break;
        }
    }
    w
}
