//! Fixtures shared by the benchmarks.

use encircle_core::{Scenario, Vec3};

/// Ring sizes the scaling benchmarks sweep.
pub const SIZES: [usize; 4] = [5, 10, 20, 40];

/// The Controller 1 scenario with `n` robots, shortened to `duration` seconds.
pub fn ring_scenario(n: usize, duration: f64) -> Scenario {
    Scenario::builtin_with(
        "v1_fig3",
        &[format!("robots.count={n}"), format!("duration={duration}")],
    )
    .expect("built-in scenario with valid overrides")
}

/// Deterministic off-axis points for the geometry kernels.
pub fn points(count: usize) -> Vec<Vec3> {
    (0..count)
        .map(|k| {
            let a = k as f64 * 0.618_033_988_75;
            let rho = 0.5 + (k % 17) as f64 * 0.3;
            Vec3::new(rho * a.cos(), rho * a.sin(), (k % 7) as f64 * 0.25 - 0.75)
        })
        .collect()
}
