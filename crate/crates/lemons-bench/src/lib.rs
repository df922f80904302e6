//! Shared market fixtures for the pipeline benchmarks.

use lemons_core::{MarketInstance, ScalarFn};

fn uniform_density() -> ScalarFn {
    ScalarFn::density(vec![0.0, 1.0], vec![vec![1.0]]).unwrap()
}

/// Uniform density with cost `0.25 + 0.5 t`: one crossing, gains at the top.
pub fn canonical() -> MarketInstance {
    let cost = ScalarFn::cost(vec![0.0, 1.0], vec![vec![0.25, 0.5]]).unwrap();
    MarketInstance::new(uniform_density(), cost).unwrap()
}

/// Cubic cost crossing the diagonal at 0.2, 0.5, and 0.8: exercises the
/// greedy block matching.
pub fn three_crossing() -> MarketInstance {
    let cost = ScalarFn::cost(vec![0.0, 1.0], vec![vec![0.04, 0.67, 0.75, -0.5]]).unwrap();
    MarketInstance::new(uniform_density(), cost).unwrap()
}
