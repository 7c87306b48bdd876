//! Fixtures shared by the benchmarks.

use std::sync::Arc;

use sgfd::problems::{Quadratic, Rosenbrock};
use sgfd::{RunConfig, StepsizeSchedule, StochasticProblem};

/// Noisy quadratic with eigenvalues over `[1, 10]`.
pub fn quadratic(dim: usize) -> Arc<dyn StochasticProblem> {
    Arc::new(Quadratic::with_condition(dim, 10.0, 0.4, 1).expect("valid quadratic"))
}

pub fn rosenbrock() -> Arc<dyn StochasticProblem> {
    Arc::new(Rosenbrock::new(2, 0.1).expect("valid rosenbrock"))
}

/// A matched Robbins-Monro run on [`quadratic`] with `βl = beta`.
pub fn quadratic_run(dim: usize, beta: f64, iterations: u64) -> RunConfig {
    let schedule = StepsizeSchedule::robbins_monro_matched(beta, 10.0, 3.0).expect("valid schedule");
    RunConfig::new(quadratic(dim), schedule)
        .iterations(iterations)
        .record_stride(iterations.max(10) / 10)
        .seed(7)
}
