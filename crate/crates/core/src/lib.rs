//! Stochastic gradient-free descent (SGFD) and its momentum-accelerated
//! variant, together with the analysis tools used to check their
//! convergence behaviour numerically.
//!
//! The optimizers never look at a gradient. Each step evaluates the
//! sampled loss at `x` and at `x + αζ` for a random direction `ζ` with zero
//! mean and identity covariance, and moves along `ζ` by the observed
//! decrease:
//!
//! ```text
//! s = (f(x, ξ) − f(x + αζ, ξ)) ζ,      x⁺ = x + s
//! ```
//!
//! With Robbins–Monro stepsizes `α_k = β/(k + σ)` and `β > 1/l` the
//! expected optimality gap of the plain method decays like `1/k` on
//! strongly convex problems. The momentum variant averages the normalized
//! steps `s_j/α_j` with weights proportional to `j^p`.
//!
//! Modules:
//! - [`directions`]: direction laws and their moment constants
//! - [`problems`]: stochastic test objectives with known constants
//! - [`step`], [`schedule`], [`sgfd`]: the plain iteration
//! - [`momentum`]: the accelerated iteration
//! - [`analysis`]: bound sequences, rate fits, step-moment estimates
//! - [`harness`]: config-driven experiments and the verification suite

// `!(x > 0.0)` is the NaN-rejecting form used throughout parameter checks
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod directions;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod momentum;
pub mod problems;
pub mod rng;
pub mod schedule;
pub mod sgfd;
pub mod step;
pub mod trace;

pub use directions::{DirectionDistribution, DirectionKind, MomentConstants};
pub use error::{Error, Result};
pub use momentum::{run_accelerated, DecayMode, MomentumState};
pub use problems::{ProblemConstants, StochasticProblem};
pub use schedule::{Method, StepsizeSchedule};
pub use sgfd::{run_reference_sgd, run_sgfd, RunConfig};
pub use step::{stochastic_step, StepVariant};
pub use trace::{Trace, TraceRow};
