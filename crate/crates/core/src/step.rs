//! The six constructions of the gradient-free step `s(x, ξ, α, ζ)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::directions::DirectionDistribution;
use crate::error::{invalid, Error, Result};
use crate::linalg::{all_finite, axpy};
use crate::problems::StochasticProblem;

/// How samples `ξ` and directions `ζ` are combined into one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StepVariant {
    /// `(f(x,ξ) − f(x+αζ,ξ)) ζ`
    #[default]
    SingleSample,
    /// `n` samples sharing one direction.
    MinibatchSharedDirection { n: usize },
    /// `n` directions, each averaged over its own `m` samples.
    NestedBatch { n: usize, m: usize },
    /// `n` independent `(ξ_i, ζ_i)` pairs.
    PairedSampleDirection { n: usize },
    /// `(F(x) − F(x+αζ)) ζ`
    FullObjectiveSingle,
    /// Average of `n` full-objective steps with fresh directions.
    FullObjectiveBatch { n: usize },
}

impl StepVariant {
    pub fn validate(&self) -> Result<()> {
        let check = |name: &'static str, v: usize| {
            if v == 0 {
                Err(invalid(name, "batch size must be at least 1"))
            } else {
                Ok(())
            }
        };
        match *self {
            StepVariant::SingleSample | StepVariant::FullObjectiveSingle => Ok(()),
            StepVariant::MinibatchSharedDirection { n }
            | StepVariant::PairedSampleDirection { n }
            | StepVariant::FullObjectiveBatch { n } => check("n", n),
            StepVariant::NestedBatch { n, m } => {
                check("n", n)?;
                check("m", m)
            }
        }
    }

    pub fn needs_objective(&self) -> bool {
        matches!(self, StepVariant::FullObjectiveSingle | StepVariant::FullObjectiveBatch { .. })
    }

    /// Loss evaluations per step.
    pub fn evaluations(&self) -> usize {
        match *self {
            StepVariant::SingleSample | StepVariant::FullObjectiveSingle => 2,
            StepVariant::MinibatchSharedDirection { n }
            | StepVariant::PairedSampleDirection { n }
            | StepVariant::FullObjectiveBatch { n } => 2 * n,
            StepVariant::NestedBatch { n, m } => 2 * n * m,
        }
    }
}

/// Computes one step at `x`. Directions are drawn before samples, in the
/// order the sums are written.
pub fn stochastic_step<R: Rng>(
    variant: StepVariant,
    problem: &dyn StochasticProblem,
    x: &[f64],
    alpha: f64,
    dist: &DirectionDistribution,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let d = problem.dim();
    if x.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: x.len(),
        });
    }
    if dist.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: dist.dim(),
        });
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(invalid("alpha", format!("must be positive and finite, got {alpha}")));
    }
    if !all_finite(x) {
        return Err(Error::NonFinite("iterate contains a non-finite entry".into()));
    }
    variant.validate()?;
    if variant.needs_objective() && !problem.exposes_objective() {
        return Err(Error::ObjectiveUnavailable);
    }

    let mut zeta = vec![0.0; d];
    let mut probe = vec![0.0; d];
    let mut s = vec![0.0; d];
    let shift = |zeta: &[f64], probe: &mut Vec<f64>| {
        probe.copy_from_slice(x);
        axpy(alpha, zeta, probe);
    };
    let sample_diff = |probe: &[f64], rng: &mut R| {
        let xi = problem.draw_sample(rng);
        problem.sample_loss(x, xi) - problem.sample_loss(probe, xi)
    };

    match variant {
        StepVariant::SingleSample => {
            dist.sample_into(rng, &mut zeta);
            shift(&zeta, &mut probe);
            let diff = sample_diff(&probe, rng);
            axpy(diff, &zeta, &mut s);
        }
        StepVariant::MinibatchSharedDirection { n } => {
            dist.sample_into(rng, &mut zeta);
            shift(&zeta, &mut probe);
            let diff: f64 = (0..n).map(|_| sample_diff(&probe, rng)).sum::<f64>() / n as f64;
            axpy(diff, &zeta, &mut s);
        }
        StepVariant::NestedBatch { n, m } => {
            for _ in 0..n {
                dist.sample_into(rng, &mut zeta);
                shift(&zeta, &mut probe);
                let diff: f64 = (0..m).map(|_| sample_diff(&probe, rng)).sum::<f64>() / m as f64;
                axpy(diff / n as f64, &zeta, &mut s);
            }
        }
        StepVariant::PairedSampleDirection { n } => {
            for _ in 0..n {
                dist.sample_into(rng, &mut zeta);
                shift(&zeta, &mut probe);
                let diff = sample_diff(&probe, rng);
                axpy(diff / n as f64, &zeta, &mut s);
            }
        }
        StepVariant::FullObjectiveSingle | StepVariant::FullObjectiveBatch { .. } => {
            let n = match variant {
                StepVariant::FullObjectiveBatch { n } => n,
                _ => 1,
            };
            let fx = problem.objective(x);
            for _ in 0..n {
                dist.sample_into(rng, &mut zeta);
                shift(&zeta, &mut probe);
                let diff = fx - problem.objective(&probe);
                axpy(diff / n as f64, &zeta, &mut s);
            }
        }
    }

    if !all_finite(&s) {
        return Err(Error::NonFinite(format!("step at alpha = {alpha} has a non-finite entry")));
    }
    Ok(s)
}
