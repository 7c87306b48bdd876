//! Stochastic objectives `F(x) = E_ξ[f(x, ξ)]`.
//!
//! A sample `ξ` is an opaque 64-bit value: a data index for finite-sum
//! problems, or a seed from which additive noise is regenerated. The same
//! `ξ` passed twice yields the same `f(·, ξ)`, which is what the
//! finite-difference steps rely on.

mod logistic;
mod quadratic;
mod rosenbrock;

use std::path::PathBuf;
use std::sync::Arc;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linalg::{dot, norm_sq, sub};

pub use logistic::{load_dataset, synthetic_dataset, Dataset, LogisticRegression};
pub use quadratic::Quadratic;
pub use rosenbrock::Rosenbrock;

/// Value of the sample variable `ξ`.
pub type Xi = u64;

/// Constants on a bounded region where global ones do not exist.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxConstants {
    pub lower: f64,
    pub upper: f64,
    pub lipschitz: f64,
    pub grad_norm_sq_lipschitz: f64,
}

/// Known structural constants of a problem. Every field is optional;
/// checks that need a missing constant are skipped.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants {
    /// Strong-convexity modulus `l`.
    pub strong_convexity: Option<f64>,
    /// Global Lipschitz constant `L` of `∇F`.
    pub lipschitz: Option<f64>,
    /// Lipschitz constant `L_G` of `∇‖∇F‖²`.
    pub grad_norm_sq_lipschitz: Option<f64>,
    pub f_star: Option<f64>,
    pub x_star: Option<Vec<f64>>,
    pub f_inf: Option<f64>,
    pub box_constants: Option<BoxConstants>,
}

pub trait StochasticProblem: Send + Sync {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    /// Full objective `F(x)`.
    fn objective(&self, x: &[f64]) -> f64;

    /// Sampled loss `f(x, ξ)`.
    fn sample_loss(&self, x: &[f64], xi: Xi) -> f64;

    fn draw_sample(&self, rng: &mut dyn RngCore) -> Xi;

    /// `∇F(x)`. Used for reporting and diagnostics only; the gradient-free
    /// optimizers never call it.
    fn reference_gradient(&self, x: &[f64]) -> Vec<f64>;

    /// `∇f(x, ξ)`, used by the reference SGD comparison curve.
    fn sample_gradient(&self, x: &[f64], xi: Xi) -> Vec<f64>;

    fn constants(&self) -> &ProblemConstants;

    fn initial_point(&self) -> Vec<f64>;

    /// Whether `F` may be evaluated exactly by the optimizer.
    fn exposes_objective(&self) -> bool {
        true
    }

    /// Number of distinct samples for finite-sum problems.
    fn finite_support(&self) -> Option<u64> {
        None
    }

    /// A random point in the region where the declared constants apply.
    fn probe_point(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.initial_point()
            .into_iter()
            .map(|v| v + rng.random_range(-1.0..1.0))
            .collect()
    }
}

/// Data source for the logistic-regression catalog entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LogisticData {
    File(PathBuf),
    Synthetic { samples: usize, dim: usize, seed: u64 },
}

/// Named, parameterized problem constructors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ProblemSpec {
    /// Diagonal quadratic with eigenvalues evenly spaced in `[1, condition]`.
    Quadratic {
        dim: usize,
        condition: f64,
        noise_sd: f64,
        seed: u64,
    },
    Logistic { data: LogisticData, l2: f64 },
    Rosenbrock { dim: usize, noise_sd: f64 },
}

impl ProblemSpec {
    pub fn build(&self) -> Result<Arc<dyn StochasticProblem>> {
        Ok(match self {
            ProblemSpec::Quadratic {
                dim,
                condition,
                noise_sd,
                seed,
            } => Arc::new(Quadratic::with_condition(*dim, *condition, *noise_sd, *seed)?),
            ProblemSpec::Logistic { data, l2 } => {
                let dataset = match data {
                    LogisticData::File(path) => load_dataset(path)?,
                    LogisticData::Synthetic { samples, dim, seed } => synthetic_dataset(*samples, *dim, *seed)?,
                };
                Arc::new(LogisticRegression::new(dataset, *l2)?)
            }
            ProblemSpec::Rosenbrock { dim, noise_sd } => Arc::new(Rosenbrock::new(*dim, *noise_sd)?),
        })
    }
}

/// Central-difference gradient with step `h` per coordinate.
pub fn finite_difference_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Worst observed ratios for the declared constants over random probes.
/// A ratio above 1 means the declaration was violated at some probe.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ConstantCheck {
    pub probes: usize,
    /// max of `2l(F − F*) / ‖∇F‖²`
    pub pl_ratio: Option<f64>,
    /// max of `|F(x') − F(x) − ∇F(x)ᵀ(x'−x)| / ((L/2)‖x'−x‖²)`
    pub smoothness_ratio: Option<f64>,
    /// max of `‖∇F(x+h) − ∇F(x)‖ / (L‖h‖)` over short secants
    pub secant_upper_ratio: Option<f64>,
    /// max of `l‖h‖² / hᵀ(∇F(x+h) − ∇F(x))`
    pub secant_lower_ratio: Option<f64>,
}

impl ConstantCheck {
    pub fn passes(&self, tolerance: f64) -> bool {
        [self.pl_ratio, self.smoothness_ratio, self.secant_upper_ratio, self.secant_lower_ratio]
            .iter()
            .flatten()
            .all(|r| *r <= 1.0 + tolerance)
    }
}

/// Probes the Polyak–Łojasiewicz inequality, the quadratic upper bound
/// implied by `L`, and the Rayleigh quotient of gradient secants against the
/// declared `(l, L)`.
pub fn check_declared_constants(
    problem: &dyn StochasticProblem,
    probes: usize,
    rng: &mut dyn RngCore,
) -> ConstantCheck {
    let c = problem.constants();
    let mut out = ConstantCheck {
        probes,
        ..Default::default()
    };
    // probe_point stays inside the box for problems that only declare box constants
    let lipschitz = c.lipschitz.or(c.box_constants.as_ref().map(|b| b.lipschitz));
    let bump = |slot: &mut Option<f64>, v: f64| *slot = Some(slot.map_or(v, |s: f64| s.max(v)));
    for _ in 0..probes {
        let x = problem.probe_point(rng);
        let fx = problem.objective(&x);
        let gx = problem.reference_gradient(&x);
        let g2 = norm_sq(&gx);
        if let (Some(l), Some(f_star)) = (c.strong_convexity, c.f_star) {
            if g2 > 0.0 {
                bump(&mut out.pl_ratio, 2.0 * l * (fx - f_star) / g2);
            }
        }
        let y = problem.probe_point(rng);
        let d = sub(&y, &x);
        let d2 = norm_sq(&d);
        if d2 == 0.0 {
            continue;
        }
        if let Some(big_l) = lipschitz {
            let gap = (problem.objective(&y) - fx - dot(&gx, &d)).abs();
            bump(&mut out.smoothness_ratio, gap / (0.5 * big_l * d2));
        }
        // short secant: Hessian-vector difference along a random direction
        let scale = 1e-3 / d2.sqrt();
        let h: Vec<f64> = d.iter().map(|v| v * scale).collect();
        let xh: Vec<f64> = x.iter().zip(&h).map(|(a, b)| a + b).collect();
        let dg = sub(&problem.reference_gradient(&xh), &gx);
        let h2 = norm_sq(&h);
        if let Some(big_l) = lipschitz {
            bump(&mut out.secant_upper_ratio, norm_sq(&dg).sqrt() / (big_l * h2.sqrt()));
        }
        if let Some(l) = c.strong_convexity {
            bump(&mut out.secant_lower_ratio, l * h2 / dot(&h, &dg));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::setup_rng;

    fn catalog() -> Vec<ProblemSpec> {
        vec![
            ProblemSpec::Quadratic {
                dim: 10,
                condition: 10.0,
                noise_sd: 0.4,
                seed: 1,
            },
            ProblemSpec::Logistic {
                data: LogisticData::Synthetic {
                    samples: 200,
                    dim: 5,
                    seed: 2,
                },
                l2: 0.1,
            },
            ProblemSpec::Rosenbrock { dim: 4, noise_sd: 0.1 },
        ]
    }

    #[test]
    fn catalog_constants_hold_on_probes() {
        for spec in catalog() {
            let p = spec.build().unwrap();
            let check = check_declared_constants(p.as_ref(), 1000, &mut setup_rng(3));
            assert!(check.passes(1e-6), "{}: {check:?}", p.name());
            let c = p.constants();
            if let (Some(l), Some(big_l)) = (c.strong_convexity, c.lipschitz) {
                assert!(l <= big_l);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for spec in catalog() {
            let p = spec.build().unwrap();
            let mut rng = setup_rng(4);
            for _ in 0..100 {
                let x = p.probe_point(&mut rng);
                let h = 1e-5 * (1.0 + norm_sq(&x).sqrt());
                let fd = finite_difference_gradient(|z| p.objective(z), &x, h);
                let g = p.reference_gradient(&x);
                let err = norm_sq(&sub(&fd, &g)).sqrt();
                assert!(err <= 1e-5 * (1.0 + norm_sq(&g).sqrt()), "{}: {err}", p.name());
            }
        }
    }

    #[test]
    fn sample_gradient_is_unbiased_in_mean() {
        for spec in catalog() {
            let p = spec.build().unwrap();
            let mut rng = setup_rng(5);
            let x = p.probe_point(&mut rng);
            let n = 20_000;
            let mut mean = vec![0.0; p.dim()];
            for _ in 0..n {
                let xi = p.draw_sample(&mut rng);
                crate::linalg::axpy(1.0 / n as f64, &p.sample_gradient(&x, xi), &mut mean);
            }
            let g = p.reference_gradient(&x);
            let err = norm_sq(&sub(&mean, &g)).sqrt();
            assert!(err < 0.05 * (1.0 + norm_sq(&g).sqrt()), "{}: {err}", p.name());
        }
    }
}
