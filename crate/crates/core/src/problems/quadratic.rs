use rand::{Rng, RngCore, SeedableRng};
use rand_distr::{Distribution, StandardNormal};

use super::{ProblemConstants, StochasticProblem, Xi};
use crate::error::{invalid, Result};
use crate::rng::{setup_rng, StreamRng};

/// `F(x) = ½ (x − x*)ᵀ diag(λ) (x − x*)`.
///
/// The sampled loss adds a random linear term,
/// `f(x, ξ) = F(x) + noise_sd · ξᵀ(x − x*)` with `ξ ~ N(0, I)`, so the
/// noise survives the difference `f(x, ξ) − f(x + αζ, ξ)` and contributes a
/// variance floor to the step that does not vanish at the minimizer.
#[derive(Debug, Clone)]
pub struct Quadratic {
    name: String,
    eigenvalues: Vec<f64>,
    noise_sd: f64,
    constants: ProblemConstants,
    x_star: Vec<f64>,
}

impl Quadratic {
    /// `x*` is drawn uniformly from `[-1, 1]^d`.
    pub fn new<R: Rng + ?Sized>(eigenvalues: Vec<f64>, noise_sd: f64, rng: &mut R) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(invalid("eigenvalues", "at least one eigenvalue is required"));
        }
        if let Some(bad) = eigenvalues.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(invalid("eigenvalues", format!("all eigenvalues must be positive, got {bad}")));
        }
        if !(noise_sd >= 0.0) || !noise_sd.is_finite() {
            return Err(invalid("noise_sd", format!("must be finite and non-negative, got {noise_sd}")));
        }
        let x_star: Vec<f64> = eigenvalues.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
        Ok(Self::with_minimizer(eigenvalues, noise_sd, x_star))
    }

    pub(crate) fn with_minimizer(eigenvalues: Vec<f64>, noise_sd: f64, x_star: Vec<f64>) -> Self {
        let l = eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        let big_l = eigenvalues.iter().cloned().fold(0.0, f64::max);
        let constants = ProblemConstants {
            strong_convexity: Some(l),
            lipschitz: Some(big_l),
            grad_norm_sq_lipschitz: Some(2.0 * big_l * big_l),
            f_star: Some(0.0),
            x_star: Some(x_star.clone()),
            f_inf: Some(0.0),
            box_constants: None,
        };
        Self {
            name: format!("quadratic-d{}", eigenvalues.len()),
            eigenvalues,
            noise_sd,
            constants,
            x_star,
        }
    }

    /// Eigenvalues evenly spaced over `[1, condition]`.
    pub fn with_condition(dim: usize, condition: f64, noise_sd: f64, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dim", "must be at least 1"));
        }
        if !(condition >= 1.0) {
            return Err(invalid("condition", format!("must be at least 1, got {condition}")));
        }
        let eigenvalues = (0..dim)
            .map(|i| {
                if dim == 1 {
                    1.0
                } else {
                    1.0 + (condition - 1.0) * i as f64 / (dim - 1) as f64
                }
            })
            .collect();
        Self::new(eigenvalues, noise_sd, &mut setup_rng(seed))
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn minimizer(&self) -> &[f64] {
        &self.x_star
    }

    pub fn noise_sd(&self) -> f64 {
        self.noise_sd
    }

    fn noise_term(&self, x: &[f64], xi: Xi) -> f64 {
        if self.noise_sd == 0.0 {
            return 0.0;
        }
        let mut rng = StreamRng::seed_from_u64(xi);
        let mut acc = 0.0;
        for (xv, sv) in x.iter().zip(&self.x_star) {
            let z: f64 = StandardNormal.sample(&mut rng);
            acc += z * (xv - sv);
        }
        self.noise_sd * acc
    }
}

impl StochasticProblem for Quadratic {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    fn objective(&self, x: &[f64]) -> f64 {
        0.5 * x
            .iter()
            .zip(&self.x_star)
            .zip(&self.eigenvalues)
            .map(|((xv, sv), lam)| lam * (xv - sv) * (xv - sv))
            .sum::<f64>()
    }

    fn sample_loss(&self, x: &[f64], xi: Xi) -> f64 {
        self.objective(x) + self.noise_term(x, xi)
    }

    fn draw_sample(&self, rng: &mut dyn RngCore) -> Xi {
        rng.next_u64()
    }

    fn reference_gradient(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.x_star)
            .zip(&self.eigenvalues)
            .map(|((xv, sv), lam)| lam * (xv - sv))
            .collect()
    }

    fn sample_gradient(&self, x: &[f64], xi: Xi) -> Vec<f64> {
        let mut g = self.reference_gradient(x);
        if self.noise_sd > 0.0 {
            let mut rng = StreamRng::seed_from_u64(xi);
            for gi in g.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *gi += self.noise_sd * z;
            }
        }
        g
    }

    fn constants(&self) -> &ProblemConstants {
        &self.constants
    }

    /// `x* + (1, …, 1)`.
    fn initial_point(&self) -> Vec<f64> {
        self.x_star.iter().map(|v| v + 1.0).collect()
    }
}
