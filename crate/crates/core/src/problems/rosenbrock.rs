use rand::{Rng, RngCore, SeedableRng};

use super::{BoxConstants, ProblemConstants, StochasticProblem, Xi};
use crate::error::{invalid, Result};
use crate::linalg::{norm, sub};
use crate::rng::{setup_rng, StreamRng};

const BOX: (f64, f64) = (-2.0, 2.0);

/// Sum of independent 2-D Rosenbrock valleys,
/// `F(x) = Σ (1 − a_i)² + 100 (b_i − a_i²)²` over pairs `(a_i, b_i)`.
///
/// Nonconvex with `F_inf = 0` at `(1, …, 1)`. The gradient is only
/// Lipschitz on bounded sets, so `L` and `L_G` are declared on the box
/// `[-2, 2]^d`. Sampled losses add `noise_sd · uᵀ(x − 1)` with `u` uniform
/// on `[-1, 1]^d`.
#[derive(Debug, Clone)]
pub struct Rosenbrock {
    name: String,
    dim: usize,
    noise_sd: f64,
    constants: ProblemConstants,
}

impl Rosenbrock {
    pub fn new(dim: usize, noise_sd: f64) -> Result<Self> {
        if dim < 2 || !dim.is_multiple_of(2) {
            return Err(invalid("dim", format!("must be even and at least 2, got {dim}")));
        }
        if !(noise_sd >= 0.0) || !noise_sd.is_finite() {
            return Err(invalid("noise_sd", format!("must be finite and non-negative, got {noise_sd}")));
        }
        let mut p = Self {
            name: format!("rosenbrock-d{dim}"),
            dim,
            noise_sd,
            constants: ProblemConstants {
                x_star: Some(vec![1.0; dim]),
                f_inf: Some(0.0),
                ..Default::default()
            },
        };
        // Gershgorin bound on the Hessian over the box:
        // |1200a² − 400b + 2| + |400a| ≤ 4800 + 800 + 2 + 800.
        let lipschitz = 6402.0;
        p.constants.box_constants = Some(BoxConstants {
            lower: BOX.0,
            upper: BOX.1,
            lipschitz,
            grad_norm_sq_lipschitz: p.probe_grad_norm_sq_lipschitz(),
        });
        Ok(p)
    }

    /// `∇‖∇F‖² = 2 H ∇F`, per pair.
    fn grad_norm_sq_gradient(&self, x: &[f64]) -> Vec<f64> {
        let g = self.reference_gradient(x);
        let mut out = vec![0.0; self.dim];
        for i in (0..self.dim).step_by(2) {
            let (a, b) = (x[i], x[i + 1]);
            let h11 = 1200.0 * a * a - 400.0 * b + 2.0;
            let h12 = -400.0 * a;
            let h22 = 200.0;
            out[i] = 2.0 * (h11 * g[i] + h12 * g[i + 1]);
            out[i + 1] = 2.0 * (h12 * g[i] + h22 * g[i + 1]);
        }
        out
    }

    /// Largest secant slope of `∇‖∇F‖²` over deterministic random pairs in
    /// the box, padded by 50%.
    fn probe_grad_norm_sq_lipschitz(&self) -> f64 {
        let mut rng = setup_rng(0x2B0C);
        let mut worst: f64 = 0.0;
        for _ in 0..4000 {
            let x: Vec<f64> = (0..self.dim).map(|_| rng.random_range(BOX.0..BOX.1)).collect();
            let y: Vec<f64> = x.iter().map(|v| v + rng.random_range(-1e-3..1e-3)).collect();
            let slope = norm(&sub(&self.grad_norm_sq_gradient(&x), &self.grad_norm_sq_gradient(&y))) / norm(&sub(&x, &y));
            worst = worst.max(slope);
        }
        1.5 * worst
    }

    fn noise_term(&self, x: &[f64], xi: Xi) -> f64 {
        if self.noise_sd == 0.0 {
            return 0.0;
        }
        let mut rng = StreamRng::seed_from_u64(xi);
        let acc: f64 = x.iter().map(|v| rng.random_range(-1.0..1.0) * (v - 1.0)).sum();
        self.noise_sd * acc
    }
}

impl StochasticProblem for Rosenbrock {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn objective(&self, x: &[f64]) -> f64 {
        x.chunks_exact(2)
            .map(|p| (1.0 - p[0]).powi(2) + 100.0 * (p[1] - p[0] * p[0]).powi(2))
            .sum()
    }

    fn sample_loss(&self, x: &[f64], xi: Xi) -> f64 {
        self.objective(x) + self.noise_term(x, xi)
    }

    fn draw_sample(&self, rng: &mut dyn RngCore) -> Xi {
        rng.next_u64()
    }

    fn reference_gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        for i in (0..self.dim).step_by(2) {
            let (a, b) = (x[i], x[i + 1]);
            g[i] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            g[i + 1] = 200.0 * (b - a * a);
        }
        g
    }

    fn sample_gradient(&self, x: &[f64], xi: Xi) -> Vec<f64> {
        let mut g = self.reference_gradient(x);
        if self.noise_sd > 0.0 {
            let mut rng = StreamRng::seed_from_u64(xi);
            for gi in g.iter_mut() {
                *gi += self.noise_sd * rng.random_range(-1.0..1.0);
            }
        }
        g
    }

    fn constants(&self) -> &ProblemConstants {
        &self.constants
    }

    /// `(-1.2, 1, -1.2, 1, …)`.
    fn initial_point(&self) -> Vec<f64> {
        (0..self.dim).map(|i| if i % 2 == 0 { -1.2 } else { 1.0 }).collect()
    }

    fn probe_point(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        (0..self.dim).map(|_| rng.random_range(BOX.0..BOX.1)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::finite_difference_gradient;

    #[test]
    fn odd_dimension_rejected() {
        assert!(Rosenbrock::new(3, 0.0).is_err());
        assert!(Rosenbrock::new(0, 0.0).is_err());
    }

    #[test]
    fn global_minimizer() {
        let p = Rosenbrock::new(6, 0.0).unwrap();
        assert_eq!(p.objective(&[1.0; 6]), 0.0);
        assert!(p.reference_gradient(&[1.0; 6]).iter().all(|g| *g == 0.0));
    }

    #[test]
    fn origin_value() {
        let p = Rosenbrock::new(2, 0.0).unwrap();
        assert_eq!(p.objective(&[0.0, 0.0]), 1.0);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let p = Rosenbrock::new(4, 0.0).unwrap();
        let mut rng = setup_rng(1);
        for _ in 0..100 {
            let x = p.probe_point(&mut rng);
            let fd = finite_difference_gradient(|z| p.objective(z), &x, 1e-6);
            let g = p.reference_gradient(&x);
            for (a, b) in fd.iter().zip(&g) {
                assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn grad_norm_sq_gradient_matches_finite_differences() {
        let p = Rosenbrock::new(2, 0.0).unwrap();
        let x = [0.3, -0.4];
        let fd = finite_difference_gradient(|z| crate::linalg::norm_sq(&p.reference_gradient(z)), &x, 1e-6);
        for (a, b) in fd.iter().zip(&p.grad_norm_sq_gradient(&x)) {
            assert!((a - b).abs() <= 1e-5 * b.abs().max(1.0));
        }
        let bc = p.constants().box_constants.clone().unwrap();
        assert!(bc.grad_norm_sq_lipschitz.is_finite() && bc.grad_norm_sq_lipschitz > 0.0);
    }
}
