//! Monte-Carlo mean and variance of the step at a fixed point, and the
//! variance model `V[s] ≤ α²(M + M_V ‖∇F‖²)` fitted over a probe grid.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::directions::DirectionDistribution;
use crate::error::{invalid, Error, Result};
use crate::linalg::{axpy, dot, norm_sq, sub};
use crate::problems::StochasticProblem;
use crate::step::{stochastic_step, StepVariant};

/// Minimum Monte-Carlo sample count for a moment report.
pub const MIN_SAMPLES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMomentReport {
    pub x: Vec<f64>,
    pub alpha: f64,
    pub samples: usize,
    /// `E[s]`
    pub mean: Vec<f64>,
    /// `E‖s‖²`
    pub second_moment: f64,
    /// `E‖s − E[s]‖²`, computed from centred samples.
    pub variance: f64,
    /// `‖∇F(x)‖²`
    pub grad_sq: f64,
    /// `∇Fᵀ E[s] + (L/2)‖E[s]‖² + (L/2) V[s]`, when `L` is known.
    pub decrease_bound: Option<f64>,
    /// `E[F(x + s)] − F(x)`
    pub observed_decrease: f64,
}

impl StepMomentReport {
    /// `E‖s‖² − ‖E[s]‖² − V[s]`; zero up to roundoff.
    pub fn decomposition_error(&self) -> f64 {
        self.second_moment - norm_sq(&self.mean) - self.variance
    }
}

/// Draws `n` steps at `x` and summarizes them.
pub fn estimate_step_moments<R: Rng>(
    problem: &dyn StochasticProblem,
    variant: StepVariant,
    x: &[f64],
    alpha: f64,
    dist: &DirectionDistribution,
    n: usize,
    rng: &mut R,
) -> Result<StepMomentReport> {
    if n < MIN_SAMPLES {
        return Err(invalid("n_samples", format!("need at least {MIN_SAMPLES}, got {n}")));
    }
    let d = problem.dim();
    let fx = problem.objective(x);
    let mut steps = Vec::with_capacity(n * d);
    let mut after = 0.0;
    let mut probe = vec![0.0; d];
    for _ in 0..n {
        let s = stochastic_step(variant, problem, x, alpha, dist, rng)?;
        probe.copy_from_slice(x);
        axpy(1.0, &s, &mut probe);
        after += problem.objective(&probe);
        steps.extend_from_slice(&s);
    }
    let nf = n as f64;
    let mut mean = vec![0.0; d];
    let mut second = 0.0;
    for s in steps.chunks_exact(d) {
        axpy(1.0 / nf, s, &mut mean);
        second += norm_sq(s);
    }
    let variance = steps.chunks_exact(d).map(|s| norm_sq(&sub(s, &mean))).sum::<f64>() / nf;
    let g = problem.reference_gradient(x);
    let decrease_bound = problem
        .constants()
        .lipschitz
        .map(|big_l| dot(&g, &mean) + 0.5 * big_l * norm_sq(&mean) + 0.5 * big_l * variance);
    Ok(StepMomentReport {
        x: x.to_vec(),
        alpha,
        samples: n,
        mean,
        second_moment: second / nf,
        variance,
        grad_sq: norm_sq(&g),
        decrease_bound,
        observed_decrease: after / nf - fx,
    })
}

/// Nonnegative least-squares fit of `V[s]/α² ≈ M + M_V ‖∇F‖²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceModel {
    pub m: f64,
    pub m_v: f64,
    /// Largest `|V − fit| / fit` over the grid.
    pub max_relative_residual: f64,
    pub points: usize,
}

impl VarianceModel {
    /// `M_G = M_V + 2`.
    pub fn growth_constant(&self) -> f64 {
        growth_constant(self.m_v)
    }

    /// `M_d = M + 5 d³ D_ζ² / 4`.
    pub fn noise_constant(&self, dist: &DirectionDistribution) -> f64 {
        noise_constant(self.m, dist)
    }

    pub fn predict(&self, alpha: f64, grad_sq: f64) -> f64 {
        alpha * alpha * (self.m + self.m_v * grad_sq)
    }
}

pub fn growth_constant(m_v: f64) -> f64 {
    m_v + 2.0
}

pub fn noise_constant(m: f64, dist: &DirectionDistribution) -> f64 {
    let d = dist.dim() as f64;
    let dz = dist.moment_constants().d_zeta;
    m + 1.25 * d.powi(3) * dz * dz
}

/// Fits `(M, M_V) ≥ 0` minimizing the relative squared error
/// `Σ ((V_i − α_i²(M + M_V g_i)) / V_i)²`.
pub fn fit_variance_model(reports: &[StepMomentReport]) -> Result<VarianceModel> {
    let pts: Vec<(f64, f64, f64)> = reports
        .iter()
        .filter(|r| r.variance > 0.0)
        .map(|r| (r.alpha * r.alpha, r.grad_sq, r.variance))
        .collect();
    if pts.len() < 2 {
        return Err(Error::Fit("variance model needs at least two probes with positive variance".into()));
    }
    let g_min = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let g_max = pts.iter().map(|p| p.1).fold(0.0, f64::max);
    if g_max - g_min <= 1e-9 * g_max.max(1e-300) {
        return Err(Error::Fit("degenerate probe grid: every probe has the same gradient norm".into()));
    }
    // rows (a/V, a g/V), target 1
    let (mut s11, mut s12, mut s22, mut t1, mut t2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(a, g, v) in &pts {
        let (c1, c2) = (a / v, a * g / v);
        s11 += c1 * c1;
        s12 += c1 * c2;
        s22 += c2 * c2;
        t1 += c1;
        t2 += c2;
    }
    let loss = |m: f64, mv: f64| {
        pts.iter()
            .map(|&(a, g, v)| (1.0 - a * (m + mv * g) / v).powi(2))
            .sum::<f64>()
    };
    let mut candidates = vec![(0.0, 0.0)];
    if s11 > 0.0 {
        candidates.push(((t1 / s11).max(0.0), 0.0));
    }
    if s22 > 0.0 {
        candidates.push((0.0, (t2 / s22).max(0.0)));
    }
    let det = s11 * s22 - s12 * s12;
    if det > 0.0 {
        let m = (s22 * t1 - s12 * t2) / det;
        let mv = (s11 * t2 - s12 * t1) / det;
        if m >= 0.0 && mv >= 0.0 {
            candidates.push((m, mv));
        }
    }
    let (m, m_v) = candidates
        .into_iter()
        .min_by(|a, b| loss(a.0, a.1).total_cmp(&loss(b.0, b.1)))
        .expect("candidate list is non-empty");
    let max_relative_residual = pts
        .iter()
        .map(|&(a, g, v)| {
            let fit = a * (m + m_v * g);
            if fit > 0.0 {
                (v - fit).abs() / fit
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0, f64::max);
    Ok(VarianceModel {
        m,
        m_v,
        max_relative_residual,
        points: pts.len(),
    })
}

/// Fits the variance model on `probes` random points of `problem`, each
/// probed at every stepsize in `alphas` with `n` samples.
pub fn probe_variance_model(
    problem: &dyn StochasticProblem,
    variant: StepVariant,
    dist: &DirectionDistribution,
    alphas: &[f64],
    probes: usize,
    n: usize,
    seed: u64,
) -> Result<VarianceModel> {
    let mut rng = crate::rng::setup_rng(seed);
    let mut reports = Vec::with_capacity(probes * alphas.len());
    for _ in 0..probes {
        let x = problem.probe_point(&mut rng);
        for &alpha in alphas {
            reports.push(estimate_step_moments(problem, variant, &x, alpha, dist, n, &mut rng)?);
        }
    }
    fit_variance_model(&reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::Quadratic;
    use crate::rng::setup_rng;

    fn grid_reports(q: &Quadratic, seed: u64, n: usize) -> Vec<StepMomentReport> {
        let dist = DirectionDistribution::uniform(q.dim()).unwrap();
        let mut rng = setup_rng(seed);
        let mut out = Vec::new();
        for scale in [0.25, 0.5, 1.0, 2.0] {
            for alpha in [0.01, 0.02] {
                let x: Vec<f64> = q.minimizer().iter().map(|v| v + scale).collect();
                out.push(estimate_step_moments(q, StepVariant::SingleSample, &x, alpha, &dist, n, &mut rng).unwrap());
            }
        }
        out
    }

    #[test]
    fn decomposition_identity_holds() {
        let q = Quadratic::with_condition(4, 4.0, 0.3, 1).unwrap();
        for r in grid_reports(&q, 2, 2000) {
            assert!(r.variance >= 0.0);
            assert!(r.decomposition_error().abs() <= 1e-9 * r.second_moment.max(1e-300));
        }
    }

    #[test]
    fn minimizer_of_noiseless_quadratic() {
        // E[s] = −(α²/2) E[(ζᵀΛζ)ζ] = 0 for a symmetric law, V[s] = Θ(α⁴)
        let q = Quadratic::with_condition(3, 3.0, 0.0, 4).unwrap();
        let dist = DirectionDistribution::uniform(3).unwrap();
        let x = q.minimizer().to_vec();
        let mut rng = setup_rng(5);
        let a = estimate_step_moments(&q, StepVariant::SingleSample, &x, 0.1, &dist, 20_000, &mut rng).unwrap();
        let b = estimate_step_moments(&q, StepVariant::SingleSample, &x, 0.05, &dist, 20_000, &mut rng).unwrap();
        let ratio = a.variance / b.variance;
        assert!((12.0..20.0).contains(&ratio), "{ratio}");
        let se = (a.variance / 20_000.0).sqrt();
        assert!(norm_sq(&a.mean).sqrt() < 5.0 * se);
    }

    #[test]
    fn decrease_bound_dominates_observed() {
        let q = Quadratic::with_condition(4, 4.0, 0.3, 6).unwrap();
        let dist = DirectionDistribution::uniform(4).unwrap();
        let mut rng = setup_rng(7);
        for _ in 0..20 {
            let x: Vec<f64> = q.minimizer().iter().map(|v| v + rng.random_range(-2.0..2.0)).collect();
            let r = estimate_step_moments(&q, StepVariant::SingleSample, &x, 0.02, &dist, 2000, &mut rng).unwrap();
            // on a quadratic the bound holds sample by sample, so only roundoff can flip it
            let bound = r.decrease_bound.unwrap();
            assert!(r.observed_decrease <= bound + 1e-9 * (1.0 + bound.abs()), "{r:?}");
        }
    }

    #[test]
    fn fitted_constants_respond_to_noise() {
        let mut ms = Vec::new();
        for noise in [0.0, 0.1, 1.0] {
            let q = Quadratic::with_condition(4, 4.0, noise, 8).unwrap();
            let fit = fit_variance_model(&grid_reports(&q, 9, 4000)).unwrap();
            assert!(fit.m >= 0.0 && fit.m_v > 0.0);
            assert!(fit.max_relative_residual < 0.1, "{fit:?}");
            ms.push(fit.m);
        }
        assert!(ms[0] < ms[1] && ms[1] < ms[2], "{ms:?}");
    }

    #[test]
    fn rejects_small_samples_and_degenerate_grids() {
        let q = Quadratic::with_condition(2, 2.0, 0.1, 1).unwrap();
        let dist = DirectionDistribution::uniform(2).unwrap();
        let x = q.initial_point();
        let mut rng = setup_rng(1);
        assert!(estimate_step_moments(&q, StepVariant::SingleSample, &x, 0.1, &dist, 10, &mut rng).is_err());
        let r = estimate_step_moments(&q, StepVariant::SingleSample, &x, 0.1, &dist, 1000, &mut rng).unwrap();
        let same = vec![r.clone(), StepMomentReport { alpha: 0.2, ..r }];
        assert!(matches!(fit_variance_model(&same), Err(Error::Fit(_))));
    }

    #[test]
    fn probe_grid_fit() {
        let q = Quadratic::with_condition(3, 3.0, 0.5, 2).unwrap();
        let dist = DirectionDistribution::uniform(3).unwrap();
        let a = probe_variance_model(&q, StepVariant::SingleSample, &dist, &[0.05, 0.01], 6, 2000, 3).unwrap();
        let b = probe_variance_model(&q, StepVariant::SingleSample, &dist, &[0.05, 0.01], 6, 2000, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.points, 12);
        assert!(a.m > 0.0);
    }

    #[test]
    fn derived_constants() {
        let dist = DirectionDistribution::uniform(2).unwrap();
        let dz = dist.moment_constants().d_zeta;
        assert_eq!(noise_constant(1.0, &dist), 1.0 + 1.25 * 8.0 * dz * dz);
        assert_eq!(growth_constant(1.0), 3.0);
    }
}
