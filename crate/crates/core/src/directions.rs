//! Random search directions with zero mean and identity covariance.
//!
//! Two laws are provided: the standard normal and the uniform law on
//! `[-√3, √3]^d`. Both have unit variance per component, so for any fixed
//! vector `ω` the identity `E[(ωᵀζ)ζ] = ω` holds, which is what turns a
//! finite difference along `ζ` into a gradient estimate.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{axpy, dot, norm, norm_sq, sub};

const SQRT_3: f64 = 1.732_050_807_568_877_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DirectionKind {
    StandardNormal,
    /// Uniform on `[-√3, √3]` per component.
    #[default]
    UniformSymmetric,
}

/// Closed-form moment constants of a direction law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentConstants {
    /// Componentwise bound; `None` for unbounded laws.
    pub r_zeta: Option<f64>,
    /// Componentwise fourth moment.
    pub m4: f64,
    /// `min(r_zeta, sqrt(1 + m4/d - 1/d))`.
    pub d_zeta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionDistribution {
    kind: DirectionKind,
    dim: usize,
}

impl DirectionDistribution {
    pub fn new(kind: DirectionKind, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dim", "direction dimension must be at least 1"));
        }
        Ok(Self { kind, dim })
    }

    pub fn uniform(dim: usize) -> Result<Self> {
        Self::new(DirectionKind::UniformSymmetric, dim)
    }

    pub fn normal(dim: usize) -> Result<Self> {
        Self::new(DirectionKind::StandardNormal, dim)
    }

    pub fn kind(&self) -> DirectionKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Fills `out` with one draw of the direction.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        match self.kind {
            DirectionKind::StandardNormal => {
                for v in out.iter_mut() {
                    *v = StandardNormal.sample(rng);
                }
            }
            DirectionKind::UniformSymmetric => {
                let law = Uniform::new_inclusive(-SQRT_3, SQRT_3).expect("valid bounds");
                for v in out.iter_mut() {
                    *v = law.sample(rng);
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.sample_into(rng, &mut out);
        out
    }

    pub fn moment_constants(&self) -> MomentConstants {
        let d = self.dim as f64;
        let (r_zeta, m4) = match self.kind {
            DirectionKind::StandardNormal => (None, 3.0),
            DirectionKind::UniformSymmetric => (Some(SQRT_3), 9.0 / 5.0),
        };
        let moment_route = (1.0 + m4 / d - 1.0 / d).sqrt();
        let d_zeta = r_zeta.map_or(moment_route, |r| r.min(moment_route));
        MomentConstants { r_zeta, m4, d_zeta }
    }

    /// `d^{3/2} · D_ζ`, the bound on `‖E[(ζᵀζ)ζ]‖₂`.
    pub fn third_moment_bound(&self) -> f64 {
        (self.dim as f64).powf(1.5) * self.moment_constants().d_zeta
    }
}

/// `‖(1/n) Σ (ωᵀζᵢ)ζᵢ − ω‖₂` over `n` fresh draws.
pub fn reconstruction_error<R: Rng + ?Sized>(
    dist: &DirectionDistribution,
    omega: &[f64],
    n_samples: usize,
    rng: &mut R,
) -> Result<f64> {
    if omega.len() != dist.dim() {
        return Err(Error::DimensionMismatch {
            expected: dist.dim(),
            actual: omega.len(),
        });
    }
    if n_samples == 0 {
        return Err(invalid("n_samples", "must be at least 1"));
    }
    let mut acc = vec![0.0; dist.dim()];
    let mut z = vec![0.0; dist.dim()];
    for _ in 0..n_samples {
        dist.sample_into(rng, &mut z);
        axpy(dot(omega, &z), &z, &mut acc);
    }
    acc.iter_mut().for_each(|v| *v /= n_samples as f64);
    Ok(norm(&sub(&acc, omega)))
}

/// `‖(1/n) Σ (ζᵢᵀζᵢ)ζᵢ‖₂` over `n` fresh draws.
pub fn third_moment_norm<R: Rng + ?Sized>(
    dist: &DirectionDistribution,
    n_samples: usize,
    rng: &mut R,
) -> Result<f64> {
    if n_samples == 0 {
        return Err(invalid("n_samples", "must be at least 1"));
    }
    let mut acc = vec![0.0; dist.dim()];
    let mut z = vec![0.0; dist.dim()];
    for _ in 0..n_samples {
        dist.sample_into(rng, &mut z);
        axpy(norm_sq(&z), &z, &mut acc);
    }
    acc.iter_mut().for_each(|v| *v /= n_samples as f64);
    Ok(norm(&acc))
}

/// Empirical first, second and fourth moments of a stream of vectors.
#[derive(Debug, Clone)]
pub struct MomentSummary {
    pub n: usize,
    pub mean: Vec<f64>,
    /// Row-major `d × d` second-moment matrix `(1/n) Σ ζζᵀ`.
    pub second: Vec<f64>,
    pub fourth: Vec<f64>,
}

impl MomentSummary {
    pub fn from_draws<I>(dim: usize, draws: I) -> Self
    where
        I: IntoIterator<Item = Vec<f64>>,
    {
        let mut n = 0usize;
        let mut mean = vec![0.0; dim];
        let mut second = vec![0.0; dim * dim];
        let mut fourth = vec![0.0; dim];
        for z in draws {
            n += 1;
            for i in 0..dim {
                mean[i] += z[i];
                fourth[i] += z[i].powi(4);
                let row = &mut second[i * dim..(i + 1) * dim];
                for (j, s) in row.iter_mut().enumerate() {
                    *s += z[i] * z[j];
                }
            }
        }
        let nf = n.max(1) as f64;
        for v in mean.iter_mut().chain(second.iter_mut()).chain(fourth.iter_mut()) {
            *v /= nf;
        }
        Self {
            n,
            mean,
            second,
            fourth,
        }
    }

    /// Largest `|mean_i|`.
    pub fn max_abs_mean(&self) -> f64 {
        self.mean.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest entrywise deviation of the covariance from the identity.
    pub fn max_covariance_deviation(&self) -> f64 {
        let d = self.mean.len();
        let mut worst: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                let cov = self.second[i * d + j] - self.mean[i] * self.mean[j];
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((cov - target).abs());
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::setup_rng;
    use approx::assert_relative_eq;

    #[test]
    fn zero_dimension_rejected() {
        assert!(DirectionDistribution::uniform(0).is_err());
    }

    #[test]
    fn uniform_draws_stay_in_support() {
        let dist = DirectionDistribution::uniform(3).unwrap();
        let mut rng = setup_rng(1);
        for _ in 0..10_000 {
            for v in dist.sample(&mut rng) {
                assert!(v.abs() <= SQRT_3);
            }
        }
    }

    fn fourth_moment_check(dist: DirectionDistribution, expected: f64, seed: u64) {
        let n = 1_000_000usize;
        let mut rng = setup_rng(seed);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let t = dist.sample(&mut rng)[0].powi(4);
            sum += t;
            sum_sq += t * t;
        }
        let mean = sum / n as f64;
        let se = ((sum_sq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - expected).abs() < 3.0 * se, "mean {mean} expected {expected} se {se}");
    }

    #[test]
    fn normal_fourth_moment_is_three() {
        fourth_moment_check(DirectionDistribution::normal(1).unwrap(), 3.0, 11);
    }

    #[test]
    fn uniform_fourth_moment_is_nine_fifths() {
        // (1/(2√3)) ∫ t⁴ dt over [-√3, √3] = (√3)^4 / 5
        let oracle = SQRT_3.powi(4) / 5.0;
        assert_relative_eq!(oracle, 1.8, epsilon = 1e-12);
        fourth_moment_check(DirectionDistribution::uniform(1).unwrap(), oracle, 12);
    }

    #[test]
    fn moment_constants_examples() {
        let c = DirectionDistribution::normal(2).unwrap().moment_constants();
        assert_eq!(c.r_zeta, None);
        assert_relative_eq!(c.d_zeta, 2f64.sqrt(), epsilon = 1e-15);

        let c = DirectionDistribution::uniform(1).unwrap().moment_constants();
        assert_relative_eq!(c.d_zeta, 1.8f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(c.d_zeta, 1.3416, epsilon = 1e-4);

        let c = DirectionDistribution::uniform(100_000).unwrap().moment_constants();
        assert_relative_eq!(c.d_zeta, 1.0, epsilon = 1e-5);
    }

    #[test]
    fn reconstruction_of_zero_is_exact() {
        let dist = DirectionDistribution::normal(4).unwrap();
        let mut rng = setup_rng(2);
        for n in [1, 10, 1000] {
            assert_eq!(reconstruction_error(&dist, &[0.0; 4], n, &mut rng).unwrap(), 0.0);
        }
    }

    #[test]
    fn reconstruction_dimension_mismatch() {
        let dist = DirectionDistribution::normal(4).unwrap();
        let err = reconstruction_error(&dist, &[1.0; 3], 10, &mut setup_rng(0)).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 4, actual: 3 }));
    }

    #[test]
    fn reconstruction_of_basis_vector() {
        let dist = DirectionDistribution::normal(4).unwrap();
        let err = reconstruction_error(&dist, &[1.0, 0.0, 0.0, 0.0], 1_000_000, &mut setup_rng(3)).unwrap();
        assert!(err < 0.01, "{err}");
    }

    #[test]
    fn reconstruction_error_shrinks_with_more_samples() {
        let dist = DirectionDistribution::normal(4).unwrap();
        let e1 = [1.0, 0.0, 0.0, 0.0];
        let wins = (0..20)
            .filter(|&seed| {
                let small = reconstruction_error(&dist, &e1, 10_000, &mut setup_rng(100 + seed)).unwrap();
                let large = reconstruction_error(&dist, &e1, 1_000_000, &mut setup_rng(200 + seed)).unwrap();
                large < small
            })
            .count();
        assert!(wins >= 18, "{wins}");
    }

    #[test]
    fn third_moment_examples() {
        // Symmetric laws have a zero third-moment vector.
        let uni = DirectionDistribution::uniform(3).unwrap();
        let coarse = third_moment_norm(&uni, 1_000, &mut setup_rng(4)).unwrap();
        let fine = third_moment_norm(&uni, 1_000_000, &mut setup_rng(5)).unwrap();
        assert!(fine < coarse);
        assert!(fine < 0.05, "{fine}");

        let n = 1_000_000;
        let gauss = DirectionDistribution::normal(3).unwrap();
        let value = third_moment_norm(&gauss, n, &mut setup_rng(6)).unwrap();
        let bound = 3f64.powf(1.5) * (5.0f64 / 3.0).sqrt();
        assert_relative_eq!(gauss.third_moment_bound(), bound, epsilon = 1e-12);
        assert!(value <= bound * (1.0 + 5.0 / (n as f64).sqrt()));

        let g1 = DirectionDistribution::normal(1).unwrap();
        assert!(third_moment_norm(&g1, n, &mut setup_rng(7)).unwrap() < 0.03);
    }

    #[test]
    fn identical_seeds_give_identical_streams() {
        for dist in [DirectionDistribution::normal(5).unwrap(), DirectionDistribution::uniform(5).unwrap()] {
            let (mut a, mut b) = (setup_rng(9), setup_rng(9));
            for _ in 0..100 {
                let (x, y) = (dist.sample(&mut a), dist.sample(&mut b));
                assert_eq!(
                    x.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                    y.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
                );
            }
        }
    }

    #[test]
    fn covariance_is_identity() {
        for dist in [DirectionDistribution::normal(8).unwrap(), DirectionDistribution::uniform(8).unwrap()] {
            let n = 200_000;
            let mut rng = setup_rng(21);
            let summary = MomentSummary::from_draws(8, (0..n).map(|_| dist.sample(&mut rng)));
            assert!(summary.max_abs_mean() < 4.0 / (n as f64).sqrt());
            assert!(summary.max_covariance_deviation() < 0.03);
        }
    }
}
