//! Momentum-accelerated SGFD: `x_{k+1} = x_k + α_k m_k`, where `m_k` is a
//! normalized weighted average of the past normalized steps `s_j/α_j`.
//!
//! With the changing decay factor `γ(k) = (k/(k+1))^p` the product
//! `γ(j)⋯γ(k)` telescopes to `j^p/(k+1)^p`, so
//!
//! ```text
//! m_k = Σ_j j^p (s_j/α_j) / Σ_j j^p
//! ```
//!
//! The state keeps the unnormalized accumulator `v_k` and the matching
//! weight total `W_k`, both updated as `u ← γ(k)(u + new)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::directions::DirectionDistribution;
use crate::error::{invalid, Error, Result};
use crate::linalg::{all_finite, axpy, norm_sq, sub};
use crate::rng::{iteration_rng, StreamRng};
use crate::schedule::Method;
use crate::sgfd::{run_engine, RunConfig, Stepper};
use crate::step::stochastic_step;
use crate::trace::Trace;

/// Default exponent of the changing decay factor.
pub const DEFAULT_P: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DecayMode {
    /// `γ(k) = (k/(k+1))^p`
    Changing { p: f64 },
    /// Constant `γ ∈ (0, 1)`.
    Fixed { gamma: f64 },
}

impl Default for DecayMode {
    fn default() -> Self {
        DecayMode::Changing { p: DEFAULT_P }
    }
}

impl DecayMode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DecayMode::Changing { p } if !(p > 0.0) || !p.is_finite() => {
                Err(invalid("p", format!("decay exponent must be positive, got {p}")))
            }
            DecayMode::Fixed { gamma } if !(gamma > 0.0 && gamma < 1.0) => {
                Err(invalid("gamma", format!("fixed decay factor must lie in (0, 1), got {gamma}")))
            }
            _ => Ok(()),
        }
    }

    /// `γ(k)` for `k ≥ 1`.
    pub fn gamma(&self, k: u64) -> f64 {
        match *self {
            DecayMode::Changing { p } => changing_gamma(k, p),
            DecayMode::Fixed { gamma } => gamma,
        }
    }
}

fn changing_gamma(k: u64, p: f64) -> f64 {
    let kf = k as f64;
    (kf / (kf + 1.0)).powf(p)
}

/// `(k/(k+1))^p`.
pub fn decay_factor(k: u64, p: f64) -> Result<f64> {
    if k == 0 {
        return Err(invalid("k", "iterations are numbered from 1"));
    }
    DecayMode::Changing { p }.validate()?;
    Ok(changing_gamma(k, p))
}

/// Normalized weights `w_j`, `j = 1..k`, that `m_k` places on `s_j/α_j`.
pub fn weights(mode: DecayMode, k: u64) -> Result<Vec<f64>> {
    mode.validate()?;
    // ∏_{l=j..k} γ(l), built from the back
    let mut raw = vec![0.0; k as usize];
    let mut prod = 1.0;
    for j in (1..=k).rev() {
        prod *= mode.gamma(j);
        raw[j as usize - 1] = prod;
    }
    let total: f64 = raw.iter().sum();
    raw.iter_mut().for_each(|w| *w /= total);
    Ok(raw)
}

/// `Σ w_j²`, the factor by which averaging shrinks the variance of
/// independent, equal-variance steps.
pub fn weight_concentration(mode: DecayMode, k: u64) -> Result<f64> {
    Ok(weights(mode, k)?.iter().map(|w| w * w).sum())
}

/// Closed form of [`weight_concentration`] for a fixed `γ`:
/// `(1−γ)/(1+γ) · (1+γ^k)/(1−γ^k)`.
pub fn fixed_weight_concentration(gamma: f64, k: u64) -> f64 {
    let gk = gamma.powi(k.min(i32::MAX as u64) as i32);
    (1.0 - gamma) / (1.0 + gamma) * (1.0 + gk) / (1.0 - gk)
}

/// Accumulator for the weighted-average direction.
#[derive(Debug, Clone)]
pub struct MomentumState {
    mode: DecayMode,
    k: u64,
    v: Vec<f64>,
    weight: f64,
    m: Vec<f64>,
}

impl MomentumState {
    pub fn new(mode: DecayMode, dim: usize) -> Result<Self> {
        mode.validate()?;
        Ok(Self {
            mode,
            k: 0,
            v: vec![0.0; dim],
            weight: 0.0,
            m: vec![0.0; dim],
        })
    }

    /// Number of steps absorbed so far.
    pub fn k(&self) -> u64 {
        self.k
    }

    /// Unnormalized accumulator `v_k`.
    pub fn accumulator(&self) -> &[f64] {
        &self.v
    }

    /// `W_k = Σ_j ∏_{l=j..k} γ(l)`.
    pub fn weight(&self) -> f64 {
        self.weight
    }

    /// The current `m_k`.
    pub fn direction(&self) -> &[f64] {
        &self.m
    }

    /// Absorbs step `s_k` taken with stepsize `α_k` and returns `m_k`.
    pub fn update_direction(&mut self, step: &[f64], alpha: f64) -> Result<&[f64]> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(invalid("alpha", format!("must be positive and finite, got {alpha}")));
        }
        if step.len() != self.v.len() {
            return Err(Error::DimensionMismatch {
                expected: self.v.len(),
                actual: step.len(),
            });
        }
        if !all_finite(step) {
            return Err(Error::NonFinite("momentum step".into()));
        }
        self.k += 1;
        let g = self.mode.gamma(self.k);
        for (vi, si) in self.v.iter_mut().zip(step) {
            *vi = g * (*vi + si / alpha);
        }
        self.weight = g * (self.weight + 1.0);
        for (mi, vi) in self.m.iter_mut().zip(&self.v) {
            *mi = vi / self.weight;
        }
        Ok(&self.m)
    }
}

struct MomentumStepper<'a> {
    config: &'a RunConfig,
    dist: DirectionDistribution,
    state: MomentumState,
}

impl Stepper for MomentumStepper<'_> {
    fn advance(&mut self, k: u64, x: &[f64], alpha: f64, rng: &mut StreamRng) -> Result<Vec<f64>> {
        let s = stochastic_step(self.config.variant, self.config.problem.as_ref(), x, alpha, &self.dist, rng)?;
        let m = self.state.update_direction(&s, alpha)?;
        if k == 1 {
            // m₁ = s₁/α₁; use s₁ itself so x₂ matches the plain iteration bit for bit
            return Ok(s);
        }
        Ok(m.iter().map(|v| alpha * v).collect())
    }

    fn direction(&self) -> Option<&[f64]> {
        Some(self.state.direction())
    }
}

/// Runs the accelerated iteration. Rows carry the across-replication
/// variance of `m_k` when there are at least two replications.
///
/// Diagnostics: `deviation_ratio` is `‖E[δ]‖² / E‖δ‖²` for
/// `δ = x_{K/2} − x_K` across replications, an empirical look at how much
/// of the iterate drift is systematic.
pub fn run_accelerated(config: &RunConfig, mode: DecayMode) -> Result<Trace> {
    mode.validate()?;
    let warnings = config.validate(Method::Momentum)?;
    let dist = config.distribution()?;
    let d = config.problem.dim();
    let out = run_engine(config, "momentum", warnings, || MomentumStepper {
        config,
        dist,
        state: MomentumState::new(mode, d).expect("validated above"),
    })?;
    let mut trace = out.trace;
    match mode {
        DecayMode::Changing { p } => trace.meta.diagnostics.insert("decay_p".into(), p),
        DecayMode::Fixed { gamma } => trace.meta.diagnostics.insert("decay_gamma".into(), gamma),
    };
    let rf = out.replications.len() as f64;
    let mut mean = vec![0.0; d];
    let mut second = 0.0;
    for rep in &out.replications {
        let delta = sub(&rep.x_mid, &rep.x_end);
        axpy(1.0 / rf, &delta, &mut mean);
        second += norm_sq(&delta) / rf;
    }
    if second > 0.0 {
        trace.meta.diagnostics.insert("deviation_ratio".into(), norm_sq(&mean) / second);
    }
    Ok(trace)
}

/// Where the frozen-trajectory diagnostic evaluates its steps.
#[derive(Debug, Clone, PartialEq)]
pub enum FrozenTrajectory {
    /// Every step is taken at the same point.
    Point(Vec<f64>),
    /// A path produced once by an accelerated run with the config's seed
    /// (replication 0), then replayed.
    Replay,
}

/// Result of [`frozen_direction_variance`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrozenVariance {
    pub ks: Vec<u64>,
    /// Across-replication variance of `m_k`.
    pub var_mk: Vec<f64>,
    /// Across-replication variance of the single normalized step
    /// `s_k/α_k`, pooled over the recorded `k`.
    pub step_variance: f64,
    /// `Σ w_j² · step_variance`, what independent equal-variance steps
    /// would give.
    pub predicted: Vec<f64>,
}

/// Variance of `m_k` with the trajectory held fixed, so that only the
/// samples and directions vary between replications.
pub fn frozen_direction_variance(
    config: &RunConfig,
    mode: DecayMode,
    trajectory: FrozenTrajectory,
) -> Result<FrozenVariance> {
    mode.validate()?;
    config.validate(Method::Momentum)?;
    if config.replications < 2 {
        return Err(invalid("replications", "variance needs at least 2 replications"));
    }
    let problem = config.problem.as_ref();
    let d = problem.dim();
    let dist = config.distribution()?;
    let k_max = config.iterations;

    let path: Vec<f64> = match trajectory {
        FrozenTrajectory::Point(x) => {
            if x.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: x.len(),
                });
            }
            x
        }
        FrozenTrajectory::Replay => {
            let mut state = MomentumState::new(mode, d)?;
            let mut x = config.start();
            let mut path = Vec::with_capacity(k_max as usize * d);
            for k in 1..=k_max {
                path.extend_from_slice(&x);
                let alpha = config.schedule.alpha(k);
                let mut rng = iteration_rng(config.seed, 0, k);
                let s = stochastic_step(config.variant, problem, &x, alpha, &dist, &mut rng)?;
                let m = state.update_direction(&s, alpha)?;
                axpy(if k == 1 { 1.0 } else { alpha }, if k == 1 { &s } else { m }, &mut x);
            }
            path
        }
    };
    let at = |k: u64| -> &[f64] {
        if path.len() == d {
            &path
        } else {
            &path[(k as usize - 1) * d..k as usize * d]
        }
    };

    let stride = config.record_stride;
    let n_rec = (k_max / stride) as usize;
    // replication r of the diagnostic uses stream r + 1; stream 0 built the replay path
    let reps: Vec<(Vec<f64>, Vec<f64>)> = (1..=config.replications)
        .into_par_iter()
        .map(|r| -> Result<(Vec<f64>, Vec<f64>)> {
            let mut state = MomentumState::new(mode, d)?;
            let mut ms = Vec::with_capacity(n_rec * d);
            let mut us = Vec::with_capacity(n_rec * d);
            for k in 1..=k_max {
                let alpha = config.schedule.alpha(k);
                let mut rng = iteration_rng(config.seed, r, k);
                let s = stochastic_step(config.variant, problem, at(k), alpha, &dist, &mut rng)?;
                let m = state.update_direction(&s, alpha)?;
                if k % stride == 0 {
                    ms.extend_from_slice(m);
                    us.extend(s.iter().map(|v| v / alpha));
                }
            }
            Ok((ms, us))
        })
        .collect::<Result<_>>()?;

    let (ms, us): (Vec<Vec<f64>>, Vec<Vec<f64>>) = reps.into_iter().unzip();
    let variance_at = |i: usize, rows: &[Vec<f64>]| {
        let rf = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for rep in rows {
            axpy(1.0 / rf, &rep[i * d..(i + 1) * d], &mut mean);
        }
        rows.iter()
            .map(|rep| norm_sq(&sub(&rep[i * d..(i + 1) * d], &mean)))
            .sum::<f64>()
            / (rf - 1.0)
    };
    let ks: Vec<u64> = (1..=n_rec as u64).map(|i| i * stride).collect();
    let var_mk: Vec<f64> = (0..n_rec).map(|i| variance_at(i, &ms)).collect();
    let step_variance = (0..n_rec).map(|i| variance_at(i, &us)).sum::<f64>() / n_rec.max(1) as f64;
    let predicted = ks
        .iter()
        .map(|&k| Ok(weight_concentration(mode, k)? * step_variance))
        .collect::<Result<_>>()?;
    Ok(FrozenVariance {
        ks,
        var_mk,
        step_variance,
        predicted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{Quadratic, StochasticProblem};
    use crate::rng::setup_rng;
    use crate::schedule::StepsizeSchedule;
    use crate::sgfd::run_sgfd;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use std::sync::Arc;

    #[test]
    fn decay_factor_examples() {
        assert_eq!(decay_factor(1, 1.0).unwrap(), 0.5);
        assert_eq!(decay_factor(3, 2.0).unwrap(), 0.5625);
        let prod = decay_factor(2, 1.0).unwrap() * decay_factor(3, 1.0).unwrap();
        assert_relative_eq!(prod, 0.5, epsilon = 1e-15);
        assert!(decay_factor(1, 0.0).is_err());
        assert!(decay_factor(1, -1.0).is_err());
        assert!(decay_factor(0, 1.0).is_err());
    }

    #[test]
    fn fixed_gamma_bounds() {
        assert!(DecayMode::Fixed { gamma: 1.0 }.validate().is_err());
        assert!(DecayMode::Fixed { gamma: 0.0 }.validate().is_err());
        assert!(DecayMode::Fixed { gamma: 0.9 }.validate().is_ok());
    }

    #[test]
    fn constant_inputs_give_constant_direction() {
        let mut st = MomentumState::new(DecayMode::default(), 2).unwrap();
        for k in 1..=50u64 {
            let alpha = 1.0 / (k as f64 + 3.0);
            let m = st.update_direction(&[2.0 * alpha, -alpha], alpha).unwrap();
            assert_relative_eq!(m[0], 2.0, max_relative = 1e-12);
            assert_relative_eq!(m[1], -1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn five_steps_match_closed_form() {
        let mut rng = setup_rng(1);
        let mut st = MomentumState::new(DecayMode::Changing { p: 2.0 }, 3).unwrap();
        let mut num = [0.0; 3];
        let mut den = 0.0;
        for j in 1..=5u64 {
            let alpha: f64 = rng.random_range(0.01..1.0);
            let s: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let m = st.update_direction(&s, alpha).unwrap().to_vec();
            let w = (j * j) as f64;
            for i in 0..3 {
                num[i] += w * s[i] / alpha;
            }
            den += w;
            for i in 0..3 {
                assert_relative_eq!(m[i], num[i] / den, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn rejects_bad_updates() {
        let mut st = MomentumState::new(DecayMode::default(), 2).unwrap();
        assert!(st.update_direction(&[1.0, 1.0], 0.0).is_err());
        assert!(st.update_direction(&[1.0, f64::NAN], 0.1).is_err());
        assert!(st.update_direction(&[1.0], 0.1).is_err());
        assert_eq!(st.k(), 0);
    }

    #[test]
    fn fixed_gamma_concentration_closed_form() {
        for k in [1u64, 2, 5, 40, 200] {
            let direct = weight_concentration(DecayMode::Fixed { gamma: 0.9 }, k).unwrap();
            assert_relative_eq!(direct, fixed_weight_concentration(0.9, k), max_relative = 1e-10);
        }
        assert_relative_eq!(fixed_weight_concentration(0.9, 10_000), 0.1 / 1.9, max_relative = 1e-12);
    }

    #[test]
    fn changing_decay_concentration_is_order_one_over_k() {
        for p in [1.0, 2.0] {
            let mut worst: f64 = 0.0;
            for k in [10u64, 100, 1000, 10_000, 100_000] {
                worst = worst.max(weight_concentration(DecayMode::Changing { p }, k).unwrap() * k as f64);
            }
            // asymptotically (p+1)²/(2p+1)
            assert!(worst <= 1.01 * (p + 1.0).powi(2) / (2.0 * p + 1.0) + 0.1, "p = {p}: {worst}");
        }
    }

    fn quad() -> Arc<dyn StochasticProblem> {
        Arc::new(Quadratic::with_condition(10, 10.0, 0.4, 1).unwrap())
    }

    #[test]
    fn first_iteration_matches_plain() {
        let p = quad();
        let s = StepsizeSchedule::robbins_monro_matched(5.0, 10.0, 3.0).unwrap();
        let cfg = RunConfig::new(p, s).iterations(1).replications(3).seed(42);
        let a = run_accelerated(&cfg, DecayMode::default()).unwrap();
        let b = run_sgfd(&cfg).unwrap();
        assert_eq!(a.rows[0].mean_gap.to_bits(), b.rows[0].mean_gap.to_bits());
        assert_eq!(a.step_stats, b.step_stats);
        assert!(a.rows[0].var_mk.is_some());
    }

    #[test]
    fn momentum_rejects_small_beta() {
        let p = quad();
        let s = StepsizeSchedule::robbins_monro_matched(2.0, 10.0, 3.0).unwrap();
        let err = run_accelerated(&RunConfig::new(p, s), DecayMode::default()).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)));
    }

    #[test]
    fn accelerated_run_records_variance_and_converges() {
        let p = quad();
        let s = StepsizeSchedule::robbins_monro_matched(5.0, 10.0, 3.0).unwrap();
        let cfg = RunConfig::new(p, s).iterations(2000).replications(6).record_stride(100);
        let t = run_accelerated(&cfg, DecayMode::default()).unwrap();
        assert!(t.rows.iter().all(|r| r.var_mk.unwrap() >= 0.0));
        assert!(t.last().unwrap().mean_gap < 0.01 * t.meta.initial_gap);
        assert!(t.meta.diagnostics.contains_key("deviation_ratio"));
    }

    #[test]
    fn clipping_keeps_iterates_in_ball() {
        let p = quad();
        let s = StepsizeSchedule::robbins_monro_matched(5.0, 10.0, 3.0).unwrap();
        let cfg = RunConfig::new(p, s).iterations(50).clip_radius(Some(0.05)).seed(3);
        let t = run_accelerated(&cfg, DecayMode::default()).unwrap();
        // ‖x − x*‖ ≥ ‖x₁ − x*‖ − 0.05 inside the ball and l = 1
        let floor = 0.5 * (10f64.sqrt() - 0.05).powi(2);
        assert!(t.rows.iter().all(|r| r.mean_gap >= floor * (1.0 - 1e-12)));
    }

    #[test]
    fn frozen_point_variance_shrinks() {
        let p = quad();
        let s = StepsizeSchedule::robbins_monro_matched(5.0, 10.0, 3.0).unwrap();
        let cfg = RunConfig::new(p.clone(), s).iterations(400).replications(200).record_stride(20);
        let fv = frozen_direction_variance(&cfg, DecayMode::default(), FrozenTrajectory::Point(p.initial_point())).unwrap();
        let last = *fv.var_mk.last().unwrap();
        let pred = *fv.predicted.last().unwrap();
        assert!(last < 0.1 * fv.step_variance);
        assert!((last / pred - 1.0).abs() < 0.3, "{last} vs {pred}");
        let replay = frozen_direction_variance(&cfg, DecayMode::default(), FrozenTrajectory::Replay).unwrap();
        assert!(*replay.var_mk.last().unwrap() < replay.var_mk[0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn recursion_matches_closed_form(
            p in prop::sample::select(vec![0.5, 1.0, 2.0, 4.0]),
            seed in any::<u64>(),
        ) {
            let mut rng = setup_rng(seed);
            let mut st = MomentumState::new(DecayMode::Changing { p }, 2).unwrap();
            let mut num = [0.0f64; 2];
            let mut den = 0.0;
            for j in 1..=1000u64 {
                let alpha: f64 = rng.random_range(1e-3..1.0);
                let s = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                st.update_direction(&s, alpha).unwrap();
                let w = (j as f64).powf(p);
                num[0] += w * s[0] / alpha;
                num[1] += w * s[1] / alpha;
                den += w;
                if j % 97 == 0 || j == 1000 {
                    let scale = (j as f64 + 1.0).powf(-p);
                    for (i, n) in num.iter().enumerate() {
                        let closed = scale * n;
                        let tol = 1e-10 * (scale * den * (1.0 / 1e-3));
                        prop_assert!((st.accumulator()[i] - closed).abs() <= tol.max(1e-10 * closed.abs()));
                    }
                    prop_assert!((st.weight() - scale * den).abs() <= 1e-10 * scale * den);
                }
            }
        }

        #[test]
        fn weights_nonnegative_and_sum_to_one(
            p in prop::sample::select(vec![0.5, 1.0, 2.0, 4.0]),
            k in 1u64..2000,
        ) {
            let w = weights(DecayMode::Changing { p }, k).unwrap();
            prop_assert!(w.iter().all(|v| *v >= 0.0));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            let total: f64 = (1..=k).map(|j| (j as f64).powf(p)).sum();
            let last = (k as f64).powf(p) / total;
            prop_assert!((w[k as usize - 1] - last).abs() <= 1e-12);
        }
    }
}
