//! Named invariant checks with their measured statistic and threshold.

use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::acceptance::{run_criterion, CRITERIA};
use crate::analysis::{bound_a, bound_b, fit_power_law, fixed_bound_b, BoundParams};
use crate::directions::{DirectionDistribution, DirectionKind};
use crate::error::{Error, Result};
use crate::linalg::{axpy, norm};
use crate::momentum::{DecayMode, MomentumState};
use crate::problems::Quadratic;
use crate::rng::setup_rng;
use crate::schedule::StepsizeSchedule;
use crate::sgfd::{run_sgfd, RunConfig};
use crate::trace::Trace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Level {
    /// Sub-minute Monte-Carlo checks with reduced sample counts.
    Fast,
    /// The fast checks plus every acceptance criterion.
    Full,
}

/// Deliberate bugs for mutation-testing the suite itself.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Faults {
    /// Multiplies every direction draw.
    pub direction_scale: Option<f64>,
    /// Uses the raw accumulator `v_k` in place of `m_k = v_k / W_k`.
    pub drop_normalization: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub statistic: f64,
    /// Human-readable pass condition, e.g. `< 0.02`.
    pub threshold: String,
    pub passed: bool,
}

impl Check {
    pub fn below(name: impl Into<String>, statistic: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            statistic,
            threshold: format!("< {limit:e}"),
            passed: statistic < limit,
        }
    }

    pub fn at_most(name: impl Into<String>, statistic: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            statistic,
            threshold: format!("<= {limit:e}"),
            passed: statistic <= limit,
        }
    }

    pub fn at_least(name: impl Into<String>, statistic: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            statistic,
            threshold: format!(">= {limit}"),
            passed: statistic >= limit,
        }
    }

    pub fn within(name: impl Into<String>, statistic: f64, lo: f64, hi: f64) -> Self {
        Self {
            name: name.into(),
            statistic,
            threshold: format!("in [{lo}, {hi}]"),
            passed: (lo..=hi).contains(&statistic),
        }
    }

    pub fn holds(name: impl Into<String>, ok: bool) -> Self {
        Self {
            name: name.into(),
            statistic: if ok { 1.0 } else { 0.0 },
            threshold: "holds".into(),
            passed: ok,
        }
    }

    pub fn failed(name: impl Into<String>, err: &Error) -> Self {
        Self {
            name: name.into(),
            statistic: f64::NAN,
            threshold: format!("error: {err}"),
            passed: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub level: Level,
    pub checks: Vec<Check>,
    pub elapsed_secs: f64,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

pub fn verify_suite(level: Level) -> VerifyReport {
    verify_suite_with(level, Faults::default())
}

pub fn verify_suite_with(level: Level, faults: Faults) -> VerifyReport {
    let start = Instant::now();
    let mut checks = Vec::new();
    for kind in [DirectionKind::UniformSymmetric, DirectionKind::StandardNormal] {
        for d in [2, 8] {
            direction_checks(kind, d, 200_000, faults, &mut checks);
        }
    }
    weight_sum_checks(faults, &mut checks);
    collect("momentum recursion matches closed form", recursion_check(), &mut checks);
    collect("bounds match product and sum oracles", bound_oracle_check(), &mut checks);
    checks.push(Check::below(
        "fixed-stepsize B_k limit alpha/l",
        (fixed_bound_b(0.1, 1.0, 1_000_000) - 0.1).abs(),
        1e-6,
    ));
    collect("rate fit recovers exact exponent", exact_rate_check(), &mut checks);
    collect("short run: CSV round trip and decrease", short_run_checks(), &mut checks);
    if level == Level::Full {
        for &(id, _) in CRITERIA {
            let outcome = run_criterion(id);
            checks.extend(outcome.checks.into_iter().map(|c| Check {
                name: format!("criterion {id}: {}", c.name),
                ..c
            }));
        }
    }
    VerifyReport {
        level,
        checks,
        elapsed_secs: start.elapsed().as_secs_f64(),
    }
}

fn collect(name: &str, result: Result<Vec<Check>>, out: &mut Vec<Check>) {
    match result {
        Ok(c) => out.extend(c),
        Err(e) => out.push(Check::failed(name, &e)),
    }
}

fn kind_name(kind: DirectionKind) -> &'static str {
    match kind {
        DirectionKind::UniformSymmetric => "uniform",
        DirectionKind::StandardNormal => "normal",
    }
}

/// Mean, covariance, reconstruction of `e₁` and third-moment norm, all
/// from the same `n` (possibly fault-scaled) draws.
fn direction_checks(kind: DirectionKind, d: usize, n: usize, faults: Faults, out: &mut Vec<Check>) {
    let dist = DirectionDistribution::new(kind, d).expect("positive dimension");
    let mut rng = setup_rng(d as u64);
    let scale = faults.direction_scale.unwrap_or(1.0);
    let mut z = vec![0.0; d];
    let mut mean = vec![0.0; d];
    let mut second = vec![0.0; d * d];
    let mut third = vec![0.0; d];
    for _ in 0..n {
        dist.sample_into(&mut rng, &mut z);
        z.iter_mut().for_each(|v| *v *= scale);
        axpy(1.0, &z, &mut mean);
        for i in 0..d {
            axpy(z[i], &z, &mut second[i * d..(i + 1) * d]);
        }
        let sq = z.iter().map(|v| v * v).sum::<f64>();
        axpy(sq, &z, &mut third);
    }
    let nf = n as f64;
    let mut worst_cov: f64 = 0.0;
    for i in 0..d {
        for j in 0..d {
            let cov = second[i * d + j] / nf - mean[i] * mean[j] / (nf * nf);
            worst_cov = worst_cov.max((cov - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }
    let max_mean = mean.iter().fold(0.0f64, |m, v| m.max((v / nf).abs()));
    // (1/n) Σ (e₁ᵀζ)ζ is the first column of the second-moment matrix
    let recon: f64 = (0..d)
        .map(|i| {
            let v = second[i * d] / nf - if i == 0 { 1.0 } else { 0.0 };
            v * v
        })
        .sum::<f64>()
        .sqrt();
    let tag = format!("{} d={d}", kind_name(kind));
    out.push(Check::below(format!("{tag}: componentwise mean"), max_mean, 4.0 / nf.sqrt()));
    out.push(Check::below(format!("{tag}: unit covariance"), worst_cov, 0.02));
    out.push(Check::below(format!("{tag}: reconstruction of e1"), recon, 0.02));
    out.push(Check::at_most(
        format!("{tag}: third-moment norm"),
        norm(&third) / nf,
        dist.third_moment_bound() * (1.0 + 5.0 / nf.sqrt()),
    ));
}

/// Feeding `s_k/α_k = 1` into the momentum recursion must return `m_k = 1`
/// because the weights sum to one.
fn weight_sum_checks(faults: Faults, out: &mut Vec<Check>) {
    for (label, mode) in [
        ("p=1", DecayMode::Changing { p: 1.0 }),
        ("p=2", DecayMode::Changing { p: 2.0 }),
        ("gamma=0.9", DecayMode::Fixed { gamma: 0.9 }),
    ] {
        let name = format!("momentum weights sum to one ({label})");
        let mut state = MomentumState::new(mode, 2).expect("valid mode");
        let mut worst: f64 = 0.0;
        for k in 1..=1000u64 {
            let alpha = 1.0 / (k as f64 + 10.0);
            if let Err(e) = state.update_direction(&[alpha, alpha], alpha) {
                out.push(Check::failed(name.clone(), &e));
                break;
            }
            let m = if faults.drop_normalization {
                state.accumulator()
            } else {
                state.direction()
            };
            worst = m.iter().fold(worst, |w, v| w.max((v - 1.0).abs()));
        }
        out.push(Check::below(name, worst, 1e-12));
    }
}

fn recursion_check() -> Result<Vec<Check>> {
    let mut rng = setup_rng(11);
    let mut out = Vec::new();
    for p in [0.5, 1.0, 2.0, 4.0] {
        let mut state = MomentumState::new(DecayMode::Changing { p }, 3)?;
        let mut sum = [0.0; 3];
        let mut worst: f64 = 0.0;
        for k in 1..=1000u64 {
            let alpha = 0.5 / (k as f64 + 3.0);
            let s: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            state.update_direction(&s, alpha)?;
            let kf = k as f64;
            for i in 0..3 {
                sum[i] += kf.powf(p) * s[i] / alpha;
            }
            let scale = (kf + 1.0).powf(-p);
            for (v, acc) in state.accumulator().iter().zip(&sum) {
                let want = scale * acc;
                worst = worst.max((v - want).abs() / want.abs().max(1e-300));
            }
        }
        out.push(Check::below(format!("momentum recursion matches closed form (p={p})"), worst, 1e-10));
    }
    Ok(out)
}

fn bound_oracle_check() -> Result<Vec<Check>> {
    let mut worst: f64 = 0.0;
    for (beta, sigma, l) in [(1.5, 1.0, 1.0), (2.0, 59.0, 1.0), (0.7, 3.5, 2.3), (5.0, 149.0, 1.0), (0.3, 0.5, 4.0)] {
        let k = 2000;
        let params = BoundParams::new(beta, sigma, l, k)?;
        let (mut prod, mut sum) = (1.0, 0.0);
        for i in 1..=k {
            let a = beta / (i as f64 + sigma);
            let f = 1.0 - a * l;
            prod *= f;
            sum = sum * f + a * a;
        }
        worst = worst.max(((bound_a(&params)? - prod) / prod).abs());
        worst = worst.max(((bound_b(&params)? - sum) / sum).abs());
    }
    Ok(vec![Check::below("bounds match product and sum oracles", worst, 1e-10)])
}

fn exact_rate_check() -> Result<Vec<Check>> {
    let ks: Vec<u64> = (1..=1000).map(|i| i * 10).collect();
    let ys: Vec<f64> = ks.iter().map(|&k| 7.0 / k as f64).collect();
    let fit = fit_power_law(&ks, &ys, (1000, 10_000))?;
    Ok(vec![Check::below("rate fit recovers exact exponent", (fit.slope + 1.0).abs(), 1e-6)])
}

fn short_run_checks() -> Result<Vec<Check>> {
    let q = Arc::new(Quadratic::with_condition(4, 4.0, 0.2, 3)?);
    let config = RunConfig::new(q, StepsizeSchedule::robbins_monro_matched(2.0, 4.0, 3.0)?)
        .iterations(2000)
        .replications(8)
        .record_stride(10)
        .seed(3);
    let trace = run_sgfd(&config)?;
    let text = trace.to_csv_string()?;
    let back = Trace::read_csv(text.as_bytes())?;
    let exact = back.rows.len() == trace.rows.len()
        && back.rows.iter().zip(&trace.rows).all(|(a, b)| {
            a.k == b.k
                && a.alpha.to_bits() == b.alpha.to_bits()
                && a.mean_gap.to_bits() == b.mean_gap.to_bits()
                && a.mean_grad_sq.to_bits() == b.mean_grad_sq.to_bits()
                && a.replications == b.replications
        });
    let last = trace.last().expect("non-empty trace").mean_gap;
    Ok(vec![
        Check::holds("CSV round trip is lossless", exact),
        Check::below("short run: final gap / initial gap", last / trace.meta.initial_gap, 0.1),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fast(faults: Faults) -> VerifyReport {
        verify_suite_with(Level::Fast, faults)
    }

    #[test]
    fn fast_suite_passes_on_correct_build() {
        let r = fast(Faults::default());
        let failed: Vec<_> = r.failures().collect();
        assert!(failed.is_empty(), "{failed:#?}");
        assert!(r.checks.iter().any(|c| c.name.contains("unit covariance")));
    }

    #[test]
    fn scaled_directions_fail_covariance() {
        let r = fast(Faults {
            direction_scale: Some(1.1),
            ..Default::default()
        });
        let cov: Vec<_> = r.checks.iter().filter(|c| c.name.contains("unit covariance")).collect();
        assert_eq!(cov.len(), 4);
        assert!(cov.iter().all(|c| !c.passed));
    }

    #[test]
    fn dropped_normalization_fails_weight_sum() {
        let r = fast(Faults {
            drop_normalization: true,
            ..Default::default()
        });
        let w: Vec<_> = r.checks.iter().filter(|c| c.name.contains("weights sum")).collect();
        assert_eq!(w.len(), 3);
        assert!(w.iter().all(|c| !c.passed));
        assert!(r.checks.iter().filter(|c| c.name.contains("covariance")).all(|c| c.passed));
    }
}
