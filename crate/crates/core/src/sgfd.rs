//! The plain SGFD iteration `x_{k+1} = x_k + s(x_k, ξ_k, α_k, ζ_k)` and the
//! shared replication engine also used by the momentum and SGD runners.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use crate::directions::{DirectionDistribution, DirectionKind};
use crate::error::{invalid, Error, Result};
use crate::linalg::{all_finite, axpy, norm_sq, sub};
use crate::problems::StochasticProblem;
use crate::rng::{iteration_rng, StreamRng};
use crate::schedule::{Method, StepsizeSchedule};
use crate::step::{stochastic_step, StepVariant};
use crate::trace::{StepStats, Trace, TraceMeta, TraceRow};

/// Multiple of `max(|F(x₁)|, 1)` beyond which a run counts as diverged.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

/// Everything a run needs besides the method-specific settings.
#[derive(Clone)]
pub struct RunConfig {
    pub problem: Arc<dyn StochasticProblem>,
    pub variant: StepVariant,
    pub schedule: StepsizeSchedule,
    pub directions: DirectionKind,
    pub iterations: u64,
    pub replications: u64,
    pub seed: u64,
    pub record_stride: u64,
    /// Projects iterates onto the ball of this radius around `x₁`.
    /// Momentum runs only.
    pub clip_radius: Option<f64>,
    /// Overrides the problem's default starting point.
    pub initial_point: Option<Vec<f64>>,
    /// Growth constant `M_G` for the first-step check; defaults per method.
    pub growth: Option<f64>,
}

impl std::fmt::Debug for RunConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RunConfig")
            .field("problem", &self.problem.name())
            .field("variant", &self.variant)
            .field("schedule", &self.schedule)
            .field("directions", &self.directions)
            .field("iterations", &self.iterations)
            .field("replications", &self.replications)
            .field("seed", &self.seed)
            .field("record_stride", &self.record_stride)
            .field("clip_radius", &self.clip_radius)
            .finish_non_exhaustive()
    }
}

impl RunConfig {
    pub fn new(problem: Arc<dyn StochasticProblem>, schedule: StepsizeSchedule) -> Self {
        Self {
            problem,
            variant: StepVariant::SingleSample,
            schedule,
            directions: DirectionKind::default(),
            iterations: 1000,
            replications: 1,
            seed: 0,
            record_stride: 1,
            clip_radius: None,
            initial_point: None,
            growth: None,
        }
    }

    pub fn variant(mut self, variant: StepVariant) -> Self {
        self.variant = variant;
        self
    }

    pub fn directions(mut self, kind: DirectionKind) -> Self {
        self.directions = kind;
        self
    }

    pub fn iterations(mut self, k: u64) -> Self {
        self.iterations = k;
        self
    }

    pub fn replications(mut self, r: u64) -> Self {
        self.replications = r;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn record_stride(mut self, stride: u64) -> Self {
        self.record_stride = stride;
        self
    }

    pub fn clip_radius(mut self, radius: Option<f64>) -> Self {
        self.clip_radius = radius;
        self
    }

    pub fn initial_point(mut self, x: Vec<f64>) -> Self {
        self.initial_point = Some(x);
        self
    }

    pub fn growth(mut self, growth: Option<f64>) -> Self {
        self.growth = growth;
        self
    }

    pub fn start(&self) -> Vec<f64> {
        self.initial_point.clone().unwrap_or_else(|| self.problem.initial_point())
    }

    /// Structural checks plus schedule feasibility. Returns the warnings
    /// from feasibility checks that had to be skipped.
    pub fn validate(&self, method: Method) -> Result<Vec<String>> {
        if self.iterations == 0 {
            return Err(invalid("iterations", "must be at least 1"));
        }
        if self.replications == 0 {
            return Err(invalid("replications", "must be at least 1"));
        }
        if self.record_stride == 0 {
            return Err(invalid("record_stride", "must be at least 1"));
        }
        if let Some(r) = self.clip_radius {
            if !(r > 0.0) || !r.is_finite() {
                return Err(invalid("clip_radius", format!("must be positive and finite, got {r}")));
            }
        }
        if let Some(g) = self.growth {
            if !(g > 0.0) || !g.is_finite() {
                return Err(invalid("growth", format!("must be positive and finite, got {g}")));
            }
        }
        let x1 = self.start();
        if x1.len() != self.problem.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.problem.dim(),
                actual: x1.len(),
            });
        }
        if !all_finite(&x1) {
            return Err(invalid("initial_point", "contains a non-finite entry"));
        }
        self.variant.validate()?;
        if self.variant.needs_objective() && !self.problem.exposes_objective() {
            return Err(Error::ObjectiveUnavailable);
        }
        self.schedule
            .check_feasibility(method, self.problem.constants(), self.growth)
    }

    pub fn distribution(&self) -> Result<DirectionDistribution> {
        DirectionDistribution::new(self.directions, self.problem.dim())
    }
}

/// Produces the displacement `x_{k+1} − x_k` for one iteration.
pub(crate) trait Stepper {
    fn advance(&mut self, k: u64, x: &[f64], alpha: f64, rng: &mut StreamRng) -> Result<Vec<f64>>;

    /// The normalized direction `m_k` of the last call, for momentum.
    fn direction(&self) -> Option<&[f64]> {
        None
    }
}

/// Output of one replication, flattened per recorded row.
pub(crate) struct Replication {
    pub gaps: Vec<f64>,
    pub grad_sq: Vec<f64>,
    pub steps: Vec<f64>,
    pub directions: Option<Vec<f64>>,
    /// Iterates at the middle and at the end of the run.
    pub x_mid: Vec<f64>,
    pub x_end: Vec<f64>,
}

pub(crate) struct EngineOutput {
    pub trace: Trace,
    pub replications: Vec<Replication>,
}

fn project(x: &mut [f64], center: &[f64], radius: f64) {
    let dist = norm_sq(&sub(x, center)).sqrt();
    if dist > radius {
        let t = radius / dist;
        for (xi, ci) in x.iter_mut().zip(center) {
            *xi = ci + t * (*xi - ci);
        }
    }
}

fn replicate<S: Stepper>(config: &RunConfig, r: u64, stepper: &mut S) -> Result<Replication> {
    let problem = config.problem.as_ref();
    let d = problem.dim();
    let f_star = problem.constants().f_star;
    let x1 = config.start();
    let f1 = problem.objective(&x1);
    let threshold = DIVERGENCE_FACTOR * f1.abs().max(1.0);
    let n_rec = (config.iterations / config.record_stride) as usize;
    let mid = config.iterations.div_ceil(2);
    let mut out = Replication {
        gaps: Vec::with_capacity(n_rec),
        grad_sq: Vec::with_capacity(n_rec),
        steps: Vec::with_capacity(n_rec * d),
        directions: None,
        x_mid: Vec::new(),
        x_end: Vec::new(),
    };
    let mut x = x1.clone();
    for k in 1..=config.iterations {
        let alpha = config.schedule.alpha(k);
        let mut rng = iteration_rng(config.seed, r, k);
        let diverged = |value: f64| Error::Divergence {
            k,
            replication: r,
            value,
            threshold,
        };
        let disp = match stepper.advance(k, &x, alpha, &mut rng) {
            Ok(v) => v,
            Err(Error::NonFinite(_)) => return Err(diverged(f64::INFINITY)),
            Err(e) => return Err(e),
        };
        axpy(1.0, &disp, &mut x);
        if let Some(radius) = config.clip_radius {
            project(&mut x, &x1, radius);
        }
        if !all_finite(&x) {
            return Err(diverged(f64::INFINITY));
        }
        if k == mid {
            out.x_mid = x.clone();
        }
        if k % config.record_stride == 0 {
            let fx = problem.objective(&x);
            if !fx.is_finite() || fx > threshold {
                return Err(diverged(fx));
            }
            out.gaps.push(fx - f_star.unwrap_or(0.0));
            out.grad_sq.push(norm_sq(&problem.reference_gradient(&x)));
            out.steps.extend_from_slice(&disp);
            if let Some(m) = stepper.direction() {
                out.directions.get_or_insert_with(|| Vec::with_capacity(n_rec * d)).extend_from_slice(m);
            }
        }
    }
    out.x_end = x;
    Ok(out)
}

/// Runs all replications in parallel and reduces them in replication order.
pub(crate) fn run_engine<S, F>(config: &RunConfig, method: &str, warnings: Vec<String>, make: F) -> Result<EngineOutput>
where
    S: Stepper,
    F: Fn() -> S + Sync,
{
    let started = Instant::now();
    let problem = config.problem.as_ref();
    let d = problem.dim();
    let reps: Vec<Replication> = (0..config.replications)
        .into_par_iter()
        .map(|r| replicate(config, r, &mut make()))
        .collect::<Result<_>>()?;

    let n_rec = (config.iterations / config.record_stride) as usize;
    let rf = config.replications as f64;
    let mut rows = Vec::with_capacity(n_rec);
    let mut step_stats = Vec::with_capacity(n_rec);
    for i in 0..n_rec {
        let k = (i as u64 + 1) * config.record_stride;
        let mut gap = 0.0;
        let mut g2 = 0.0;
        let mut mean_step = vec![0.0; d];
        let mut second = 0.0;
        for rep in &reps {
            gap += rep.gaps[i];
            g2 += rep.grad_sq[i];
            let s = &rep.steps[i * d..(i + 1) * d];
            axpy(1.0, s, &mut mean_step);
            second += norm_sq(s);
        }
        mean_step.iter_mut().for_each(|v| *v /= rf);
        let var_mk = match reps.first().and_then(|r| r.directions.as_ref()) {
            Some(_) if reps.len() >= 2 => {
                let mut mean = vec![0.0; d];
                for rep in &reps {
                    axpy(1.0 / rf, &rep.directions.as_ref().unwrap()[i * d..(i + 1) * d], &mut mean);
                }
                let ss: f64 = reps
                    .iter()
                    .map(|rep| norm_sq(&sub(&rep.directions.as_ref().unwrap()[i * d..(i + 1) * d], &mean)))
                    .sum();
                Some(ss / (rf - 1.0))
            }
            _ => None,
        };
        rows.push(TraceRow {
            k,
            alpha: config.schedule.alpha(k),
            mean_gap: gap / rf,
            mean_grad_sq: g2 / rf,
            var_mk,
            replications: config.replications,
        });
        step_stats.push(StepStats {
            mean: mean_step,
            second_moment: second / rf,
        });
    }

    let x1 = config.start();
    let f_star = problem.constants().f_star;
    let meta = TraceMeta {
        problem: problem.name().to_string(),
        method: method.to_string(),
        seed: config.seed,
        gap_relative: f_star.is_some(),
        initial_gap: problem.objective(&x1) - f_star.unwrap_or(0.0),
        initial_grad_sq: norm_sq(&problem.reference_gradient(&x1)),
        warnings,
        diagnostics: Default::default(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    Ok(EngineOutput {
        trace: Trace {
            rows,
            step_stats,
            meta,
        },
        replications: reps,
    })
}

struct PlainStepper<'a> {
    config: &'a RunConfig,
    dist: DirectionDistribution,
}

impl Stepper for PlainStepper<'_> {
    fn advance(&mut self, _k: u64, x: &[f64], alpha: f64, rng: &mut StreamRng) -> Result<Vec<f64>> {
        stochastic_step(self.config.variant, self.config.problem.as_ref(), x, alpha, &self.dist, rng)
    }
}

/// Runs plain SGFD for `config.iterations` steps and
/// `config.replications` independent replications.
pub fn run_sgfd(config: &RunConfig) -> Result<Trace> {
    if config.clip_radius.is_some() {
        return Err(invalid("clip_radius", "iterate clipping is only available for momentum runs"));
    }
    let warnings = config.validate(Method::Plain)?;
    let dist = config.distribution()?;
    let out = run_engine(config, "sgfd", warnings, || PlainStepper {
        config,
        dist,
    })?;
    Ok(out.trace)
}

struct SgdStepper<'a> {
    problem: &'a dyn StochasticProblem,
}

impl Stepper for SgdStepper<'_> {
    fn advance(&mut self, _k: u64, x: &[f64], alpha: f64, rng: &mut StreamRng) -> Result<Vec<f64>> {
        let xi = self.problem.draw_sample(rng);
        let mut g = self.problem.sample_gradient(x, xi);
        g.iter_mut().for_each(|v| *v *= -alpha);
        if !all_finite(&g) {
            return Err(Error::NonFinite("sample gradient".into()));
        }
        Ok(g)
    }
}

/// Plain stochastic gradient descent `x_{k+1} = x_k − α_k ∇f(x_k, ξ_k)`.
/// A comparison curve only; it shares schedules and the trace format.
pub fn run_reference_sgd(config: &RunConfig) -> Result<Trace> {
    if config.clip_radius.is_some() {
        return Err(invalid("clip_radius", "iterate clipping is only available for momentum runs"));
    }
    let warnings = config.validate(Method::Plain)?;
    let out = run_engine(config, "reference-sgd", warnings, || SgdStepper {
        problem: config.problem.as_ref(),
    })?;
    Ok(out.trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::Quadratic;

    fn quad(noise: f64) -> Arc<dyn StochasticProblem> {
        Arc::new(Quadratic::with_condition(10, 10.0, noise, 1).unwrap())
    }

    fn feasible(p: &Arc<dyn StochasticProblem>, beta_l: f64) -> StepsizeSchedule {
        let c = p.constants();
        let beta = beta_l / c.strong_convexity.unwrap();
        StepsizeSchedule::robbins_monro_matched(beta, c.lipschitz.unwrap(), 3.0).unwrap()
    }

    #[test]
    fn single_iteration_is_one_step() {
        let p = quad(0.4);
        let s = feasible(&p, 2.0);
        let cfg = RunConfig::new(p.clone(), s).iterations(1).seed(5);
        let t = run_sgfd(&cfg).unwrap();
        let x1 = p.initial_point();
        let dist = DirectionDistribution::uniform(10).unwrap();
        let step = stochastic_step(StepVariant::SingleSample, p.as_ref(), &x1, s.alpha(1), &dist, &mut iteration_rng(5, 0, 1)).unwrap();
        let x2: Vec<f64> = x1.iter().zip(&step).map(|(a, b)| a + b).collect();
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.rows[0].mean_gap.to_bits(), p.objective(&x2).to_bits());
        assert_eq!(t.step_stats[0].mean, step);
    }

    #[test]
    fn infeasible_schedule_rejected_before_running() {
        let p = quad(0.0);
        let s = feasible(&p, 0.9);
        let err = run_sgfd(&RunConfig::new(p, s)).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)), "{err}");
    }

    #[test]
    fn identical_config_identical_trace() {
        let p = quad(0.4);
        let cfg = RunConfig::new(p.clone(), feasible(&p, 2.0))
            .iterations(200)
            .replications(4)
            .record_stride(10)
            .seed(9);
        let a = run_sgfd(&cfg).unwrap();
        let b = run_sgfd(&cfg).unwrap();
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.to_csv_string().unwrap(), b.to_csv_string().unwrap());
        let c = run_sgfd(&cfg.clone().seed(10)).unwrap();
        assert_ne!(a.rows, c.rows);
    }

    #[test]
    fn rows_follow_stride() {
        let p = quad(0.1);
        let t = run_sgfd(&RunConfig::new(p.clone(), feasible(&p, 2.0)).iterations(100).record_stride(7)).unwrap();
        let ks: Vec<u64> = t.rows.iter().map(|r| r.k).collect();
        assert_eq!(ks, (1..=14).map(|i| 7 * i).collect::<Vec<_>>());
        assert!(t.rows.iter().all(|r| r.var_mk.is_none() && r.replications == 1));
    }

    #[test]
    fn gap_decreases_on_average() {
        let p = quad(0.4);
        let t = run_sgfd(&RunConfig::new(p.clone(), feasible(&p, 2.0)).iterations(2000).replications(8).record_stride(100)).unwrap();
        assert!(t.last().unwrap().mean_gap < 0.1 * t.meta.initial_gap);
        assert!(t.meta.gap_relative);
    }

    #[test]
    fn divergence_is_reported_with_k() {
        let p = quad(0.0);
        // far past the stability limit, unchecked because the growth constant is tiny
        let cfg = RunConfig::new(p, StepsizeSchedule::fixed(3.0).unwrap())
            .growth(Some(1e-3))
            .iterations(10_000);
        match run_sgfd(&cfg) {
            Err(Error::Divergence { k, threshold, .. }) => {
                assert!(k < 10_000);
                assert!(threshold >= DIVERGENCE_FACTOR);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn reference_sgd_converges() {
        let p = quad(0.4);
        let cfg = RunConfig::new(p.clone(), feasible(&p, 2.0)).iterations(2000).replications(4).record_stride(100);
        let t = run_reference_sgd(&cfg).unwrap();
        assert!(t.last().unwrap().mean_gap < 0.1 * t.meta.initial_gap);
        assert_eq!(t.meta.method, "reference-sgd");
    }

    #[test]
    fn validation_errors() {
        let p = quad(0.0);
        let s = feasible(&p, 2.0);
        assert!(run_sgfd(&RunConfig::new(p.clone(), s).iterations(0)).is_err());
        assert!(run_sgfd(&RunConfig::new(p.clone(), s).replications(0)).is_err());
        assert!(run_sgfd(&RunConfig::new(p.clone(), s).record_stride(0)).is_err());
        assert!(run_sgfd(&RunConfig::new(p.clone(), s).clip_radius(Some(1.0))).is_err());
        assert!(matches!(
            run_sgfd(&RunConfig::new(p, s).initial_point(vec![0.0; 3])),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
