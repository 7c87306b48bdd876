//! Bound sequences, rate fits and step-moment estimates.

mod bounds;
mod moments;
mod rates;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::schedule::StepsizeSchedule;
use crate::trace::Trace;

pub use bounds::{
    asymptotic_a_constant, asymptotic_b_constant, bound_a, bound_b, bound_sequence, fixed_bound_a, fixed_bound_b,
    fixed_limit_b, inverse_square_bound_a, inverse_square_limit_a, BoundParams, BoundSequence,
};
pub use moments::{
    estimate_step_moments, fit_variance_model, growth_constant, noise_constant, probe_variance_model, StepMomentReport, VarianceModel,
    MIN_SAMPLES,
};
pub use rates::{default_window, fit_power_law, fit_rate, fit_variance_rate, RateFit, MAX_DROPPED_FRACTION, MIN_POINTS};

/// Outcome of comparing a trace against `A_k Δ₁ + (L M_d/2) B_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeCheck {
    /// Fraction of recorded rows at or under the envelope.
    pub fraction: f64,
    pub points: usize,
    pub m_d: f64,
    /// Up to ten `k` where the envelope was exceeded.
    pub violations: Vec<u64>,
}

/// Checks every row `k` (which holds `E[F(x_{k+1})] − F*`) against the
/// envelope built from `schedule`, the moduli `l` and `L`, and `M_d`.
pub fn envelope_check(trace: &Trace, schedule: &StepsizeSchedule, l: f64, big_l: f64, m_d: f64) -> Result<EnvelopeCheck> {
    if !trace.meta.gap_relative {
        return Err(Error::Fit("envelope check needs gaps measured against a known F*".into()));
    }
    if !(big_l > 0.0) || !(m_d >= 0.0) {
        return Err(invalid("big_l", "L must be positive and M_d non-negative"));
    }
    let k_max = match trace.last() {
        Some(r) => r.k,
        None => return Err(Error::Fit("trace has no rows".into())),
    };
    let seq = bound_sequence(schedule, l, k_max)?;
    let mut inside = 0;
    let mut violations = Vec::new();
    for row in &trace.rows {
        let i = row.k as usize - 1;
        let bound = seq.a[i] * trace.meta.initial_gap + 0.5 * big_l * m_d * seq.b[i];
        if row.mean_gap <= bound {
            inside += 1;
        } else if violations.len() < 10 {
            violations.push(row.k);
        }
    }
    Ok(EnvelopeCheck {
        fraction: inside as f64 / trace.rows.len() as f64,
        points: trace.rows.len(),
        m_d,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{TraceMeta, TraceRow};

    #[test]
    fn envelope_counts_rows_under_the_bound() {
        let schedule = StepsizeSchedule::Fixed { alpha: 0.1 };
        let rows = (1..=20)
            .map(|k| TraceRow {
                k,
                alpha: 0.1,
                mean_gap: if k == 5 { 100.0 } else { 0.85f64.powi(k as i32) },
                mean_grad_sq: 0.0,
                var_mk: None,
                replications: 1,
            })
            .collect();
        let t = Trace {
            rows,
            meta: TraceMeta {
                gap_relative: true,
                initial_gap: 1.0,
                ..Default::default()
            },
            ..Default::default()
        };
        let c = envelope_check(&t, &schedule, 1.0, 1.0, 0.0).unwrap();
        assert_eq!(c.points, 20);
        assert_eq!(c.violations, vec![5]);
        assert!((c.fraction - 0.95).abs() < 1e-12);
        let mut unknown = t.clone();
        unknown.meta.gap_relative = false;
        assert!(envelope_check(&unknown, &schedule, 1.0, 1.0, 0.0).is_err());
    }
}
